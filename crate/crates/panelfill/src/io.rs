//! CSV panels, covariance files and atomic output.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use panelfill_core::PanelMatrix;

use crate::error::{AppError, AppResult};

pub const DEFAULT_NA_TOKENS: [&str; 3] = ["", "NA", "NaN"];

const COV_MAGIC: &[u8; 8] = b"PFILLCOV";
const COV_VERSION: u32 = 1;

/// Whether the first CSV column holds row labels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum IndexColumn {
    /// Treat the first column as labels when its header is empty or any of its cells is
    /// not a number.
    #[default]
    Auto,
    Present,
    Absent,
}

#[derive(Clone, Debug)]
pub struct CsvOptions {
    pub na_tokens: Vec<String>,
    pub index: IndexColumn,
}

impl Default for CsvOptions {
    fn default() -> Self {
        CsvOptions {
            na_tokens: DEFAULT_NA_TOKENS.iter().map(|s| s.to_string()).collect(),
            index: IndexColumn::Auto,
        }
    }
}

/// A panel read from CSV together with the layout needed to write it back.
#[derive(Clone, Debug)]
pub struct CsvPanel {
    /// Header cell above the index column, when there is one.
    pub index_header: Option<String>,
    /// Row labels, when the file has an index column.
    pub index: Option<Vec<String>>,
    pub names: Vec<String>,
    /// Data cells as they appeared in the file, `raw[t][i]`.
    pub raw: Vec<Vec<String>>,
    pub panel: PanelMatrix,
}

fn parse_number(s: &str) -> Option<f64> {
    s.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}

fn is_na(s: &str, tokens: &[String]) -> bool {
    let s = s.trim();
    tokens.iter().any(|t| t == s)
}

pub fn read_panel(path: &Path, options: &CsvOptions) -> AppResult<CsvPanel> {
    let file = fs::File::open(path).map_err(|e| AppError::io(path, e))?;
    read_panel_from(file, options).map_err(|e| match e {
        AppError::Data(msg) => AppError::Data(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn read_panel_from<R: Read>(reader: R, options: &CsvOptions) -> AppResult<CsvPanel> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| AppError::Data(format!("csv header: {e}")))?
        .iter()
        .map(|s| s.to_string())
        .collect();
    let mut rows: Vec<Vec<String>> = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| AppError::Data(format!("csv row {}: {e}", k + 2)))?;
        rows.push(rec.iter().map(|s| s.to_string()).collect());
    }
    if header.is_empty() || rows.is_empty() {
        return Err(AppError::Data("panel has no data rows".into()));
    }
    let has_index = match options.index {
        IndexColumn::Present => true,
        IndexColumn::Absent => false,
        IndexColumn::Auto => {
            header[0].trim().is_empty()
                || rows
                    .iter()
                    .any(|row| !is_na(&row[0], &options.na_tokens) && parse_number(&row[0]).is_none())
        }
    };
    let skip = usize::from(has_index);
    let n = header.len() - skip;
    if n == 0 {
        return Err(AppError::Data("panel has no series columns".into()));
    }
    let t = rows.len();
    let mut values = DMatrix::zeros(t, n);
    let mut mask = DMatrix::from_element(t, n, false);
    let mut raw = Vec::with_capacity(t);
    let mut index = Vec::with_capacity(t);
    for (s, row) in rows.into_iter().enumerate() {
        if has_index {
            index.push(row[0].clone());
        }
        let cells: Vec<String> = row.into_iter().skip(skip).collect();
        for (i, cell) in cells.iter().enumerate() {
            if is_na(cell, &options.na_tokens) {
                continue;
            }
            let v = parse_number(cell).ok_or_else(|| {
                AppError::Data(format!("row {} column {}: not a number: {cell:?}", s + 2, i + 1 + skip))
            })?;
            values[(s, i)] = v;
            mask[(s, i)] = true;
        }
        raw.push(cells);
    }
    let panel = PanelMatrix::new(values, mask)?;
    Ok(CsvPanel {
        index_header: has_index.then(|| header[0].clone()),
        index: has_index.then_some(index),
        names: header[skip..].to_vec(),
        raw,
        panel,
    })
}

/// Shortest representation that parses back to the same `f64`.
pub fn format_number(v: f64) -> String {
    format!("{v:?}")
}

impl CsvPanel {
    pub fn t(&self) -> usize {
        self.panel.t()
    }

    pub fn n(&self) -> usize {
        self.panel.n()
    }

    /// CSV text with the input's header and index; observed cells keep their original
    /// text when `keep_observed` is set, everything else is formatted from `values`.
    pub fn render(&self, values: &DMatrix<f64>, keep_observed: bool) -> AppResult<Vec<u8>> {
        let mut wtr = csv::Writer::from_writer(Vec::new());
        let mut header = Vec::with_capacity(self.n() + 1);
        if let Some(h) = &self.index_header {
            header.push(h.clone());
        }
        header.extend(self.names.iter().cloned());
        wtr.write_record(&header).map_err(csv_err)?;
        for s in 0..self.t() {
            let mut rec = Vec::with_capacity(header.len());
            if let Some(index) = &self.index {
                rec.push(index[s].clone());
            }
            for i in 0..self.n() {
                if keep_observed && self.panel.is_observed(s, i) {
                    rec.push(self.raw[s][i].clone());
                } else {
                    rec.push(format_number(values[(s, i)]));
                }
            }
            wtr.write_record(&rec).map_err(csv_err)?;
        }
        wtr.into_inner().map_err(|e| AppError::Data(e.to_string()))
    }
}

fn csv_err(e: csv::Error) -> AppError {
    AppError::Data(format!("csv: {e}"))
}

/// Square matrix with row and column labels.
pub fn render_labeled_matrix(names: &[String], m: &DMatrix<f64>) -> AppResult<Vec<u8>> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    let mut header = vec![String::new()];
    header.extend(names.iter().cloned());
    wtr.write_record(&header).map_err(csv_err)?;
    for (r, name) in names.iter().enumerate() {
        let mut rec = vec![name.clone()];
        rec.extend((0..m.ncols()).map(|c| format_number(m[(r, c)])));
        wtr.write_record(&rec).map_err(csv_err)?;
    }
    wtr.into_inner().map_err(|e| AppError::Data(e.to_string()))
}

/// Read a labeled square matrix written by [`render_labeled_matrix`].
pub fn read_labeled_matrix(path: &Path) -> AppResult<(Vec<String>, DMatrix<f64>)> {
    let panel = read_panel(
        path,
        &CsvOptions {
            na_tokens: Vec::new(),
            index: IndexColumn::Present,
        },
    )?;
    if panel.t() != panel.n() {
        return Err(AppError::Data(format!("{}: matrix is not square", path.display())));
    }
    Ok((panel.names, panel.panel.values().clone()))
}

/// `PFILLCOV`, version and dimension as little-endian `u32`, then the entries column-major
/// as little-endian `f64`.
pub fn encode_cov_binary(m: &DMatrix<f64>) -> Vec<u8> {
    let n = m.nrows();
    let mut out = Vec::with_capacity(16 + 8 * n * n);
    out.extend_from_slice(COV_MAGIC);
    out.extend_from_slice(&COV_VERSION.to_le_bytes());
    out.extend_from_slice(&(n as u32).to_le_bytes());
    for v in m.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_cov_binary(bytes: &[u8]) -> AppResult<DMatrix<f64>> {
    let bad = |msg: &str| AppError::Data(format!("covariance file: {msg}"));
    if bytes.len() < 16 || &bytes[..8] != COV_MAGIC {
        return Err(bad("bad magic"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != COV_VERSION {
        return Err(bad("unsupported version"));
    }
    let n = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let body = &bytes[16..];
    if body.len() != 8 * n * n {
        return Err(bad("truncated body"));
    }
    let data = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    Ok(DMatrix::from_iterator(n, n, data))
}

/// Write through a temporary file in the target directory, then rename over the target.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> AppResult<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| AppError::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| AppError::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| AppError::io(path, e))?;
    tmp.persist(path).map_err(|e| AppError::io(path, e.error))?;
    Ok(())
}

/// Single numeric column (optionally with an index column) as a vector.
pub fn read_series(path: &Path, options: &CsvOptions) -> AppResult<(Vec<String>, DMatrix<f64>)> {
    let panel = read_panel(path, options)?;
    if !panel.panel.is_complete() {
        return Err(AppError::Data(format!("{}: missing values not allowed", path.display())));
    }
    Ok((panel.names, panel.panel.values().clone()))
}
