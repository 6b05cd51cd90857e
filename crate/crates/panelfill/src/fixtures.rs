//! Synthetic stand-in for a calibrated returns panel.

use nalgebra::DMatrix;
use panelfill_core::rng::{stream, SubstreamRng};
use rand::Rng;
use rand_distr::StandardNormal;

pub const CALIBRATED_T: usize = 348;
pub const CALIBRATED_N: usize = 339;
pub const CALIBRATED_SEED: u64 = 348_339;

/// Share of each series' variance carried by each of the five factors.
pub const CALIBRATED_SHARES: [f64; 5] = [0.262, 0.041, 0.038, 0.027, 0.021];

/// Complete `t x n` monthly-return panel in which five factors carry exactly
/// [`CALIBRATED_SHARES`] of every series' population variance. The first factor loads
/// positively on all series (a market factor), the others with random signs; per-series
/// volatility lies between 6% and 14%.
pub fn synthetic_calibrated_panel(t: usize, n: usize, seed: u64) -> DMatrix<f64> {
    let k = CALIBRATED_SHARES.len();
    let mut frng = SubstreamRng::new(seed, &[stream::FACTORS]);
    let factors = DMatrix::from_fn(t, k, |_, _| frng.sample::<f64, _>(StandardNormal));
    let mut lrng = SubstreamRng::new(seed, &[stream::AUXILIARY]);
    let mut loadings = DMatrix::zeros(n, k);
    let mut idio_sd = vec![0.0; n];
    let idio_share = 1.0 - CALIBRATED_SHARES.iter().sum::<f64>();
    for i in 0..n {
        let vol: f64 = lrng.gen_range(0.06..0.14);
        let v = vol * vol;
        for (q, s) in CALIBRATED_SHARES.iter().enumerate() {
            let sign = if q == 0 || lrng.gen::<bool>() { 1.0 } else { -1.0 };
            loadings[(i, q)] = sign * (s * v).sqrt();
        }
        idio_sd[i] = (idio_share * v).sqrt();
    }
    let mut erng = SubstreamRng::new(seed, &[stream::ERRORS]);
    let errors = DMatrix::from_fn(t, n, |_, i| idio_sd[i] * erng.sample::<f64, _>(StandardNormal));
    factors * loadings.transpose() + errors
}
