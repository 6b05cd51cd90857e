fn main() {
    std::process::exit(panelfill::cli::run(std::env::args_os()));
}
