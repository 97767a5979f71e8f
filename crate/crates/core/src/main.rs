fn main() {
    std::process::exit(dfm_core::cli::run(std::env::args().collect()));
}
