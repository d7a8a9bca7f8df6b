fn main() {
    std::process::exit(qgfbsde::cli::run(std::env::args().skip(1)));
}
