fn main() {
    std::process::exit(mixplap::cli::run(std::env::args().collect()));
}
