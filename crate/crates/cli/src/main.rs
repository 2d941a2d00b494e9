fn main() {
    std::process::exit(pflat_cli::dispatch(std::env::args().collect()));
}
