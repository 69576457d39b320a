fn main() {
    std::process::exit(semaug::cli::dispatch(std::env::args().collect()));
}
