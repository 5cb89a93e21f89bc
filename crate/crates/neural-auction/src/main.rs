fn main() {
    std::process::exit(neural_auction::cli::run(std::env::args_os()));
}
