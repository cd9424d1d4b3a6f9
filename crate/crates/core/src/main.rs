fn main() {
    std::process::exit(san::cli::run(std::env::args_os()));
}
