fn main() {
    std::process::exit(bear::cli::run(std::env::args_os()));
}
