fn main() {
    std::process::exit(amvis::cli::run(std::env::args_os()));
}
