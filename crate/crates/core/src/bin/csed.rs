fn main() {
    std::process::exit(csed::cli::run_from_args(std::env::args_os()));
}
