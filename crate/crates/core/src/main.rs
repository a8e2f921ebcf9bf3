fn main() {
    std::process::exit(wildnerf::cli::run_from(std::env::args_os()));
}
