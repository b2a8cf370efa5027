fn main() {
    std::process::exit(glr_cusum::cli::run(std::env::args_os()));
}
