fn main() {
    std::process::exit(ctxasr::cli::run_from(std::env::args_os()));
}
