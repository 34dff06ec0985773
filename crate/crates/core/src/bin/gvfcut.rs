fn main() {
    std::process::exit(gvfcut::harness::cli::run(std::env::args_os()));
}
