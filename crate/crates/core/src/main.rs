fn main() {
    std::process::exit(rooflab::cli::run(std::env::args_os()));
}
