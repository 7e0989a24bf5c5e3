fn main() {
    std::process::exit(aplab::cli::run(std::env::args_os()));
}
