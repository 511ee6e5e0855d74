fn main() {
    std::process::exit(ftplan::cli::run(std::env::args_os()));
}
