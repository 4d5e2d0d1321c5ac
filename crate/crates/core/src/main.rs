fn main() {
    std::process::exit(specsyn::cli::run(std::env::args_os()));
}
