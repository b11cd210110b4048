fn main() {
    std::process::exit(amfuse::cli::run(std::env::args_os()));
}
