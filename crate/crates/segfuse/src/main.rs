fn main() {
    std::process::exit(segfuse::cli::run(std::env::args_os()));
}
