fn main() {
    std::process::exit(imfuse::cli::run(std::env::args_os()));
}
