fn main() {
    std::process::exit(clusterate::cli::run(std::env::args_os()));
}
