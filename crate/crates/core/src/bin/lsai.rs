fn main() {
    std::process::exit(lsai::cli::run(std::env::args_os()));
}
