fn main() {
    std::process::exit(conceptcf::cli::run(std::env::args_os()));
}
