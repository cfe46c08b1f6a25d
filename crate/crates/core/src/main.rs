fn main() {
    std::process::exit(kvcrush::cli::run(std::env::args_os()));
}
