fn main() {
    std::process::exit(biclir::cli::run(std::env::args_os()));
}
