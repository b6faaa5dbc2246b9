fn main() {
    std::process::exit(bioid::cli::run(std::env::args_os()));
}
