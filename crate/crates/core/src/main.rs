fn main() {
    std::process::exit(aeseg::cli::run(std::env::args_os()));
}
