fn main() {
    std::process::exit(gazeshare::cli::run(std::env::args_os()));
}
