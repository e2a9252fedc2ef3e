fn main() {
    std::process::exit(ovsw::cli::run(std::env::args_os()));
}
