fn main() {
    std::process::exit(btlemap::cli::run(std::env::args_os()));
}
