fn main() {
    std::process::exit(duca::cli::run(std::env::args_os()));
}
