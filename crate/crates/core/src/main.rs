fn main() {
    std::process::exit(dualpool::cli::run(std::env::args_os()));
}
