fn main() {
    std::process::exit(dpmon::cli::main_with_args(std::env::args().collect()));
}
