fn main() {
    std::process::exit(poisfactor::cli::main_with_args(std::env::args_os()));
}
