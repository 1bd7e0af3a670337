fn main() {
    std::process::exit(awe::cli::main_with_args(std::env::args_os()));
}
