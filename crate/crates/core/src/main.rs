fn main() {
    std::process::exit(opindex::cli::main_with_args(std::env::args_os()));
}
