fn main() {
    std::process::exit(rpdiff::cli::main_with_args(std::env::args_os()));
}
