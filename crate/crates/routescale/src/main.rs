fn main() {
    std::process::exit(routescale::cli::main_with_args(std::env::args_os()));
}
