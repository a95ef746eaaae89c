fn main() {
    std::process::exit(cgnsda::cli::main_with_args(std::env::args_os()));
}
