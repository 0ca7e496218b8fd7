fn main() {
    std::process::exit(magdc::cli::main_with_args(std::env::args_os()));
}
