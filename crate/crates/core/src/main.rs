fn main() {
    std::process::exit(gcvit::cli::main_with_args(std::env::args_os()));
}
