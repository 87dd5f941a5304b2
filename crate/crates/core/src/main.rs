fn main() {
    std::process::exit(podprov::cli::main_with_args(std::env::args_os()));
}
