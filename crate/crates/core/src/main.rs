fn main() {
    std::process::exit(phasetop::cli::main_with_args(std::env::args_os()));
}
