fn main() {
    std::process::exit(infector_cli::main_with_args(std::env::args_os()));
}
