fn main() {
    std::process::exit(fedpqos_cli::main_with_args(std::env::args_os()));
}
