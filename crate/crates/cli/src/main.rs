fn main() {
    std::process::exit(conetax_cli::main_with_args(std::env::args_os()));
}
