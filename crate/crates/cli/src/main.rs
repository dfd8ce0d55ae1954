fn main() {
    let code = casql_cli::main_with_args(std::env::args_os());
    std::process::exit(code);
}
