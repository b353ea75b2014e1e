fn main() {
    let code = decel_lab_cli::run(std::env::args_os());
    std::process::exit(code);
}
