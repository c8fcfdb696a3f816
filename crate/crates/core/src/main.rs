fn main() {
    let code = cardioprop::cli::run(std::env::args_os());
    std::process::exit(code);
}
