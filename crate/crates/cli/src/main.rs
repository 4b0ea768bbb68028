fn main() {
    std::process::exit(dimat_cli::main_with_args(std::env::args_os()));
}
