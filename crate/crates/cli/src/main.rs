fn main() {
    std::process::exit(ordrd_cli::main_with(std::env::args_os()));
}
