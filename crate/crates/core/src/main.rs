fn main() {
    std::process::exit(egoworld::cli::main_with_args(std::env::args_os()));
}
