fn main() {
    std::process::exit(critjump::cli::main_with_args(std::env::args_os()));
}
