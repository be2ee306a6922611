fn main() {
    std::process::exit(teunroll::cli::main_with_args(std::env::args_os()));
}
