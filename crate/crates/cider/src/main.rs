fn main() {
    std::process::exit(cider::cli::main_with_args(std::env::args_os()));
}
