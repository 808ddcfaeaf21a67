fn main() {
    std::process::exit(dstsa::cli::main_with_args(std::env::args_os()));
}
