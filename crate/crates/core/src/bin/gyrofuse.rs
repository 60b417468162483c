fn main() {
    std::process::exit(gyrofuse::cli::main_with_args(std::env::args_os()));
}
