fn main() {
    std::process::exit(global_score::cli::main_with_args(std::env::args_os()));
}
