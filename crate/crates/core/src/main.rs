fn main() {
    std::process::exit(nocsim::cli::main_with_args(std::env::args_os()));
}
