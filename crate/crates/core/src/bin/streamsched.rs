fn main() {
    std::process::exit(streamsched::cli::main_with_args(std::env::args_os()));
}
