fn main() {
    std::process::exit(sdqos::cli::main_with_args(std::env::args_os()));
}
