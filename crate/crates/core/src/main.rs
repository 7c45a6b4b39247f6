fn main() {
    std::process::exit(regprobe::harness::cli::main_with_args(std::env::args_os()));
}
