fn main() {
    std::process::exit(evyawn::cli::main_with_args(std::env::args_os()));
}
