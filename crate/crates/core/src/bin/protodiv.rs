fn main() {
    std::process::exit(protodiv::cli::main_with_args(std::env::args_os()));
}
