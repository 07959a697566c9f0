fn main() {
    std::process::exit(hrvem::cli::main_with_args(std::env::args_os()));
}
