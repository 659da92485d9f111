fn main() {
    std::process::exit(voi_core::cli::main_with_args(std::env::args_os()));
}
