fn main() {
    std::process::exit(dualflow::cli::main_with(std::env::args_os()));
}
