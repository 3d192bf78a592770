fn main() {
    std::process::exit(statphase::cli::main_with_args(std::env::args_os()));
}
