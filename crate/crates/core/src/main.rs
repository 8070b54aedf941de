fn main() {
    std::process::exit(dgap::cli::main_with_args(std::env::args_os()));
}
