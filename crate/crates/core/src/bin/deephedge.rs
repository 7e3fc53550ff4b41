fn main() {
    std::process::exit(deephedge::cli::main_with_args(std::env::args_os()));
}
