fn main() {
    std::process::exit(dyadic_tents::cli::main_with_args(std::env::args_os()));
}
