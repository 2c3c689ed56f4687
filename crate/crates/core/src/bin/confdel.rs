fn main() {
    std::process::exit(confdel::cli::main_with_args(std::env::args_os()));
}
