fn main() {
    std::process::exit(flint_cli::run(std::env::args_os()));
}
