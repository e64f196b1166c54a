fn main() {
    std::process::exit(coffee_core::cli::run_cli(std::env::args_os()));
}
