fn main() {
    std::process::exit(sgir_cli::run(std::env::args_os()));
}
