fn main() {
    std::process::exit(lipbnb_cli::run(std::env::args_os()));
}
