fn main() {
    std::process::exit(inceptnet_cli::run(std::env::args_os()));
}
