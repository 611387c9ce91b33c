fn main() {
    std::process::exit(relaylab_cli::run(std::env::args_os()));
}
