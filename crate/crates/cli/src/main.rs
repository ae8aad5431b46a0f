fn main() {
    std::process::exit(edgeflow_cli::run(std::env::args_os()));
}
