fn main() {
    std::process::exit(pyformer_cli::run(std::env::args_os()));
}
