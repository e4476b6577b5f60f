fn main() {
    std::process::exit(dfosr_cli::run(std::env::args_os()));
}
