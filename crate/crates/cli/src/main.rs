fn main() {
    std::process::exit(strokegan_cli::run(std::env::args_os()));
}
