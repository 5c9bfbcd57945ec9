fn main() {
    std::process::exit(kneesight_cli::run(std::env::args_os()));
}
