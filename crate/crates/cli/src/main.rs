fn main() {
    std::process::exit(dforge_cli::run(std::env::args_os()));
}
