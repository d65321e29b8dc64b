fn main() {
    std::process::exit(trajcurate_cli::run(std::env::args_os()));
}
