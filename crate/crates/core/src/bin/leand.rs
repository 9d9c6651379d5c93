fn main() {
    std::process::exit(leand::cli::run(std::env::args_os()));
}
