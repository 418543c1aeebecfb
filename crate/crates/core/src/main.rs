fn main() {
    std::process::exit(cpga::cli::run(std::env::args_os()));
}
