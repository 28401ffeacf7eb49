fn main() {
    std::process::exit(emco::cli::run(std::env::args_os()));
}
