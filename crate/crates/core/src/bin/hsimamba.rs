fn main() {
    std::process::exit(hsimamba::cli::run(std::env::args_os()));
}
