fn main() {
    std::process::exit(crt_core::cli::run(std::env::args_os()));
}
