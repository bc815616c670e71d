fn main() {
    std::process::exit(ellrs::cli::run(std::env::args_os()));
}
