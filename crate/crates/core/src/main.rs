fn main() {
    std::process::exit(metrise::cli::run(std::env::args_os()));
}
