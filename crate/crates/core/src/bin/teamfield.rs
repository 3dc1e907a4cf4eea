fn main() {
    std::process::exit(teamfield::cli::run(std::env::args_os()));
}
