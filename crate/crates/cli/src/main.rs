fn main() {
    std::process::exit(netstrat_cli::run(std::env::args_os()));
}
