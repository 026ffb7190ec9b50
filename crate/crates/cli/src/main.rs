fn main() {
    std::process::exit(nbrdid_cli::run(std::env::args_os()));
}
