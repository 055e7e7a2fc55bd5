fn main() {
    std::process::exit(fasa::tooling::cli::run(std::env::args_os()));
}
