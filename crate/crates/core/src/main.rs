fn main() {
    std::process::exit(fvtb::cli::run(std::env::args_os()));
}
