fn main() {
    std::process::exit(vinseg::cli::run(std::env::args_os()));
}
