fn main() {
    std::process::exit(varmap::cli::run_from(std::env::args_os()));
}
