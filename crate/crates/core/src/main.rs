fn main() {
    std::process::exit(tricomp::cli::run_from(std::env::args_os()));
}
