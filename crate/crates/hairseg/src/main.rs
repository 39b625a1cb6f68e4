fn main() {
    std::process::exit(hairseg::cli::run(std::env::args_os()));
}
