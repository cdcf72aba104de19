fn main() {
    std::process::exit(grassdim::cli::run(std::env::args_os()));
}
