fn main() {
    std::process::exit(carleman_lab::cli::run(std::env::args_os()));
}
