fn main() {
    std::process::exit(kappa_lab::cli::run(std::env::args_os()));
}
