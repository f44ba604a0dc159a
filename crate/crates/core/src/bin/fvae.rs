fn main() {
    std::process::exit(fvae::cli::run(std::env::args_os()));
}
