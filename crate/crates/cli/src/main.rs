fn main() {
    std::process::exit(mfpca_cli::run_from_args(std::env::args_os()));
}
