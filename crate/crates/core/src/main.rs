fn main() {
    std::process::exit(lambda_omega::cli::cli_dispatch(std::env::args_os()));
}
