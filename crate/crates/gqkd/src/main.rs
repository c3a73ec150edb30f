fn main() {
    std::process::exit(gqkd::cli::cli_main());
}
