fn main() {
    std::process::exit(trigbound_cli::cli_main(std::env::args_os()));
}
