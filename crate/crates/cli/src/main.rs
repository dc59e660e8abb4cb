fn main() {
    std::process::exit(stmcheck_cli::cli_main(std::env::args_os()));
}
