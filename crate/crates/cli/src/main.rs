fn main() {
    std::process::exit(qsn_cli::run_command(std::env::args_os()));
}
