fn main() {
    std::process::exit(frameinterp_cli::run_cli(std::env::args_os()));
}
