fn main() {
    std::process::exit(xdiff::harness::cli::cli_main(std::env::args_os()));
}
