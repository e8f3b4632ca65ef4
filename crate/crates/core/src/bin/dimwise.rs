fn main() {
    std::process::exit(dimwise::harness::cli_dispatch(std::env::args_os()));
}
