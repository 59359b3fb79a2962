fn main() {
    std::process::exit(roughsk::harness::cli_main(std::env::args_os()));
}
