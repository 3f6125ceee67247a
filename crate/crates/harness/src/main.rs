fn main() {
    std::process::exit(nellcom_harness::cli::run(std::env::args_os()));
}
