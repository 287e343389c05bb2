fn main() {
    std::process::exit(lddmm_cli::run(std::env::args_os()));
}
