fn main() {
    std::process::exit(pxm4_cli::run(std::env::args_os()));
}
