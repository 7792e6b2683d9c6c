fn main() {
    std::process::exit(mcd_core::cli::run(std::env::args_os()));
}
