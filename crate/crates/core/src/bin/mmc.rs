fn main() {
    std::process::exit(mmc_core::cli::main_with_args(std::env::args_os()));
}
