fn main() {
    std::process::exit(lwnet3d::cli::main_with_args(std::env::args_os()));
}
