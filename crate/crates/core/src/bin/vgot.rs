fn main() {
    std::process::exit(vgot::cli::main_with_args(std::env::args_os()));
}
