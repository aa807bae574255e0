fn main() {
    segsdf_cli::init_logging();
    std::process::exit(segsdf_cli::main_with_args(std::env::args_os()));
}
