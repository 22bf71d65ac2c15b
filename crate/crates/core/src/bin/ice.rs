fn main() -> std::process::ExitCode {
    ice_core::cli::main_with_args(std::env::args_os())
}
