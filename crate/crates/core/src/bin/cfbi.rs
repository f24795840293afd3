fn main() -> std::process::ExitCode {
    cfbi::cli::main_with_args(std::env::args_os())
}
