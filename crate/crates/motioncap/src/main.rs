fn main() -> std::process::ExitCode {
    motioncap::cli::run(std::env::args_os())
}
