fn main() -> std::process::ExitCode {
    coadapt::cli::run(std::env::args_os())
}
