fn main() -> std::process::ExitCode {
    scholarag_service::cli::main()
}
