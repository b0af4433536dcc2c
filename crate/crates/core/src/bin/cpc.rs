fn main() -> std::process::ExitCode {
    cpc_core::cli::main()
}
