fn main() -> std::process::ExitCode {
    embalign::cli::main()
}
