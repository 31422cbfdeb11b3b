fn main() -> std::process::ExitCode {
    covgof::cli::main()
}
