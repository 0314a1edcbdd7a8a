fn main() -> std::process::ExitCode {
    fodloc::cli::main()
}
