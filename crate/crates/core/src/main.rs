fn main() -> std::process::ExitCode {
    coagstat::cli::main()
}
