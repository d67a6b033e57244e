fn main() -> std::process::ExitCode {
    textmatch_studio::cli::main()
}
