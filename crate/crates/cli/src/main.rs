fn main() -> std::process::ExitCode {
    slotproj_cli::main()
}
