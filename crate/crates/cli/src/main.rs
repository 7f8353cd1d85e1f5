fn main() -> std::process::ExitCode {
    mseg_cli::main_entry()
}
