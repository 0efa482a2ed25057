fn main() -> std::process::ExitCode {
    subband::cli::main_entry()
}
