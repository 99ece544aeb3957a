fn main() -> std::process::ExitCode {
    medcbr::cli::main_entry()
}
