fn main() {
    std::process::exit(aml_triage::cli::run(std::env::args_os()));
}
