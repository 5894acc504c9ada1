fn main() {
    if let Err(e) = pcae::cli::run(std::env::args_os().collect()) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
