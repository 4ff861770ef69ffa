fn main() {
    if let Err(e) = oscsync::cli::run(std::env::args_os()) {
        eprintln!("error: {}", e.to_string().trim_end());
        std::process::exit(e.exit_code());
    }
}
