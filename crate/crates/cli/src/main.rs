fn main() {
    if let Err(e) = irrgn_cli::run(std::env::args().collect()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
