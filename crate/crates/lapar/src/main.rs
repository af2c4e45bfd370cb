use clap::Parser;

fn main() {
    let cli = lapar::cli::Cli::parse();
    if let Err(e) = lapar::cli::run(&cli) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
