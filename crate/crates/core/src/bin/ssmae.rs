use clap::Parser;

fn main() {
    let cli = ssmae::cli::Cli::parse();
    if let Err(e) = ssmae::cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
