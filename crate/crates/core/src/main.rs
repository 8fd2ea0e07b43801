use clap::Parser;

fn main() {
    let cli = hcal::cli::Cli::parse();
    if let Err(e) = hcal::cli::run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
