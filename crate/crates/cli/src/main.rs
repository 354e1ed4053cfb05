use clap::Parser;

fn main() {
    let cli = hestonopt_cli::Cli::parse();
    if let Err(e) = hestonopt_cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
