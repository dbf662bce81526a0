use clap::Parser;
use iph_cli::commands::EXIT_ERROR;
use iph_cli::{run, Cli};

fn main() {
    let cli = Cli::parse();
    match run(cli) {
        Ok(outcome) => {
            println!("{}", serde_json::to_string_pretty(&outcome.json).expect("JSON output"));
            std::process::exit(outcome.code);
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::exit(EXIT_ERROR);
        }
    }
}
