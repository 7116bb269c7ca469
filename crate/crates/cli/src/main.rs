use clap::Parser;

use mpcnn_cli::{run, Cli};

fn main() {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(out) => print!("{out}"),
        Err(e) => {
            eprintln!("error[{}]: {}", e.category(), e.message());
            std::process::exit(e.exit_code());
        }
    }
}
