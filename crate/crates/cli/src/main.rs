use clap::Parser;
use wfi_cli::{init_workers, run, Cli};

fn main() {
    let cli = Cli::parse();
    if let Err(e) = init_workers().and_then(|_| run(cli)) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
