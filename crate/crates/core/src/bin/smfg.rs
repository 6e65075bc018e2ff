use clap::Parser;
use singular_mfg::cli::{error_line, init_logging, run, Cli};

fn main() {
    init_logging();
    let cli = Cli::parse();
    if let Err(e) = run(&cli) {
        eprintln!("{}", error_line(&e));
        std::process::exit(e.exit_code());
    }
}
