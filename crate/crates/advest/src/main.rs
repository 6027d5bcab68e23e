use clap::Parser;

use advest::cli::{run, Cli, Outcome};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(Outcome::Clean) => {}
        Ok(Outcome::NonConverged) => {
            eprintln!("warning: flagged non-convergence; results were still written");
            std::process::exit(3);
        }
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(2);
        }
    }
}
