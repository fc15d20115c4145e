use clap::Parser;
use privrisk_cli::{exit_status, run, Cli};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    std::process::exit(exit_status(&run(&cli.command)));
}
