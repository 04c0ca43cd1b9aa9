use clap::Parser;
use wearnet::cli::{self, Cli};

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or(cli::LOG_ENV, "warn")).init();
    let args = Cli::parse();
    cli::run(args, &mut std::io::stdout().lock())?;
    Ok(())
}
