use clap::Parser;

fn main() -> anyhow::Result<()> {
    let cli = p3hf::cli::Cli::parse();
    p3hf::cli::run(cli, &mut std::io::stdout().lock())?;
    Ok(())
}
