use clap::Parser;

fn main() -> anyhow::Result<()> {
    csn::cli::run(csn::cli::Cli::parse())
}
