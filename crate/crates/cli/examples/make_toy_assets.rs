//! Writes the synthetic detoxification task.
//!
//! `cargo run -p locedit-cli --example make_toy_assets -- <dir> [inputs] [seed]`

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = args.next().unwrap_or_else(|| "assets/toy".to_string());
    let inputs = args.next().map(|s| s.parse()).transpose()?.unwrap_or(200);
    let seed = args.next().map(|s| s.parse()).transpose()?.unwrap_or(7);
    let config = locedit_cli::assets::write_toy_task(dir.as_ref(), inputs, seed)?;
    println!("{}", config.display());
    Ok(())
}
