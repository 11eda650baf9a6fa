use clap::Parser;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("LOCEDIT_LOG", "warn")).init();
    if let Err(e) = locedit_cli::run(locedit_cli::Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(2);
    }
}
