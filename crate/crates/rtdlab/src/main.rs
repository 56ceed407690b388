use clap::Parser;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = rtdlab::cli::Cli::parse();
    if let Err(e) = rtdlab::cli::execute(cli) {
        eprintln!("rtdlab: {e}");
        std::process::exit(e.exit_code());
    }
}
