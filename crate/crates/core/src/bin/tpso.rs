use clap::Parser;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("TPSO_LOG", "warn")).init();
    let code = tpso::cli::run(tpso::cli::Cli::parse());
    std::process::exit(code);
}
