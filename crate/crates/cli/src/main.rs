use clap::Parser;
use rotor_cli::{execute, write_error_record, Cli};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(manifest) => log::info!("{} files, config {}", manifest.files.len(), manifest.config_sha256),
        Err(err) => {
            let record = serde_json::to_string(&err.record(cli.command.name())).unwrap_or_default();
            eprintln!("{record}");
            if let Some(path) = write_error_record(&cli, &err) {
                log::error!("error record written to {}", path.display());
            }
            std::process::exit(err.exit_code());
        }
    }
}
