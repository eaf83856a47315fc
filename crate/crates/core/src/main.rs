use clap::Parser;

use catalog_dataset::cli::{execute, log_level, Cli, EXIT_FATAL, EXIT_OK};

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            std::process::exit(if e.use_stderr() { EXIT_FATAL } else { EXIT_OK });
        }
    };
    env_logger::Builder::new()
        .filter_level(log_level(cli.verbose))
        .parse_env("CATALOG_LOG")
        .format_timestamp_millis()
        .init();
    std::process::exit(execute(cli));
}
