//! Command-line front end: reproducible batch runs binding ingestion,
//! imputation, pooling, and diagnostics. Exit codes: 0 success, 1
//! validation error, 2 numerical failure. Set `CHAINIMP_LOG` for verbosity.

mod commands;

use clap::Parser;

use commands::Cli;

fn main() {
    env_logger::Builder::from_env(
        env_logger::Env::default().filter_or("CHAINIMP_LOG", "warn"),
    )
    .init();

    // clap's default exit code for usage errors is 2; this tool reserves 2
    // for numerical failures, so usage problems are remapped to 1.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            let code = if e.use_stderr() { 1 } else { 0 };
            std::process::exit(code);
        }
    };
    if let Err(e) = commands::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
