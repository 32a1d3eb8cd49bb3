use clap::error::ErrorKind;
use clap::Parser;

fn main() {
    env_logger::init();
    // clap's native exit code for bad flags is 2; this harness reserves 2
    // for data errors, so parse failures map to 1 by hand.
    let cli = match averse_cli::Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => averse_cli::error::EXIT_USAGE,
            };
            let _ = err.print();
            std::process::exit(code);
        }
    };
    if let Err(err) = cli.run() {
        eprintln!("error: {err}");
        std::process::exit(err.code);
    }
}
