use clap::Parser;
use msdenoise_cli::{requested_threads, run, Cli, CliError};

fn fail(e: &CliError) -> ! {
    eprintln!("{}", e.line());
    std::process::exit(e.exit_code());
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            print!("{e}");
            return;
        }
        Err(e) => {
            let text = e.to_string();
            let detail: Vec<&str> = text
                .lines()
                .take_while(|l| !l.starts_with("Usage:"))
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .collect();
            fail(&CliError::Usage(
                detail.join(" ").trim_start_matches("error: ").to_string(),
            ));
        }
    };
    match requested_threads(&cli) {
        Ok(Some(n)) => {
            if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                log::warn!("thread pool already initialized: {e}");
            }
        }
        Ok(None) => {}
        Err(e) => fail(&e),
    }
    let mut stdout = std::io::stdout().lock();
    if let Err(e) = run(&cli, &mut stdout) {
        fail(&e);
    }
}
