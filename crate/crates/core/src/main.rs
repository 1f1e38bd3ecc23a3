use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use chaoskit::cli::{self, CliError, OutputFormat, EXIT_OK};
use chaoskit::model::SCENARIOS;

#[derive(Parser)]
#[command(name = "chaoskit", version, about = "Propagation-of-chaos rate experiments for McKean-Vlasov SDEs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML config.
    Run {
        config: PathBuf,
        /// Output directory; defaults to the config's `output` key, then `./results`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Both)]
        format: Format,
        /// Also write a log-log SVG chart per report.
        #[arg(long)]
        chart: bool,
    },
    /// List built-in scenarios.
    Scenarios,
    /// Parse and validate a config, then print its resolved form.
    Validate { config: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Report,
    Both,
}

impl From<Format> for OutputFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => OutputFormat::Csv,
            Format::Report => OutputFormat::Report,
            Format::Both => OutputFormat::Both,
        }
    }
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Scenarios => {
            for s in SCENARIOS.iter() {
                let dims = if s.scalar_only { "d=1" } else { "any d" };
                println!("{:<10} {:<14} {:<6} {}", s.name, s.form, dims, s.description);
            }
        }
        Command::Validate { config } => {
            let parsed = cli::read_config(&config)?;
            print!("{}", cli::echo_config(&parsed));
        }
        Command::Run { config, out, format, chart } => {
            let parsed = cli::read_config(&config)?;
            let threads = cli::threads_from_env()?;
            let dir = out
                .or_else(|| parsed.output.as_ref().map(PathBuf::from))
                .unwrap_or_else(|| PathBuf::from("results"));
            let manifest = cli::with_threads(threads, || cli::run_experiment(&parsed))?;
            for path in cli::write_outputs(&manifest, &dir, format.into(), chart)? {
                println!("wrote {}", path.display());
            }
            print!("{}", cli::summary(&manifest));
            if let Some(s) = manifest.wall_clock_seconds {
                eprintln!("elapsed {s:.2}s");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let args = Cli::parse();
    match run(args.command) {
        Ok(()) => ExitCode::from(EXIT_OK as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
