use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use tracing_subscriber::EnvFilter;

use protofuse::encoder::Modality;

mod client;
mod commands;

#[derive(Debug, Parser)]
#[command(name = "protofuse", version, about = "Prototype encoder with an LLM reflect/refine loop")]
struct Cli {
    /// More log output (-v info, -vv debug). RUST_LOG overrides.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModalityArg {
    Time,
    Text,
}

impl From<ModalityArg> for Modality {
    fn from(m: ModalityArg) -> Self {
        match m {
            ModalityArg::Time => Modality::Time,
            ModalityArg::Text => Modality::Text,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic planted-motif dataset.
    Synth {
        /// Synthetic dataset specification (JSON).
        #[arg(long)]
        spec: PathBuf,
        /// Output dataset directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the encoder alone.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Loop configuration (JSON); only the encoder part is used.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the train / predict / reflect / refine loop.
    Loop {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// `live` or `scripted:<script.json>`.
        #[arg(long)]
        client: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Refine and predict the test split with the best saved state.
    Test {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Defaults to the client the loop ran with.
        #[arg(long)]
        client: Option<String>,
        /// Override the validation-selected α.
        #[arg(long)]
        alpha: Option<f64>,
    },
    /// Show the top prototype–segment matches for one sample.
    Explain {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        sample: String,
        #[arg(long, default_value_t = 3)]
        omega: usize,
        #[arg(long, value_enum, default_value = "text")]
        modality: ModalityArg,
        /// Defaults to the dataset the run was trained on.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Print the explanation as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Score predictions against ground truth.
    Eval {
        /// Line-delimited records with `id` and `predicted`, optionally
        /// `fused` or `scores` probability vectors.
        #[arg(long)]
        pred: PathBuf,
        /// Dataset directory or line-delimited records with `id` and `label`.
        #[arg(long)]
        truth: PathBuf,
    },
    /// Finite-difference check of every encoder gradient.
    Gradcheck {
        /// Gradient-check settings (JSON); defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let filter = EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new(level));
    let _ = tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .try_init();
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    init_logging(cli.verbose);
    let result = match cli.command {
        Command::Synth { spec, out } => commands::synth(&spec, &out),
        Command::Train { data, config, out } => commands::train(&data, &config, &out),
        Command::Loop {
            data,
            config,
            client,
            out,
        } => commands::run_loop(&data, &config, &client, &out),
        Command::Test {
            run,
            data,
            client,
            alpha,
        } => commands::test(&run, &data, client.as_deref(), alpha),
        Command::Explain {
            run,
            sample,
            omega,
            modality,
            data,
            json,
        } => commands::explain(&run, &sample, omega, modality.into(), data.as_deref(), json),
        Command::Eval { pred, truth } => commands::eval(&pred, &truth),
        Command::Gradcheck { config } => commands::gradcheck(config.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_external() { 2 } else { 1 })
        }
    }
}
