use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use flashsr_cli::commands::{self, Ctx, ModelPaths};
use flashsr_cli::{CliError, CliResult, RunConfig};
use flashsr_core::pipeline::Profile;

#[derive(Parser)]
#[command(name = "flashsr", version, about = "One-step diffusion audio super-resolution")]
struct Cli {
    /// TOML run configuration; unspecified keys take profile defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// paper or desk
    #[arg(long, global = true, value_parser = parse_profile)]
    profile: Option<Profile>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// cpu, cuda or cuda:N
    #[arg(long, global = true)]
    device: Option<String>,
    /// Overrides the training length of the command (epochs for the codec).
    #[arg(long, global = true)]
    steps: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Writes a lowpass-degraded copy of every clip.
    SimulateLr {
        #[arg(long)]
        in_dir: String,
    },
    TrainCodec {
        /// Directory of WAV files, or `synthetic`.
        #[arg(long)]
        data: String,
    },
    TrainTeacher {
        #[arg(long)]
        data: String,
        #[arg(long)]
        codec: PathBuf,
    },
    Distill {
        #[arg(long)]
        data: String,
        #[arg(long)]
        codec: PathBuf,
        #[arg(long)]
        teacher: PathBuf,
    },
    TrainVocoder {
        #[arg(long)]
        data: String,
    },
    Infer {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        codec: PathBuf,
        /// Student (one step) or teacher (solver) checkpoint.
        #[arg(long)]
        generator: PathBuf,
        #[arg(long)]
        vocoder: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    Evaluate {
        #[arg(long)]
        data: String,
        /// identity or flashsr
        #[arg(long, default_value = "flashsr")]
        model: String,
        #[arg(long)]
        codec: Option<PathBuf>,
        #[arg(long)]
        generator: Option<PathBuf>,
        #[arg(long)]
        vocoder: Option<PathBuf>,
        /// Timed inference runs for the RTF entry; 0 skips it.
        #[arg(long, default_value_t = 0)]
        rtf_repeats: usize,
    },
}

fn parse_profile(s: &str) -> Result<Profile, String> {
    s.parse().map_err(|e: flashsr_core::Error| e.to_string())
}

fn resolve_config(cli: &Cli) -> CliResult<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p, cli.profile)?,
        None => RunConfig::for_profile(cli.profile.unwrap_or(Profile::Desk)),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(d) = &cli.out_dir {
        cfg.out_dir = d.clone();
    }
    if let Some(d) = &cli.device {
        cfg.device = d.clone();
    }
    Ok(cfg)
}

fn run(cli: Cli) -> CliResult<PathBuf> {
    let ctx = Ctx::new(resolve_config(&cli)?, cli.steps)?;
    match &cli.command {
        Command::SimulateLr { in_dir } => commands::simulate_lr_cmd(&ctx, in_dir),
        Command::TrainCodec { data } => commands::train_codec_cmd(&ctx, data),
        Command::TrainTeacher { data, codec } => commands::train_teacher_cmd(&ctx, data, codec),
        Command::Distill { data, codec, teacher } => commands::distill_cmd(&ctx, data, codec, teacher),
        Command::TrainVocoder { data } => commands::train_vocoder_cmd(&ctx, data),
        Command::Infer { input, codec, generator, vocoder, output } => {
            let paths = ModelPaths { codec, generator, vocoder };
            commands::infer_cmd(&ctx, input, &paths, output.as_deref())
        }
        Command::Evaluate { data, model, codec, generator, vocoder, rtf_repeats } => {
            let paths = match (codec, generator, vocoder) {
                (Some(codec), Some(generator), Some(vocoder)) => Some(ModelPaths { codec, generator, vocoder }),
                (None, None, None) => None,
                _ => return Err(CliError::Usage("pass all of --codec, --generator and --vocoder".into())),
            };
            commands::evaluate_cmd(&ctx, data, model, paths.as_ref(), *rtf_repeats)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(path) => {
            println!("{}", path.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
