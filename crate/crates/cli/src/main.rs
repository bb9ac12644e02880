use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::error;

use csmono_core::experiment::{self, ExperimentConfig, Preset, Route, Which};
use csmono_core::frontend::{AudioClip, FrontendConfig};
use csmono_core::Error;

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

/// Code-switched speech to monolingual text: corpus, ASR, recovery, evaluation.
///
/// Any config field can also be set as `--<field> VALUE`, with nested fields
/// written `--<section>-<field>` (for example `--asr-steps 500`).
#[derive(Debug, Parser)]
#[command(name = "csmono", version)]
struct Cli {
    /// JSON experiment config; defaults apply to missing fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    preset: Option<Preset>,
    /// Output directory for every artifact.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Config override `FIELD=VALUE`; repeatable.
    #[arg(long = "set", global = true, value_name = "FIELD=VALUE")]
    sets: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the train/val/test code-switched corpus.
    Generate,
    /// Synthesize speech features for every split, or extract log-Mel
    /// features from a WAV file.
    Features {
        #[arg(long)]
        wav: Option<PathBuf>,
        /// CSV destination for `--wav`; stdout when absent.
        #[arg(long, requires = "wav")]
        csv: Option<PathBuf>,
    },
    /// Train one model, or all of them.
    Train {
        /// asr, recovery, nmt, vae or all.
        which: String,
    },
    /// Run a cascade over the test split and write its report.
    Pipeline {
        /// asr+bert, asr+nmt, text+bert, text+nmt or all.
        #[arg(long, default_value = "all")]
        route: String,
    },
    /// Score a hypothesis file against the test references.
    Eval {
        #[arg(long)]
        hyp: PathBuf,
        #[arg(long, default_value = "custom")]
        system: String,
    },
    /// Summarize the route reports.
    Report,
    /// Print the effective config as JSON.
    Config,
}

/// Rewrites `--field VALUE` and `--field=VALUE` for config fields clap does
/// not declare into `--set field=VALUE`.
fn expand_field_flags(args: Vec<OsString>) -> Vec<OsString> {
    const DECLARED: [&str; 12] = [
        "config", "seed", "preset", "out", "set", "wav", "csv", "route", "hyp", "system", "help", "version",
    ];
    let mut out = Vec::with_capacity(args.len());
    let mut it = args.into_iter();
    while let Some(a) = it.next() {
        let Some(flag) = a.to_str().and_then(|s| s.strip_prefix("--")).map(str::to_string) else {
            out.push(a);
            continue;
        };
        let (name, inline) = match flag.split_once('=') {
            Some((n, v)) => (n.to_string(), Some(v.to_string())),
            None => (flag.clone(), None),
        };
        if DECLARED.contains(&name.as_str()) || !ExperimentConfig::is_field(&name) {
            out.push(a);
            continue;
        }
        let value = match inline {
            Some(v) => Some(OsString::from(v)),
            None => it.next(),
        };
        match value.and_then(|v| v.into_string().ok()) {
            Some(v) => {
                out.push("--set".into());
                out.push(format!("{name}={v}").into());
            }
            // Leave it for clap to reject with a usage message.
            None => out.push(a),
        }
    }
    out
}

enum Failure {
    Usage(String),
    Run(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Run(e)
    }
}

fn usage(e: impl ToString) -> Failure {
    Failure::Usage(e.to_string())
}

fn build_config(cli: &Cli) -> Result<ExperimentConfig, Failure> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    for s in &cli.sets {
        let (k, v) = s.split_once('=').ok_or_else(|| usage(format!("--set expects FIELD=VALUE, got {s:?}")))?;
        cfg.apply_override(k, v).map_err(usage)?;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(p) = cli.preset {
        cfg.preset = p;
    }
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
    }
    cfg.validate().map_err(usage)?;
    Ok(cfg)
}

fn parse_all<T: std::str::FromStr<Err = Error> + Copy>(arg: &str, all: &[T]) -> Result<Vec<T>, Failure> {
    if arg == "all" {
        Ok(all.to_vec())
    } else {
        Ok(vec![arg.parse().map_err(usage)?])
    }
}

fn run(cli: &Cli) -> Result<(), Failure> {
    let cfg = build_config(cli)?;
    match &cli.command {
        Command::Generate => {
            let c = experiment::cmd_generate(&cfg)?;
            println!("train {} val {} test {} -> {}", c.train, c.val, c.test, cfg.out.join("corpus").display());
        }
        Command::Features { wav: Some(wav), csv } => {
            let clip = AudioClip::read_wav(wav)?;
            let fe = FrontendConfig {
                frame_len_ms: cfg.frame_len_ms,
                hop_ms: cfg.hop_ms,
                ..FrontendConfig::default()
            };
            let feats = fe.extract(&clip)?;
            match csv {
                Some(p) => {
                    feats.write_csv(p)?;
                    println!("{} frames x {} -> {}", feats.num_frames(), feats.dim(), p.display());
                }
                None => print!("{}", feats.to_csv()),
            }
        }
        Command::Features { wav: None, .. } => {
            let m = experiment::cmd_features(&cfg)?;
            for (split, n) in &m.counts {
                println!("{split}: {n} utterances");
            }
        }
        Command::Train { which } => {
            for w in parse_all(which, &Which::ALL)? {
                let s = experiment::cmd_train(&cfg, w)?;
                println!("{w}: {} steps, loss {:.4} -> {:.4}, {}", s.steps, s.first_loss, s.final_loss, s.checkpoint.display());
            }
        }
        Command::Pipeline { route } => {
            let routes = parse_all(route, &Route::ALL)?;
            let reports = routes.into_iter().map(|r| experiment::cmd_pipeline(&cfg, r)).collect::<Result<Vec<_>, _>>()?;
            print!("{}", csmono_core::metrics::EvalReport::to_csv(&reports));
        }
        Command::Eval { hyp, system } => {
            let r = experiment::cmd_eval(&cfg, hyp, system)?;
            print!("{}", csmono_core::metrics::EvalReport::to_csv(&[r]));
        }
        Command::Report => print!("{}", experiment::cmd_report(&cfg)?),
        Command::Config => println!("{}", serde_json::to_string_pretty(&cfg).map_err(Error::from)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("CSR_LOG", "info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse_from(expand_field_flags(std::env::args_os().collect())) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            error!("{msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Run(e)) => {
            error!("{e}");
            ExitCode::from(if e.is_numeric() { EXIT_NUMERIC } else { EXIT_DATA })
        }
    }
}
