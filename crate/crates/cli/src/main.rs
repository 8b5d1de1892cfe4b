mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sgshift_core::{Error, ErrorClass, Result};

use crate::config::RunConfig;

#[derive(Parser)]
#[command(name = "sgshift", version, about = "Sparse attribution of concept shift between two domains")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a source/target pair with known shifted features.
    Simulate(Common),
    /// Fit a method and write its path and per-feature scores.
    Fit(Common),
    /// Run derandomized knockoff selection.
    Select(Common),
    /// Score a method against ground truth and held-out loss.
    Evaluate(Common),
    /// Run the benchmark criteria.
    Bench {
        #[command(flatten)]
        common: Common,
        /// Fraction of the full replicate counts to run.
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
    },
}

/// Flags shared by every subcommand; unset flags fall back to the config
/// file, then to defaults.
#[derive(Args, Default)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    offsets: Option<PathBuf>,
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    family: Option<String>,
    /// Target FDR level; pass an empty value to unset.
    #[arg(long)]
    q: Option<String>,
    #[arg(long = "B")]
    b: Option<String>,
    #[arg(long)]
    pi: Option<String>,
    #[arg(long)]
    alpha: Option<String>,
    /// Ratio of the absorption penalty to the shift penalty.
    #[arg(long)]
    r: Option<String>,
    #[arg(long = "lambda-points")]
    lambda_points: Option<String>,
    #[arg(long = "min-ratio")]
    min_ratio: Option<String>,
    #[arg(long)]
    statistic: Option<String>,
    #[arg(long)]
    shrinkage: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    replicates: Option<String>,
    #[arg(long)]
    holdout: Option<String>,
    #[arg(long)]
    fpr: Option<String>,
    #[arg(long = "source-tag")]
    source_tag: Option<String>,
    #[arg(long = "target-tag")]
    target_tag: Option<String>,
    #[arg(long = "label-column")]
    label_column: Option<String>,
    #[arg(long = "domain-column")]
    domain_column: Option<String>,
    #[arg(long = "n-source")]
    n_source: Option<String>,
    #[arg(long = "n-target")]
    n_target: Option<String>,
    #[arg(long)]
    p: Option<String>,
    /// Number of shifted features.
    #[arg(long)]
    a: Option<String>,
    #[arg(long)]
    magnitude: Option<String>,
    #[arg(long)]
    rho: Option<String>,
    /// Train the base model on a random half of the features.
    #[arg(long)]
    mismatch: bool,
    #[arg(long = "no-standardize")]
    no_standardize: bool,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            cfg.apply_text(&text)?;
        }
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.to_string_lossy().into_owned());
        let flags: [(&str, Option<String>); 31] = [
            ("data", path(&self.data)),
            ("offsets", path(&self.offsets)),
            ("truth", path(&self.truth)),
            ("out", path(&self.out)),
            ("method", self.method.clone()),
            ("family", self.family.clone()),
            ("q", self.q.clone()),
            ("B", self.b.clone()),
            ("pi", self.pi.clone()),
            ("alpha", self.alpha.clone()),
            ("r", self.r.clone()),
            ("lambda_points", self.lambda_points.clone()),
            ("min_ratio", self.min_ratio.clone()),
            ("statistic", self.statistic.clone()),
            ("shrinkage", self.shrinkage.clone()),
            ("seed", self.seed.clone()),
            ("replicates", self.replicates.clone()),
            ("holdout", self.holdout.clone()),
            ("fpr", self.fpr.clone()),
            ("source_tag", self.source_tag.clone()),
            ("target_tag", self.target_tag.clone()),
            ("label_column", self.label_column.clone()),
            ("domain_column", self.domain_column.clone()),
            ("n_source", self.n_source.clone()),
            ("n_target", self.n_target.clone()),
            ("p", self.p.clone()),
            ("a", self.a.clone()),
            ("magnitude", self.magnitude.clone()),
            ("rho", self.rho.clone()),
            ("mismatch", self.mismatch.then(|| "true".into())),
            ("standardize", self.no_standardize.then(|| "false".into())),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                cfg.set(key, v.trim())?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn class_name(c: ErrorClass) -> &'static str {
    match c {
        ErrorClass::Config => "config",
        ErrorClass::Data => "data",
        ErrorClass::Numerical => "numerical",
    }
}

fn report_error(kind: &str, class: ErrorClass, message: String) -> ExitCode {
    let code = class.exit_code();
    let body = serde_json::json!({
        "error": kind,
        "class": class_name(class),
        "message": message,
        "exit_code": code,
    });
    eprintln!("{body}");
    ExitCode::from(code as u8)
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Simulate(c) => commands::simulate(&c.resolve()?),
        Command::Fit(c) => commands::fit(&c.resolve()?),
        Command::Select(c) => commands::select(&c.resolve()?),
        Command::Evaluate(c) => commands::evaluate(&c.resolve()?),
        Command::Bench { common, scale } => commands::bench(&common.resolve()?, scale),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return report_error("InvalidArguments", ErrorClass::Config, e.to_string().trim().to_string()),
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => report_error(e.kind(), e.class(), e.to_string()),
    }
}
