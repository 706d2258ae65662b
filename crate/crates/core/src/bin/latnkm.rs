use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use latnkm::experiment::{cmd_cv, cmd_eval, cmd_fit, cmd_sweep_hessian, ExperimentConfig, ModelArtifact};
use latnkm::hessian::HessianVariant;
use latnkm::predictive::PredictiveMode;
use latnkm::{Error, Result};

#[derive(Parser)]
#[command(name = "latnkm", version, about = "Bayesian CPD tensor-network kernel machines")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train on one split and write a model artifact.
    Fit(Common),
    /// Evaluate over repeated splits, or a saved artifact with --artifact.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        artifact: Option<PathBuf>,
    },
    /// Grid search over rank, local dimension and threshold.
    Cv {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',')]
        ranks: Option<Vec<usize>>,
        #[arg(long, value_delimiter = ',')]
        local_dims: Option<Vec<usize>>,
        #[arg(long, value_delimiter = ',')]
        thresholds: Option<Vec<f64>>,
        #[arg(long)]
        folds: Option<usize>,
    },
    /// Compare all Hessian approximations across thresholds.
    SweepHessian {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',')]
        thresholds: Option<Vec<f64>>,
    },
    /// Run the synthetic cubic experiment with its preset settings.
    Synth(Common),
}

#[derive(Args, Default)]
struct Common {
    /// TOML experiment config layered over the command's defaults; flags
    /// override both.
    #[arg(long)]
    config: Option<PathBuf>,
    /// CSV file or "synthetic-cubic".
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long)]
    target: Option<String>,
    #[arg(long)]
    rank: Option<usize>,
    #[arg(long)]
    local_dim: Option<usize>,
    #[arg(long)]
    hessian: Option<HessianVariant>,
    #[arg(long, allow_negative_numbers = true)]
    threshold: Option<f64>,
    /// Read --threshold as a fraction of the largest eigenvalue.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    threshold_relative: Option<bool>,
    #[arg(long)]
    mode: Option<PredictiveMode>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    vi_rounds: Option<usize>,
    /// Fix the noise precision instead of learning it.
    #[arg(long)]
    beta: Option<f64>,
    /// Fix the prior precision instead of learning it.
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    train_frac: Option<f64>,
    #[arg(long)]
    repeats: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    drop_constant: bool,
    /// Report metrics in original target units.
    #[arg(long)]
    raw_scale: bool,
}

impl Common {
    fn resolve(&self, base: ExperimentConfig) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => base.overlay_file(p)?,
            None => base,
        };
        macro_rules! set {
            ($($field:ident),*) => {$(
                if let Some(v) = self.$field.clone() {
                    cfg.$field = v;
                }
            )*};
        }
        set!(dataset, rank, local_dim, hessian, threshold, threshold_relative, mode, samples, epochs, vi_rounds, train_frac, repeats, seed);
        if self.target.is_some() {
            cfg.target = self.target.clone();
        }
        if self.beta.is_some() {
            cfg.beta = self.beta;
        }
        if self.gamma.is_some() {
            cfg.gamma = self.gamma;
        }
        if self.out.is_some() {
            cfg.out = self.out.clone();
        }
        cfg.drop_constant |= self.drop_constant;
        cfg.raw_scale |= self.raw_scale;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn out_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.out.clone().unwrap_or_else(|| PathBuf::from("out"))
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(|e| Error::Io { path, source: e })
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Fit(common) => {
            let cfg = common.resolve(ExperimentConfig::default())?;
            let artifact = cmd_fit(&cfg)?;
            let dir = out_dir(&cfg);
            write(&dir, "model.json", &artifact.to_json()?)?;
            let p = &artifact.posterior;
            println!(
                "wrote {} (E[beta]={:.6}, E[gamma]={:.6}, retained={})",
                dir.join("model.json").display(),
                p.beta.mean(),
                p.gamma.mean(),
                p.eig.rank()
            );
        }
        Command::Eval { common, artifact } => {
            let base = match &artifact {
                Some(path) => ModelArtifact::load(path)?.config,
                None => ExperimentConfig::default(),
            };
            let cfg = common.resolve(base)?;
            let loaded = artifact.map(ModelArtifact::load).transpose()?;
            let report = cmd_eval(&cfg, loaded.as_ref())?;
            emit(&cfg, "metrics", &report.to_table(), &report.to_json()?)?;
        }
        Command::Cv {
            common,
            ranks,
            local_dims,
            thresholds,
            folds,
        } => {
            let mut cfg = common.resolve(ExperimentConfig::default())?;
            if let Some(v) = ranks {
                cfg.cv.ranks = v;
            }
            if let Some(v) = local_dims {
                cfg.cv.local_dims = v;
            }
            if let Some(v) = thresholds {
                cfg.cv.thresholds = v;
            }
            if let Some(v) = folds {
                cfg.cv.folds = v;
            }
            let report = cmd_cv(&cfg)?;
            emit(&cfg, "cv", &report.to_table(), &report.to_json()?)?;
        }
        Command::SweepHessian { common, thresholds } => {
            let mut cfg = common.resolve(ExperimentConfig::default())?;
            if let Some(v) = thresholds {
                cfg.sweep_thresholds = v;
            }
            let report = cmd_sweep_hessian(&cfg)?;
            emit(&cfg, "sweep", &report.to_table(), &report.to_json()?)?;
        }
        Command::Synth(common) => {
            let cfg = common.resolve(ExperimentConfig::synthetic_cubic())?;
            let report = cmd_eval(&cfg, None)?;
            emit(&cfg, "metrics", &report.to_table(), &report.to_json()?)?;
        }
    }
    Ok(())
}

fn emit(cfg: &ExperimentConfig, stem: &str, table: &str, json: &str) -> Result<()> {
    print!("{table}");
    let dir = out_dir(cfg);
    write(&dir, &format!("{stem}.txt"), table)?;
    write(&dir, &format!("{stem}.json"), json)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
