//! The `regprobe` command-line tool.
//!
//! Exit codes: 0 success, 2 config or usage error, 3 data-format error,
//! 1 anything else.

use std::ffi::OsString;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use super::config::{ExperimentConfig, SourceMode};
use super::experiment::{evaluate_probe, fuse_dataset, run_experiment_with, write_feature_caches, EvalReport, EvalSettings, RunMeta};
use super::report::{emit_report, ReportFormat};
use super::synth::{gen_backbone_dataset, gen_synthetic, Dataset};
use crate::backbone::Backbone;
use crate::error::{Error, Result};
use crate::features::{read_cache, CacheMeta, FeatureVector, FusionStrategy};
use crate::metrics::DEFAULT_TARGET_TPR;
use crate::numerics::SeededRng;
use crate::par::Exec;
use crate::probe::{train, ProbeFile, TrainConfig};
use crate::scoring::ScoreKind;

#[derive(Debug, Parser)]
#[command(name = "regprobe", version, about = "Linear probes over CLS, patch and register token fusions")]
pub struct Cli {
    /// Run everything on the calling thread.
    #[arg(long, global = true)]
    pub sequential: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate direct-mode synthetic features and write caches.
    Gen(DataArgs),
    /// Embed synthetic images with the toy backbone and write caches.
    Extract(ExtractArgs),
    /// Train a linear probe on a cache.
    Train(TrainArgs),
    /// Evaluate a probe on test, OOD and anomaly caches.
    Eval(EvalArgs),
    /// Run a config end to end and write the JSON report.
    Run(RunArgs),
    /// Render a JSON report as CSV or markdown.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct DataArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; caches go to `<out>/<strategy>/<split>.rpf`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Load backbone weights instead of initializing them from the seed.
    #[arg(long)]
    pub weights: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training cache (usually `id_train.rpf`).
    #[arg(long)]
    pub cache: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub bias: bool,
    /// Shuffle seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub probe: PathBuf,
    #[arg(long)]
    pub id_test: PathBuf,
    /// OOD cache as `name=path`; repeatable.
    #[arg(long, value_parser = parse_named)]
    pub ood: Vec<(String, PathBuf)>,
    /// Anomaly cache as `name=path`; repeatable.
    #[arg(long, value_parser = parse_named)]
    pub anomaly: Vec<(String, PathBuf)>,
    /// Comma-separated scores.
    #[arg(long, value_delimiter = ',', default_value = "msp,energy")]
    pub scores: Vec<ScoreKind>,
    #[arg(long, default_value_t = 1.0)]
    pub temperature: f64,
    #[arg(long, default_value_t = DEFAULT_TARGET_TPR)]
    pub target_tpr: f64,
    /// JSON report path; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// JSON report path; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value = "markdown")]
    pub format: ReportFormat,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_named(s: &str) -> std::result::Result<(String, PathBuf), String> {
    match s.split_once('=') {
        Some((name, path)) if !name.is_empty() && !path.is_empty() => Ok((name.to_string(), PathBuf::from(path))),
        _ => Err(format!("expected name=path, got {s:?}")),
    }
}

/// Parse arguments, run, and return the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: Cli) -> Result<()> {
    let exec = if cli.sequential { Exec::Sequential } else { Exec::Parallel };
    match cli.command {
        Command::Gen(a) => {
            let config = load_config(&a.config)?;
            let rng = SeededRng::new(config.seeds().data);
            let dataset = gen_synthetic(&config.dataset, &rng)?.dataset;
            write_all_caches(&config, &dataset, &a.out)
        }
        Command::Extract(a) => {
            let mut config = load_config(&a.data.config)?;
            config.mode = SourceMode::Backbone;
            config.validate()?;
            let backbone = match &a.weights {
                Some(p) => {
                    let bb = Backbone::load(p)?;
                    let want = config.backbone_config();
                    if bb.config() != &want {
                        return Err(Error::config(None, format!("weights in {} do not match the config's backbone", p.display())));
                    }
                    bb
                }
                None => Backbone::new(config.backbone_config())?,
            };
            let rng = SeededRng::new(config.seeds().data);
            let dataset = gen_backbone_dataset(&config.dataset, &backbone, &rng, exec)?;
            create_dir(&a.data.out)?;
            backbone.save(&a.data.out.join("backbone.wgt"))?;
            write_all_caches(&config, &dataset, &a.data.out)
        }
        Command::Train(a) => {
            let (samples, meta) = read_cache(&a.cache)?;
            let defaults = TrainConfig::default();
            let cfg = TrainConfig {
                iterations: a.iterations.unwrap_or(defaults.iterations),
                learning_rate: a.lr.unwrap_or(defaults.learning_rate),
                batch_size: a.batch.unwrap_or(defaults.batch_size),
                momentum: a.momentum.unwrap_or(defaults.momentum),
                shuffle_seed: a.seed.unwrap_or(defaults.shuffle_seed),
                bias: a.bias,
            };
            let trained = train(&samples, meta.classes, &cfg)?;
            ProbeFile {
                strategy: meta.strategy,
                params: trained.params,
                config: trained.config,
            }
            .save(&a.out)
        }
        Command::Eval(a) => {
            let probe = ProbeFile::load(&a.probe)?;
            let load = |p: &Path| -> Result<Vec<FeatureVector>> {
                let (samples, meta) = read_cache(p)?;
                check_cache(p, &meta, probe.strategy, probe.params.classes())?;
                Ok(samples)
            };
            let id_test = load(&a.id_test)?;
            let named = |items: &[(String, PathBuf)]| -> Result<Vec<(String, Vec<FeatureVector>)>> {
                items.iter().map(|(n, p)| Ok((n.clone(), load(p)?))).collect()
            };
            let ood = named(&a.ood)?;
            let anomaly = named(&a.anomaly)?;
            let settings = EvalSettings {
                scores: a.scores.clone(),
                temperature: a.temperature,
                target_tpr: a.target_tpr,
            };
            let strategy = evaluate_probe(probe.strategy, &probe.params, &id_test, &ood, &anomaly, &settings, exec)?;
            let report = EvalReport {
                meta: RunMeta {
                    mode: None,
                    master_seed: None,
                    data_seed: None,
                    backbone_seed: None,
                    probe_seed: Some(probe.config.shuffle_seed),
                    config_hash: None,
                    classes: probe.params.classes(),
                    temperature: a.temperature,
                    target_tpr: a.target_tpr,
                    ood_splits: a.ood.iter().map(|o| o.0.clone()).collect(),
                    anomaly_splits: a.anomaly.iter().map(|o| o.0.clone()).collect(),
                    scores: a.scores,
                },
                strategies: vec![strategy],
            };
            write_text(a.out.as_deref(), &(report.to_json()? + "\n"))
        }
        Command::Run(a) => {
            let config = load_config(&a.config)?;
            let report = run_experiment_with(&config, exec)?;
            write_text(a.out.as_deref(), &(report.to_json()? + "\n"))
        }
        Command::Report(a) => {
            let report = EvalReport::load(&a.input)?;
            write_text(a.out.as_deref(), &emit_report(&report, a.format))
        }
    }
}

fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let config = ExperimentConfig::parse(&text)?;
    config.validate()?;
    Ok(config)
}

fn check_cache(path: &Path, meta: &CacheMeta, strategy: FusionStrategy, classes: usize) -> Result<()> {
    if meta.strategy != strategy || meta.classes != classes {
        return Err(Error::arg(format!(
            "{} holds {} features for {} classes; the probe expects {} with {}",
            path.display(),
            meta.strategy,
            meta.classes,
            strategy,
            classes
        )));
    }
    Ok(())
}

fn write_all_caches(config: &ExperimentConfig, dataset: &Dataset, out: &Path) -> Result<()> {
    create_dir(out)?;
    for &strategy in &config.strategies {
        let features = fuse_dataset(dataset, strategy).map_err(|e| e.context(format!("strategy {strategy}")))?;
        let meta = CacheMeta {
            strategy,
            dim: dataset.dim,
            classes: dataset.classes,
            backbone_seed: config.seeds().backbone,
        };
        write_feature_caches(out, &features, &meta)?;
    }
    Ok(())
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| Error::io(p, e)),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| Error::io("<stdout>", e)),
    }
}
