//! End-to-end runs over the strategy grid.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, SourceMode};
use super::synth::{build_dataset, Dataset, Split};
use crate::error::{ensure, Error, Result};
use crate::features::{fuse, write_cache, CacheMeta, FeatureVector, FusionStrategy, SplitTag};
use crate::metrics::{auroc, fpr_at_tpr, top1_accuracy, BinaryScoreSet};
use crate::par::Exec;
use crate::probe::{logits_batch, train, ProbeFile, ProbeParams};
use crate::scoring::{score, ScoreKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyCell {
    pub split: String,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyCell {
    pub split: String,
    pub score: ScoreKind,
    pub fpr: f64,
    pub auroc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyReport {
    pub strategy: FusionStrategy,
    pub id_accuracy: f64,
    pub ood: Vec<AccuracyCell>,
    pub anomaly: Vec<AnomalyCell>,
}

impl StrategyReport {
    pub fn anomaly_cell(&self, split: &str, score: ScoreKind) -> Option<&AnomalyCell> {
        self.anomaly.iter().find(|c| c.split == split && c.score == score)
    }

    pub fn ood_accuracy(&self, split: &str) -> Option<f64> {
        self.ood.iter().find(|c| c.split == split).map(|c| c.accuracy)
    }

    pub fn mean_ood_accuracy(&self) -> Option<f64> {
        mean(self.ood.iter().map(|c| c.accuracy))
    }

    /// Mean (FPR, AUROC) over anomaly splits for one score.
    pub fn mean_anomaly(&self, score: ScoreKind) -> Option<(f64, f64)> {
        let cells: Vec<&AnomalyCell> = self.anomaly.iter().filter(|c| c.score == score).collect();
        Some((mean(cells.iter().map(|c| c.fpr))?, mean(cells.iter().map(|c| c.auroc))?))
    }
}

/// Run metadata. Seeds and hash are absent for reports built by `eval`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub mode: Option<SourceMode>,
    pub master_seed: Option<u64>,
    pub data_seed: Option<u64>,
    pub backbone_seed: Option<u64>,
    pub probe_seed: Option<u64>,
    pub config_hash: Option<String>,
    pub classes: usize,
    pub temperature: f64,
    pub target_tpr: f64,
    pub ood_splits: Vec<String>,
    pub anomaly_splits: Vec<String>,
    pub scores: Vec<ScoreKind>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub meta: RunMeta,
    pub strategies: Vec<StrategyReport>,
}

impl EvalReport {
    pub fn strategy(&self, s: FusionStrategy) -> Option<&StrategyReport> {
        self.strategies.iter().find(|r| r.strategy == s)
    }

    /// Number of populated metric cells.
    pub fn cell_count(&self) -> usize {
        self.strategies
            .iter()
            .map(|s| 1 + s.ood.len() + 2 * s.anomaly.len())
            .sum()
    }

    /// Every configured cell present, in metadata order, with values in `[0, 1]`.
    pub fn validate(&self) -> Result<()> {
        ensure!(!self.strategies.is_empty(), "report has no strategies");
        let in_range = |v: f64| (0.0..=1.0).contains(&v);
        for s in &self.strategies {
            ensure!(in_range(s.id_accuracy), "{}: ID accuracy {} out of range", s.strategy, s.id_accuracy);
            let ood: Vec<&str> = s.ood.iter().map(|c| c.split.as_str()).collect();
            ensure!(ood == self.meta.ood_splits, "{}: OOD cells do not match metadata", s.strategy);
            for c in &s.ood {
                ensure!(in_range(c.accuracy), "{}/{}: accuracy out of range", s.strategy, c.split);
            }
            let expected: Vec<(&str, ScoreKind)> = self
                .meta
                .anomaly_splits
                .iter()
                .flat_map(|a| self.meta.scores.iter().map(move |k| (a.as_str(), *k)))
                .collect();
            let found: Vec<(&str, ScoreKind)> = s.anomaly.iter().map(|c| (c.split.as_str(), c.score)).collect();
            ensure!(found == expected, "{}: anomaly cells do not match metadata", s.strategy);
            for c in &s.anomaly {
                ensure!(
                    in_range(c.fpr) && in_range(c.auroc),
                    "{}/{}: metric out of range",
                    s.strategy,
                    c.split
                );
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::arg(format!("cannot serialize report: {e}")))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let r: EvalReport = serde_json::from_str(text)
            .map_err(|e| Error::config(Some(e.line()), format!("invalid report: {e}")))?;
        r.validate()?;
        Ok(r)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Features of one strategy, split by role.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSplits {
    pub id_train: Vec<FeatureVector>,
    pub id_test: Vec<FeatureVector>,
    pub ood: Vec<(String, Vec<FeatureVector>)>,
    pub anomaly: Vec<(String, Vec<FeatureVector>)>,
}

/// Fuse one split, rounding values to `f32` as the cache stores them.
pub fn fuse_split(split: &Split, strategy: FusionStrategy) -> Result<Vec<FeatureVector>> {
    split
        .samples
        .iter()
        .map(|s| {
            let values = fuse(&s.tokens, strategy)?;
            let f = match s.label {
                Some(y) => FeatureVector::labeled(values, y, split.tag)?,
                None => FeatureVector::anomaly(values),
            };
            Ok(f.quantized())
        })
        .collect()
}

pub fn fuse_dataset(dataset: &Dataset, strategy: FusionStrategy) -> Result<FeatureSplits> {
    let one = |tag: SplitTag| -> Result<Vec<FeatureVector>> {
        let split = dataset
            .with_tag(tag)
            .next()
            .ok_or_else(|| Error::arg(format!("dataset has no {tag:?} split")))?;
        fuse_split(split, strategy).map_err(|e| e.context(format!("split {}", split.name)))
    };
    let many = |tag: SplitTag| -> Result<Vec<(String, Vec<FeatureVector>)>> {
        dataset
            .with_tag(tag)
            .map(|s| {
                let f = fuse_split(s, strategy).map_err(|e| e.context(format!("split {}", s.name)))?;
                Ok((s.name.clone(), f))
            })
            .collect()
    };
    Ok(FeatureSplits {
        id_train: one(SplitTag::IdTrain)?,
        id_test: one(SplitTag::IdTest)?,
        ood: many(SplitTag::Ood)?,
        anomaly: many(SplitTag::Anomaly)?,
    })
}

/// What `evaluate_probe` needs besides the probe and features.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSettings {
    pub scores: Vec<ScoreKind>,
    pub temperature: f64,
    pub target_tpr: f64,
}

fn accuracy(samples: &[FeatureVector], logits: &[Vec<f64>]) -> Result<f64> {
    let mut preds = Vec::with_capacity(samples.len());
    let mut labels = Vec::with_capacity(samples.len());
    for (s, l) in samples.iter().zip(logits) {
        let y = s
            .label
            .ok_or_else(|| Error::arg("accuracy needs labelled samples"))?;
        labels.push(y);
        preds.push(crate::numerics::argmax(l));
    }
    top1_accuracy(&preds, &labels)
}

/// Score a trained probe on ID_TEST, each OOD split and each anomaly split.
///
/// ID_TEST samples are the positives for every anomaly metric.
pub fn evaluate_probe(
    strategy: FusionStrategy,
    params: &ProbeParams,
    id_test: &[FeatureVector],
    ood: &[(String, Vec<FeatureVector>)],
    anomaly: &[(String, Vec<FeatureVector>)],
    settings: &EvalSettings,
    exec: Exec,
) -> Result<StrategyReport> {
    let id_logits = logits_batch(id_test, params, exec).map_err(|e| e.context("split id_test"))?;
    let id_accuracy = accuracy(id_test, &id_logits).map_err(|e| e.context("split id_test"))?;

    let mut ood_cells = Vec::with_capacity(ood.len());
    for (name, samples) in ood {
        let ctx = |e: Error| e.context(format!("split {name}"));
        let logits = logits_batch(samples, params, exec).map_err(ctx)?;
        ood_cells.push(AccuracyCell {
            split: name.clone(),
            accuracy: accuracy(samples, &logits).map_err(ctx)?,
        });
    }

    let score_all = |logits: &[Vec<f64>], kind: ScoreKind| -> Result<Vec<f64>> {
        logits.iter().map(|l| score(kind, l, settings.temperature)).collect()
    };
    let mut anomaly_cells = Vec::with_capacity(anomaly.len() * settings.scores.len());
    for (name, samples) in anomaly {
        let ctx = |e: Error| e.context(format!("split {name}"));
        let logits = logits_batch(samples, params, exec).map_err(ctx)?;
        for &kind in &settings.scores {
            let set = BinaryScoreSet::new(score_all(&id_logits, kind)?, score_all(&logits, kind)?).map_err(ctx)?;
            anomaly_cells.push(AnomalyCell {
                split: name.clone(),
                score: kind,
                fpr: fpr_at_tpr(&set, settings.target_tpr).map_err(ctx)?,
                auroc: auroc(&set).map_err(ctx)?,
            });
        }
    }

    Ok(StrategyReport {
        strategy,
        id_accuracy,
        ood: ood_cells,
        anomaly: anomaly_cells,
    })
}

/// Cache file for one strategy and split inside an output directory.
pub fn cache_path(dir: &Path, strategy: FusionStrategy, split: &str) -> PathBuf {
    dir.join(strategy.name()).join(format!("{split}.rpf"))
}

pub fn probe_path(dir: &Path, strategy: FusionStrategy) -> PathBuf {
    dir.join(strategy.name()).join("probe.prb")
}

/// Write every split's cache for one strategy.
pub fn write_feature_caches(dir: &Path, features: &FeatureSplits, meta: &CacheMeta) -> Result<()> {
    let sub = dir.join(meta.strategy.name());
    fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
    write_cache(&cache_path(dir, meta.strategy, "id_train"), &features.id_train, meta)?;
    write_cache(&cache_path(dir, meta.strategy, "id_test"), &features.id_test, meta)?;
    for (name, samples) in features.ood.iter().chain(&features.anomaly) {
        write_cache(&cache_path(dir, meta.strategy, name), samples, meta)?;
    }
    Ok(())
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<EvalReport> {
    run_experiment_with(config, Exec::default())
}

/// As [`run_experiment`], choosing how strategies and batches are scheduled.
///
/// The report does not depend on `exec`.
pub fn run_experiment_with(config: &ExperimentConfig, exec: Exec) -> Result<EvalReport> {
    config.validate()?;
    let seeds = config.seeds();
    let (dataset, backbone) = build_dataset(config, exec)?;

    if let Some(dir) = &config.output_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        if let Some(bb) = &backbone {
            bb.save(&dir.join("backbone.wgt"))?;
        }
    }

    let settings = EvalSettings {
        scores: config.scores.clone(),
        temperature: config.temperature,
        target_tpr: config.target_tpr,
    };
    let train_cfg = config.train_config();
    let run_one = |strategy: FusionStrategy| -> Result<StrategyReport> {
        let features = fuse_dataset(&dataset, strategy)?;
        if let Some(dir) = &config.output_dir {
            let meta = CacheMeta {
                strategy,
                dim: dataset.dim,
                classes: dataset.classes,
                backbone_seed: seeds.backbone,
            };
            write_feature_caches(dir, &features, &meta)?;
        }
        let trained = train(&features.id_train, dataset.classes, &train_cfg).map_err(|e| e.context("split id_train"))?;
        if let Some(dir) = &config.output_dir {
            ProbeFile {
                strategy,
                params: trained.params.clone(),
                config: trained.config.clone(),
            }
            .save(&probe_path(dir, strategy))?;
        }
        evaluate_probe(
            strategy,
            &trained.params,
            &features.id_test,
            &features.ood,
            &features.anomaly,
            &settings,
            exec,
        )
    };
    let strategies = exec.try_map(&config.strategies, |&s| {
        run_one(s).map_err(|e| e.context(format!("strategy {s}")))
    })?;

    Ok(EvalReport {
        meta: RunMeta {
            mode: Some(config.mode),
            master_seed: Some(seeds.master),
            data_seed: Some(seeds.data),
            backbone_seed: (config.mode == SourceMode::Backbone).then_some(seeds.backbone),
            probe_seed: Some(seeds.probe),
            config_hash: Some(config.hash()),
            classes: dataset.classes,
            temperature: config.temperature,
            target_tpr: config.target_tpr,
            ood_splits: config.dataset.ood.iter().map(|s| s.name.clone()).collect(),
            anomaly_splits: config.dataset.anomaly.iter().map(|s| s.name.clone()).collect(),
            scores: config.scores.clone(),
        },
        strategies,
    })
}
