//! Experiment configuration and its flat `key = value` file format.
//!
//! Blank lines and lines starting with `#` are ignored. Split keys carry
//! the split name after a dot and take space-separated `field=value`
//! pairs:
//!
//! ```text
//! ood.decorrelated = per_class=500 shift=0.0 alignment=0.0
//! anomaly.far = count=1000 displacement=6
//! ```
//!
//! See the README for the full key list.

use std::collections::HashSet;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backbone::BackboneConfig;
use crate::error::{Error, Result};
use crate::features::FusionStrategy;
use crate::metrics::DEFAULT_TARGET_TPR;
use crate::numerics::{derive_seed, DEFAULT_LAYERNORM_EPS};
use crate::probe::TrainConfig;
use crate::scoring::ScoreKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceMode {
    /// Token sets are synthesized directly from class-conditional Gaussians.
    Direct,
    /// Synthetic images are passed through the toy backbone.
    Backbone,
}

impl SourceMode {
    pub fn name(self) -> &'static str {
        match self {
            SourceMode::Direct => "direct",
            SourceMode::Backbone => "backbone",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OodSplitSpec {
    pub name: String,
    pub per_class: usize,
    /// Norm of a fixed offset added to every token (or pixel) of the split.
    pub shift: f64,
    /// How strongly patch content follows the label; the ID value applies
    /// when `None`.
    pub alignment: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalySplitSpec {
    pub name: String,
    pub count: usize,
    /// Distance of the anomaly mean from every class mean, in units of σ.
    pub displacement: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub classes: usize,
    pub dim: usize,
    pub registers: usize,
    /// Patch tokens per sample in direct mode.
    pub patches: usize,
    /// Per-token Gaussian noise.
    pub sigma: f64,
    /// Per-coordinate standard deviation of the class means.
    pub class_scale: f64,
    /// Per-coordinate standard deviation of the label-stable register directions.
    pub robust_scale: f64,
    /// Per-coordinate standard deviation of the patch-borne spurious directions.
    pub spurious_scale: f64,
    /// ID weight on the label's own spurious direction (rest: a random class's).
    pub spurious_alignment: f64,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub ood: Vec<OodSplitSpec>,
    pub anomaly: Vec<AnomalySplitSpec>,
}

impl Default for DatasetSpec {
    /// The register-advantage setting: C=5, D=32, 500+500 per class, σ=0.5,
    /// spurious alignment 0.9 in ID and 0.0 in OOD.
    fn default() -> Self {
        DatasetSpec {
            classes: 5,
            dim: 32,
            registers: 4,
            patches: 16,
            sigma: 0.5,
            class_scale: 0.1,
            robust_scale: 0.2,
            spurious_scale: 0.2,
            spurious_alignment: 0.9,
            train_per_class: 500,
            test_per_class: 500,
            ood: vec![
                OodSplitSpec {
                    name: "decorrelated".into(),
                    per_class: 500,
                    shift: 0.0,
                    alignment: Some(0.0),
                },
                OodSplitSpec {
                    name: "shifted".into(),
                    per_class: 500,
                    shift: 0.5,
                    alignment: Some(0.0),
                },
            ],
            anomaly: vec![
                AnomalySplitSpec {
                    name: "far".into(),
                    count: 1000,
                    displacement: 6.0,
                },
                AnomalySplitSpec {
                    name: "farther".into(),
                    count: 1000,
                    displacement: 9.0,
                },
            ],
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::config(None, m));
        if self.classes < 2 {
            return fail(format!("classes must be at least 2, got {}", self.classes));
        }
        if self.dim == 0 || self.patches == 0 {
            return fail("dim and patches must be positive".into());
        }
        if self.train_per_class == 0 || self.test_per_class == 0 {
            return fail("per-class train and test counts must be at least 1".into());
        }
        for (name, v) in [
            ("sigma", self.sigma),
            ("class_scale", self.class_scale),
            ("robust_scale", self.robust_scale),
            ("spurious_scale", self.spurious_scale),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return fail(format!("{name} must be a finite non-negative number, got {v}"));
            }
        }
        check_unit("spurious_alignment", self.spurious_alignment)?;
        let mut names = HashSet::from(["id_train".to_string(), "id_test".to_string()]);
        for s in &self.ood {
            check_split_name(&s.name)?;
            if !names.insert(s.name.clone()) {
                return fail(format!("duplicate split name {:?}", s.name));
            }
            if s.per_class == 0 {
                return fail(format!("OOD split {:?} needs per_class ≥ 1", s.name));
            }
            if !(s.shift >= 0.0 && s.shift.is_finite()) {
                return fail(format!("OOD split {:?} has invalid shift {}", s.name, s.shift));
            }
            if let Some(a) = s.alignment {
                check_unit("alignment", a)?;
            }
        }
        for s in &self.anomaly {
            check_split_name(&s.name)?;
            if !names.insert(s.name.clone()) {
                return fail(format!("duplicate split name {:?}", s.name));
            }
            if s.count == 0 {
                return fail(format!("anomaly split {:?} needs count ≥ 1", s.name));
            }
            if !(s.displacement >= 0.0 && s.displacement.is_finite()) {
                return fail(format!(
                    "anomaly split {:?} has invalid displacement {}",
                    s.name, s.displacement
                ));
            }
        }
        Ok(())
    }
}

fn check_unit(name: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::config(None, format!("{name} must lie in [0, 1], got {v}")))
    }
}

fn check_split_name(name: &str) -> Result<()> {
    let ok = !name.is_empty()
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-');
    if ok {
        Ok(())
    } else {
        Err(Error::config(
            None,
            format!("split name {name:?} must be non-empty ASCII letters, digits, '_' or '-'"),
        ))
    }
}

/// Seeds for each independent random stream of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedPlan {
    pub master: u64,
    pub data: u64,
    pub backbone: u64,
    pub probe: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub data_seed: Option<u64>,
    pub backbone_seed: Option<u64>,
    pub probe_seed: Option<u64>,
    pub mode: SourceMode,
    pub dataset: DatasetSpec,
    pub image_size: usize,
    pub patch_size: usize,
    pub depth: usize,
    pub heads: usize,
    pub layernorm_eps: f64,
    pub strategies: Vec<FusionStrategy>,
    pub train: TrainConfig,
    pub scores: Vec<ScoreKind>,
    pub temperature: f64,
    pub target_tpr: f64,
    pub output_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let bb = BackboneConfig::default();
        ExperimentConfig {
            seed: 0,
            data_seed: None,
            backbone_seed: None,
            probe_seed: None,
            mode: SourceMode::Direct,
            dataset: DatasetSpec::default(),
            image_size: bb.image_size,
            patch_size: bb.patch_size,
            depth: bb.depth,
            heads: bb.heads,
            layernorm_eps: DEFAULT_LAYERNORM_EPS,
            strategies: FusionStrategy::ALL.to_vec(),
            train: TrainConfig::default(),
            scores: ScoreKind::ALL.to_vec(),
            temperature: 1.0,
            target_tpr: DEFAULT_TARGET_TPR,
            output_dir: None,
        }
    }
}

impl ExperimentConfig {
    /// Sub-seeds derived from the master seed unless overridden.
    pub fn seeds(&self) -> SeedPlan {
        SeedPlan {
            master: self.seed,
            data: self.data_seed.unwrap_or_else(|| derive_seed(self.seed, "data")),
            backbone: self
                .backbone_seed
                .unwrap_or_else(|| derive_seed(self.seed, "backbone")),
            probe: self.probe_seed.unwrap_or_else(|| derive_seed(self.seed, "probe")),
        }
    }

    pub fn backbone_config(&self) -> BackboneConfig {
        BackboneConfig {
            image_size: self.image_size,
            patch_size: self.patch_size,
            channels: 3,
            embed_dim: self.dataset.dim,
            depth: self.depth,
            heads: self.heads,
            num_registers: self.dataset.registers,
            layernorm_eps: self.layernorm_eps,
            seed: self.seeds().backbone,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            shuffle_seed: self.seeds().probe,
            ..self.train.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        let fail = |m: String| Err(Error::config(None, m));
        if self.strategies.is_empty() {
            return fail("at least one strategy is required".into());
        }
        if self.scores.is_empty() {
            return fail("at least one score is required".into());
        }
        if self.dataset.registers == 0 {
            if let Some(s) = self.strategies.iter().find(|s| s.uses_registers()) {
                return fail(format!("strategy {s} needs registers but registers = 0"));
            }
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return fail(format!("temperature must be positive, got {}", self.temperature));
        }
        if !(self.target_tpr > 0.0 && self.target_tpr <= 1.0) {
            return fail(format!("target_tpr must lie in (0, 1], got {}", self.target_tpr));
        }
        self.train
            .validate()
            .map_err(|e| Error::config(None, e.to_string()))?;
        if self.mode == SourceMode::Backbone {
            self.backbone_config()
                .validate()
                .map_err(|e| Error::config(None, e.to_string()))?;
        }
        Ok(())
    }

    /// Parse a config file body. Unknown or repeated keys are errors.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig {
            dataset: DatasetSpec {
                ood: Vec::new(),
                anomaly: Vec::new(),
                ..DatasetSpec::default()
            },
            ..ExperimentConfig::default()
        };
        let mut seen = HashSet::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::config(Some(line_no), format!("expected `key = value`, got {line:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(Error::config(Some(line_no), format!("duplicate key {key:?}")));
            }
            let at = |e: Error| match e {
                Error::Config { message, .. } => Error::config(Some(line_no), message),
                other => Error::config(Some(line_no), other.to_string()),
            };
            cfg.apply(key, value).map_err(at)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        let d = &mut self.dataset;
        if let Some(name) = key.strip_prefix("ood.") {
            d.ood.push(parse_ood(name, value, d.test_per_class)?);
            return Ok(());
        }
        if let Some(name) = key.strip_prefix("anomaly.") {
            d.anomaly.push(parse_anomaly(name, value)?);
            return Ok(());
        }
        match key {
            "seed" => self.seed = num(key, value)?,
            "data_seed" => self.data_seed = Some(num(key, value)?),
            "backbone_seed" => self.backbone_seed = Some(num(key, value)?),
            "probe_seed" => self.probe_seed = Some(num(key, value)?),
            "mode" => {
                self.mode = match value {
                    "direct" => SourceMode::Direct,
                    "backbone" => SourceMode::Backbone,
                    other => {
                        return Err(Error::config(
                            None,
                            format!("mode must be direct or backbone, got {other:?}"),
                        ))
                    }
                }
            }
            "classes" => d.classes = num(key, value)?,
            "dim" => d.dim = num(key, value)?,
            "registers" => d.registers = num(key, value)?,
            "patches" => d.patches = num(key, value)?,
            "sigma" => d.sigma = num(key, value)?,
            "class_scale" => d.class_scale = num(key, value)?,
            "robust_scale" => d.robust_scale = num(key, value)?,
            "spurious_scale" => d.spurious_scale = num(key, value)?,
            "spurious_alignment" => d.spurious_alignment = num(key, value)?,
            "train_per_class" => d.train_per_class = num(key, value)?,
            "test_per_class" => d.test_per_class = num(key, value)?,
            "image_size" => self.image_size = num(key, value)?,
            "patch_size" => self.patch_size = num(key, value)?,
            "depth" => self.depth = num(key, value)?,
            "heads" => self.heads = num(key, value)?,
            "layernorm_eps" => self.layernorm_eps = num(key, value)?,
            "strategies" => self.strategies = list(value)?,
            "iterations" => self.train.iterations = num(key, value)?,
            "lr" => self.train.learning_rate = num(key, value)?,
            "batch" => self.train.batch_size = num(key, value)?,
            "momentum" => self.train.momentum = num(key, value)?,
            "bias" => self.train.bias = boolean(key, value)?,
            "scores" => self.scores = list(value)?,
            "temperature" => self.temperature = num(key, value)?,
            "target_tpr" => self.target_tpr = num(key, value)?,
            "output_dir" => self.output_dir = Some(PathBuf::from(value)),
            other => return Err(Error::config(None, format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Canonical text form; parsing it yields an identical config.
    pub fn to_config_text(&self) -> String {
        let d = &self.dataset;
        let join = |xs: Vec<&str>| xs.join(", ");
        let mut lines = vec![format!("seed = {}", self.seed)];
        for (k, v) in [
            ("data_seed", self.data_seed),
            ("backbone_seed", self.backbone_seed),
            ("probe_seed", self.probe_seed),
        ] {
            if let Some(v) = v {
                lines.push(format!("{k} = {v}"));
            }
        }
        lines.extend([
            format!("mode = {}", self.mode.name()),
            format!("classes = {}", d.classes),
            format!("dim = {}", d.dim),
            format!("registers = {}", d.registers),
            format!("patches = {}", d.patches),
            format!("sigma = {:?}", d.sigma),
            format!("class_scale = {:?}", d.class_scale),
            format!("robust_scale = {:?}", d.robust_scale),
            format!("spurious_scale = {:?}", d.spurious_scale),
            format!("spurious_alignment = {:?}", d.spurious_alignment),
            format!("train_per_class = {}", d.train_per_class),
            format!("test_per_class = {}", d.test_per_class),
            format!("image_size = {}", self.image_size),
            format!("patch_size = {}", self.patch_size),
            format!("depth = {}", self.depth),
            format!("heads = {}", self.heads),
            format!("layernorm_eps = {:?}", self.layernorm_eps),
            format!("strategies = {}", join(self.strategies.iter().map(|s| s.name()).collect())),
            format!("iterations = {}", self.train.iterations),
            format!("lr = {:?}", self.train.learning_rate),
            format!("batch = {}", self.train.batch_size),
            format!("momentum = {:?}", self.train.momentum),
            format!("bias = {}", self.train.bias),
            format!("scores = {}", join(self.scores.iter().map(|s| s.name()).collect())),
            format!("temperature = {:?}", self.temperature),
            format!("target_tpr = {:?}", self.target_tpr),
        ]);
        for s in &d.ood {
            let alignment = s.alignment.map_or_else(|| "id".to_string(), |a| format!("{a:?}"));
            let v = format!("per_class={} shift={:?} alignment={alignment}", s.per_class, s.shift);
            lines.push(format!("ood.{} = {v}", s.name));
        }
        for s in &d.anomaly {
            lines.push(format!(
                "anomaly.{} = count={} displacement={:?}",
                s.name, s.count, s.displacement
            ));
        }
        if let Some(dir) = &self.output_dir {
            lines.push(format!("output_dir = {}", dir.display()));
        }
        let mut out = lines.join("\n");
        out.push('\n');
        out
    }

    /// SHA-256 of the canonical text, hex encoded. `output_dir` is excluded
    /// so that where results go does not change what was run.
    pub fn hash(&self) -> String {
        let canonical = ExperimentConfig {
            output_dir: None,
            ..self.clone()
        }
        .to_config_text();
        Sha256::digest(canonical.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

fn num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::config(None, format!("invalid value {value:?} for {key}")))
}

fn boolean(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(Error::config(None, format!("invalid boolean {value:?} for {key}"))),
    }
}

fn list<T: FromStr<Err = Error>>(value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|e: Error| Error::config(None, e.to_string())))
        .collect()
}

fn fields(value: &str) -> Result<Vec<(&str, &str)>> {
    value
        .split_whitespace()
        .map(|kv| {
            kv.split_once('=')
                .ok_or_else(|| Error::config(None, format!("expected field=value, got {kv:?}")))
        })
        .collect()
}

fn parse_ood(name: &str, value: &str, default_per_class: usize) -> Result<OodSplitSpec> {
    let mut spec = OodSplitSpec {
        name: name.to_string(),
        per_class: default_per_class,
        shift: 0.0,
        alignment: Some(0.0),
    };
    for (k, v) in fields(value)? {
        match k {
            "per_class" => spec.per_class = num(k, v)?,
            "shift" => spec.shift = num(k, v)?,
            "alignment" => {
                spec.alignment = match v {
                    "id" => None,
                    _ => Some(num(k, v)?),
                }
            }
            other => {
                return Err(Error::config(None, format!("unknown OOD field {other:?}")));
            }
        }
    }
    Ok(spec)
}

fn parse_anomaly(name: &str, value: &str) -> Result<AnomalySplitSpec> {
    let mut spec = AnomalySplitSpec {
        name: name.to_string(),
        count: 1000,
        displacement: 6.0,
    };
    for (k, v) in fields(value)? {
        match k {
            "count" => spec.count = num(k, v)?,
            "displacement" => spec.displacement = num(k, v)?,
            other => {
                return Err(Error::config(None, format!("unknown anomaly field {other:?}")));
            }
        }
    }
    Ok(spec)
}
