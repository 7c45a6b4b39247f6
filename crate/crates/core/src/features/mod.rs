//! Token pooling and construction of the linear-probe input.
//!
//! Pooling always runs on post-final-LayerNorm tokens, and concatenated
//! features are not re-normalized.

mod cache;

pub use cache::{decode_cache, encode_cache, read_cache, write_cache, CacheMeta, CACHE_MAGIC};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::backbone::TokenSet;
use crate::error::{ensure, Error, Result};
use crate::numerics::Matrix;

/// Which token embeddings make up the probe input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionStrategy {
    /// `[c ; μ_P]`
    ClsPatch,
    /// `[c ; μ_R]`
    ClsReg,
    /// `c`
    ClsOnly,
    /// `μ_R`
    RegOnly,
}

impl FusionStrategy {
    pub const ALL: [FusionStrategy; 4] = [
        FusionStrategy::ClsPatch,
        FusionStrategy::ClsReg,
        FusionStrategy::ClsOnly,
        FusionStrategy::RegOnly,
    ];

    pub fn width(self, dim: usize) -> usize {
        match self {
            FusionStrategy::ClsPatch | FusionStrategy::ClsReg => 2 * dim,
            FusionStrategy::ClsOnly | FusionStrategy::RegOnly => dim,
        }
    }

    pub fn uses_registers(self) -> bool {
        matches!(self, FusionStrategy::ClsReg | FusionStrategy::RegOnly)
    }

    pub fn tag(self) -> u8 {
        match self {
            FusionStrategy::ClsPatch => 0,
            FusionStrategy::ClsReg => 1,
            FusionStrategy::ClsOnly => 2,
            FusionStrategy::RegOnly => 3,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|s| s.tag() == tag)
    }

    /// Identifier used in config files, CSV and file names.
    pub fn name(self) -> &'static str {
        match self {
            FusionStrategy::ClsPatch => "cls_patch",
            FusionStrategy::ClsReg => "cls_reg",
            FusionStrategy::ClsOnly => "cls_only",
            FusionStrategy::RegOnly => "reg_only",
        }
    }

    /// Table label.
    pub fn label(self) -> &'static str {
        match self {
            FusionStrategy::ClsPatch => "CLS;μ_P",
            FusionStrategy::ClsReg => "CLS;μ_R",
            FusionStrategy::ClsOnly => "CLS",
            FusionStrategy::RegOnly => "μ_R",
        }
    }
}

impl fmt::Display for FusionStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FusionStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s.trim())
            .ok_or_else(|| {
                Error::arg(format!(
                    "unknown strategy {s:?} (expected cls_patch, cls_reg, cls_only or reg_only)"
                ))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitTag {
    IdTrain,
    IdTest,
    Ood,
    Anomaly,
}

impl SplitTag {
    pub fn tag(self) -> u8 {
        match self {
            SplitTag::IdTrain => 0,
            SplitTag::IdTest => 1,
            SplitTag::Ood => 2,
            SplitTag::Anomaly => 3,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        [SplitTag::IdTrain, SplitTag::IdTest, SplitTag::Ood, SplitTag::Anomaly]
            .into_iter()
            .find(|s| s.tag() == tag)
    }
}

/// One probe input `f` with its label. Anomaly samples carry no label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub label: Option<usize>,
    pub split: SplitTag,
}

impl FeatureVector {
    pub fn labeled(values: Vec<f64>, label: usize, split: SplitTag) -> Result<Self> {
        ensure!(
            split != SplitTag::Anomaly,
            "anomaly samples cannot carry a class label"
        );
        Ok(FeatureVector {
            values,
            label: Some(label),
            split,
        })
    }

    pub fn anomaly(values: Vec<f64>) -> Self {
        FeatureVector {
            values,
            label: None,
            split: SplitTag::Anomaly,
        }
    }

    pub fn width(&self) -> usize {
        self.values.len()
    }

    /// Round every value to the nearest `f32`, as the cache stores it.
    pub fn quantized(mut self) -> Self {
        for v in &mut self.values {
            *v = f64::from(*v as f32);
        }
        self
    }
}

/// Arithmetic mean over the rows of `tokens`.
pub fn mean_pool(tokens: &Matrix) -> Result<Vec<f64>> {
    ensure!(tokens.rows() >= 1, "cannot pool empty token set");
    let mut acc = vec![0.0; tokens.cols()];
    for row in tokens.iter_rows() {
        for (a, v) in acc.iter_mut().zip(row) {
            *a += v;
        }
    }
    let n = tokens.rows() as f64;
    for a in &mut acc {
        *a /= n;
    }
    Ok(acc)
}

/// Build the probe input for `strategy`. Concatenations put CLS first.
pub fn fuse(tokens: &TokenSet, strategy: FusionStrategy) -> Result<Vec<f64>> {
    if strategy.uses_registers() && tokens.num_registers() == 0 {
        return Err(Error::arg(format!(
            "cannot pool empty token set: strategy {strategy} needs registers but the backbone has none"
        )));
    }
    let out = match strategy {
        FusionStrategy::ClsOnly => tokens.cls.clone(),
        FusionStrategy::RegOnly => mean_pool(&tokens.registers)?,
        FusionStrategy::ClsPatch => concat(&tokens.cls, &mean_pool(&tokens.patches)?),
        FusionStrategy::ClsReg => concat(&tokens.cls, &mean_pool(&tokens.registers)?),
    };
    Ok(out)
}

/// Mean of a chosen subset of register tokens.
///
/// Diagnostic only; the fusion strategies always average every register.
pub fn pool_register_subset(tokens: &TokenSet, indices: &[usize]) -> Result<Vec<f64>> {
    ensure!(!indices.is_empty(), "cannot pool empty token set");
    let m = tokens.num_registers();
    ensure!(
        indices.iter().all(|&i| i < m),
        "register index out of range for {m} registers: {indices:?}"
    );
    let rows: Vec<Vec<f64>> = indices.iter().map(|&i| tokens.registers.row(i).to_vec()).collect();
    mean_pool(&Matrix::from_rows(&rows)?)
}

fn concat(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    out.extend_from_slice(a);
    out.extend_from_slice(b);
    out
}
