//! Bayes-optimal classifier computed from the generating parameters.
//!
//! In direct mode every fused feature is a Gaussian mixture with diagonal
//! covariance: the CLS half has variance `σ²`, a patch mean `σ²/L` and a
//! register mean `σ²/M`. The CLS_PATCH class-conditional density mixes over
//! the random patch class `z`. The classifier here knows only the ID
//! generating process, so its accuracy on OOD samples measures how much
//! each fusion can carry over under shift, independent of probe training.

use serde::{Deserialize, Serialize};

use super::config::DatasetSpec;
use super::synth::{SampleSource, SyntheticWorld};
use crate::error::{ensure, Result};
use crate::features::{fuse, FusionStrategy};
use crate::numerics::{argmax, logsumexp, SeededRng};

pub struct BayesOracle<'a> {
    spec: &'a DatasetSpec,
    world: &'a SyntheticWorld,
    strategy: FusionStrategy,
    /// Per class: mixture component means.
    components: Vec<Vec<Vec<f64>>>,
    inv_var: Vec<f64>,
}

impl<'a> BayesOracle<'a> {
    pub fn new(spec: &'a DatasetSpec, world: &'a SyntheticWorld, strategy: FusionStrategy) -> Result<Self> {
        ensure!(spec.sigma > 0.0, "the Bayes oracle needs sigma > 0");
        ensure!(
            !strategy.uses_registers() || spec.registers > 0,
            "strategy {strategy} needs registers"
        );
        let d = spec.dim;
        let s2 = spec.sigma * spec.sigma;
        let rho = spec.spurious_alignment;
        let (c, l, m) = (spec.classes, spec.patches as f64, spec.registers as f64);

        let cls = |y: usize| world.class_means.row(y).to_vec();
        let reg = |y: usize| -> Vec<f64> {
            world.class_means.row(y).iter().zip(world.robust_dirs.row(y)).map(|(g, r)| g + r).collect()
        };
        let patch = |y: usize, z: usize| -> Vec<f64> {
            (0..d)
                .map(|i| {
                    world.class_means.get(y, i)
                        + rho * world.spurious_dirs.get(y, i)
                        + (1.0 - rho) * world.spurious_dirs.get(z, i)
                })
                .collect()
        };
        let concat = |a: Vec<f64>, b: Vec<f64>| [a, b].concat();

        let components: Vec<Vec<Vec<f64>>> = (0..c)
            .map(|y| match strategy {
                FusionStrategy::ClsPatch => (0..c).map(|z| concat(cls(y), patch(y, z))).collect(),
                FusionStrategy::ClsReg => vec![concat(cls(y), reg(y))],
                FusionStrategy::ClsOnly => vec![cls(y)],
                FusionStrategy::RegOnly => vec![reg(y)],
            })
            .collect();
        let var: Vec<f64> = match strategy {
            FusionStrategy::ClsPatch => [vec![s2; d], vec![s2 / l; d]].concat(),
            FusionStrategy::ClsReg => [vec![s2; d], vec![s2 / m; d]].concat(),
            FusionStrategy::ClsOnly => vec![s2; d],
            FusionStrategy::RegOnly => vec![s2 / m; d],
        };
        Ok(BayesOracle {
            spec,
            world,
            strategy,
            components,
            inv_var: var.into_iter().map(|v| 1.0 / v).collect(),
        })
    }

    /// Class maximizing the ID posterior (uniform prior).
    pub fn classify(&self, f: &[f64]) -> Result<usize> {
        let mut scores = Vec::with_capacity(self.components.len());
        for comps in &self.components {
            // Shared normalizing constants and uniform mixture weights cancel.
            let logs: Vec<f64> = comps
                .iter()
                .map(|mu| {
                    -0.5 * f
                        .iter()
                        .zip(mu)
                        .zip(&self.inv_var)
                        .map(|((x, m), w)| (x - m) * (x - m) * w)
                        .sum::<f64>()
                })
                .collect();
            scores.push(logsumexp(&logs)?);
        }
        Ok(argmax(&scores))
    }

    /// Monte-Carlo accuracy on fresh samples drawn with the given alignment and offset.
    pub fn accuracy(&self, per_class: usize, alignment: f64, offset: &[f64], rng: &mut SeededRng) -> Result<f64> {
        let mut correct = 0usize;
        for label in 0..self.spec.classes {
            for _ in 0..per_class {
                let source = SampleSource::Class {
                    label,
                    alignment,
                    offset,
                };
                let tokens = self.world.sample(self.spec, source, rng);
                if self.classify(&fuse(&tokens, self.strategy)?)? == label {
                    correct += 1;
                }
            }
        }
        Ok(correct as f64 / (per_class * self.spec.classes) as f64)
    }
}

/// Bayes-oracle accuracies of CLS_REG against CLS_PATCH.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvantageCheck {
    pub cls_reg_id: f64,
    pub cls_patch_id: f64,
    /// Mean over OOD splits.
    pub cls_reg_ood: f64,
    pub cls_patch_ood: f64,
}

impl AdvantageCheck {
    pub fn id_gap(&self) -> f64 {
        (self.cls_reg_id - self.cls_patch_id).abs()
    }

    pub fn ood_gain(&self) -> f64 {
        self.cls_reg_ood - self.cls_patch_ood
    }

    pub fn passes(&self, min_ood_gain: f64, max_id_gap: f64) -> bool {
        self.ood_gain() >= min_ood_gain && self.id_gap() <= max_id_gap
    }
}

/// Evaluate the Bayes oracle for CLS_REG and CLS_PATCH on a spec.
///
/// The world is rebuilt from `data_rng` exactly as [`super::synth::gen_synthetic`]
/// builds it; evaluation samples come from a separate stream.
pub fn validate_register_advantage(spec: &DatasetSpec, data_rng: &SeededRng, per_class: usize) -> Result<AdvantageCheck> {
    spec.validate()?;
    ensure!(!spec.ood.is_empty(), "the register-advantage check needs an OOD split");
    ensure!(per_class >= 1, "per_class must be at least 1");
    let world = SyntheticWorld::new(spec, &mut data_rng.split("world"));
    let zero = vec![0.0; spec.dim];
    let mut rng = data_rng.split("bayes-oracle");

    let mut run = |strategy| -> Result<(f64, f64)> {
        let oracle = BayesOracle::new(spec, &world, strategy)?;
        let id = oracle.accuracy(per_class, spec.spurious_alignment, &zero, &mut rng)?;
        let mut ood = 0.0;
        for (s, offset) in spec.ood.iter().zip(&world.ood_offsets) {
            let a = s.alignment.unwrap_or(spec.spurious_alignment);
            ood += oracle.accuracy(per_class, a, offset, &mut rng)?;
        }
        Ok((id, ood / spec.ood.len() as f64))
    };
    let (cls_reg_id, cls_reg_ood) = run(FusionStrategy::ClsReg)?;
    let (cls_patch_id, cls_patch_ood) = run(FusionStrategy::ClsPatch)?;
    Ok(AdvantageCheck {
        cls_reg_id,
        cls_patch_id,
        cls_reg_ood,
        cls_patch_ood,
    })
}
