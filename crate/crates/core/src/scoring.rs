//! Anomaly scores from probe logits. Both scores are oriented so that a
//! higher value means "more in-distribution".

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::numerics::{argmax, logsumexp, softmax};
use crate::par::Exec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    Msp,
    Energy,
}

impl ScoreKind {
    pub const ALL: [ScoreKind; 2] = [ScoreKind::Msp, ScoreKind::Energy];

    pub fn name(self) -> &'static str {
        match self {
            ScoreKind::Msp => "msp",
            ScoreKind::Energy => "energy",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            ScoreKind::Msp => "MSP",
            ScoreKind::Energy => "Energy",
        }
    }
}

impl fmt::Display for ScoreKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScoreKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "msp" => Ok(ScoreKind::Msp),
            "energy" => Ok(ScoreKind::Energy),
            other => Err(Error::arg(format!("unknown score {other:?} (expected msp or energy)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Id,
    Anomaly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredSample {
    pub logits: Vec<f64>,
    pub msp: f64,
    pub energy_score: f64,
    pub provenance: Provenance,
    pub predicted: usize,
}

impl ScoredSample {
    pub fn new(logits: Vec<f64>, temperature: f64, provenance: Provenance) -> Result<Self> {
        Ok(ScoredSample {
            msp: msp_score(&logits)?,
            energy_score: energy_score(&logits, temperature)?,
            predicted: argmax(&logits),
            logits,
            provenance,
        })
    }

    pub fn score(&self, kind: ScoreKind) -> f64 {
        match kind {
            ScoreKind::Msp => self.msp,
            ScoreKind::Energy => self.energy_score,
        }
    }
}

/// Maximum softmax probability.
pub fn msp_score(logits: &[f64]) -> Result<f64> {
    ensure!(logits.len() >= 2, "msp needs at least 2 classes, got {}", logits.len());
    let p = softmax(logits)?;
    Ok(p.into_iter().fold(f64::NEG_INFINITY, f64::max))
}

/// Negative free energy, `T · logsumexp(logits / T)`.
pub fn energy_score(logits: &[f64], temperature: f64) -> Result<f64> {
    ensure!(
        temperature > 0.0 && temperature.is_finite(),
        "temperature must be positive, got {temperature}"
    );
    let scaled: Vec<f64> = logits.iter().map(|z| z / temperature).collect();
    Ok(temperature * logsumexp(&scaled)?)
}

pub fn score(kind: ScoreKind, logits: &[f64], temperature: f64) -> Result<f64> {
    match kind {
        ScoreKind::Msp => msp_score(logits),
        ScoreKind::Energy => energy_score(logits, temperature),
    }
}

/// Score a batch of logit vectors; output order matches input order.
pub fn score_batch(
    logits: &[Vec<f64>],
    temperature: f64,
    provenance: Provenance,
    exec: Exec,
) -> Result<Vec<ScoredSample>> {
    exec.try_map(logits, |l| ScoredSample::new(l.clone(), temperature, provenance))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::SeededRng;

    #[test]
    fn msp_reference_values() {
        assert_eq!(msp_score(&[0.0; 4]).unwrap(), 0.25);
        let e2 = 2f64.exp();
        let want = e2 / (e2 + 2.0);
        assert!((msp_score(&[2.0, 0.0, 0.0]).unwrap() - want).abs() < 1e-15);
        assert!((want - 0.786_986).abs() < 1e-6);
        assert!(msp_score(&[1.0]).is_err());
    }

    #[test]
    fn energy_reference_values() {
        assert!((energy_score(&[0.0; 5], 1.0).unwrap() - 5f64.ln()).abs() < 1e-15);
        let want = (1f64.exp() + 1.0).ln();
        assert!((energy_score(&[1.0, 0.0], 1.0).unwrap() - want).abs() < 1e-15);
        assert!((want - 1.313_262).abs() < 1e-6);
        assert!(energy_score(&[1.0, 0.0], 0.0).is_err());
        assert!(energy_score(&[1.0, 0.0], -1.0).is_err());
    }

    #[test]
    fn energy_high_temperature_limit() {
        let logits = [0.3, -1.2, 2.5, 0.0];
        let t = 1e6;
        let mean = logits.iter().sum::<f64>() / 4.0;
        let limit = t * 4f64.ln() + mean;
        assert!((energy_score(&logits, t).unwrap() - limit).abs() <= 1e-6);
    }

    #[test]
    fn shift_identities() {
        let mut rng = SeededRng::new(31);
        for _ in 0..100 {
            let c = 2 + rng.below(8);
            let v: Vec<f64> = (0..c).map(|_| rng.gaussian(0.0, 3.0)).collect();
            let shift = rng.gaussian(0.0, 10.0);
            let moved: Vec<f64> = v.iter().map(|x| x + shift).collect();
            assert!((msp_score(&v).unwrap() - msp_score(&moved).unwrap()).abs() <= 1e-12);
            let e = energy_score(&v, 1.0).unwrap();
            assert!((energy_score(&moved, 1.0).unwrap() - (e + shift)).abs() <= 1e-9);
            let m = msp_score(&v).unwrap();
            assert!(m >= 1.0 / c as f64 && m < 1.0);
        }
    }

    #[test]
    fn two_class_energy_matches_closed_form_and_ranking() {
        let mut rng = SeededRng::new(77);
        let mut pairs = Vec::new();
        for _ in 0..300 {
            let logits = [rng.gaussian(0.0, 2.0), rng.gaussian(0.0, 2.0)];
            let max = logits[0].max(logits[1]);
            let gap = (logits[0] - logits[1]).abs();
            let closed_form = max + (1.0 + (-gap).exp()).ln();
            let energy = energy_score(&logits, 1.0).unwrap();
            assert!((energy - closed_form).abs() <= 1e-12);
            pairs.push((energy, closed_form));
        }
        let mut by_energy: Vec<usize> = (0..pairs.len()).collect();
        let mut by_closed = by_energy.clone();
        by_energy.sort_by(|&a, &b| pairs[a].0.total_cmp(&pairs[b].0));
        by_closed.sort_by(|&a, &b| pairs[a].1.total_cmp(&pairs[b].1));
        assert_eq!(by_energy, by_closed);
    }

    #[test]
    fn two_class_monotonicity_in_gap() {
        let mut prev_fixed_max = (f64::NEG_INFINITY, f64::INFINITY);
        let mut prev_fixed_min = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for i in 0..200 {
            let gap = i as f64 * 0.05;
            // Top logit held fixed: MSP rises, energy falls toward the max.
            let fixed_max = [1.0, 1.0 - gap];
            let msp = msp_score(&fixed_max).unwrap();
            let energy = energy_score(&fixed_max, 1.0).unwrap();
            // Runner-up held fixed: both rise.
            let fixed_min = [1.0 + gap, 1.0];
            let msp2 = msp_score(&fixed_min).unwrap();
            let energy2 = energy_score(&fixed_min, 1.0).unwrap();
            if i > 0 {
                assert!(msp > prev_fixed_max.0);
                assert!(energy < prev_fixed_max.1);
                assert!(msp2 > prev_fixed_min.0);
                assert!(energy2 > prev_fixed_min.1);
            }
            assert!((msp - msp2).abs() <= 1e-12);
            prev_fixed_max = (msp, energy);
            prev_fixed_min = (msp2, energy2);
        }
    }

    #[test]
    fn scored_sample_fields() {
        let s = ScoredSample::new(vec![0.0, 3.0, 3.0], 1.0, Provenance::Id).unwrap();
        assert_eq!(s.predicted, 1);
        assert_eq!(s.score(ScoreKind::Msp), s.msp);
        assert_eq!(s.score(ScoreKind::Energy), s.energy_score);
    }
}
