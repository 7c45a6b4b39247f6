//! Linear probe `h(f) = fᵀθ (+ b)` trained with minibatch SGD on the mean
//! softmax cross-entropy.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, FormatError, Result};
use crate::features::{FeatureVector, FusionStrategy, SplitTag};
use crate::framing::{read_file, FrameReader, FrameWriter};
use crate::numerics::{argmax, logsumexp, softmax, Matrix, SeededRng};
use crate::par::Exec;

pub const PROBE_MAGIC: &[u8; 4] = b"PRB1";

/// Iterations between loss-trace samples.
pub const TRACE_INTERVAL: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeParams {
    /// `width × C`.
    pub theta: Matrix,
    pub bias: Option<Vec<f64>>,
}

impl ProbeParams {
    pub fn zeros(width: usize, classes: usize, with_bias: bool) -> Self {
        ProbeParams {
            theta: Matrix::zeros(width, classes),
            bias: with_bias.then(|| vec![0.0; classes]),
        }
    }

    pub fn width(&self) -> usize {
        self.theta.rows()
    }

    pub fn classes(&self) -> usize {
        self.theta.cols()
    }

    pub fn is_finite(&self) -> bool {
        self.theta.is_finite() && self.bias.iter().flatten().all(|b| b.is_finite())
    }

    fn logits_unchecked(&self, f: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.classes()];
        for (x, row) in f.iter().zip(self.theta.iter_rows()) {
            for (o, w) in out.iter_mut().zip(row) {
                *o += x * w;
            }
        }
        if let Some(b) = &self.bias {
            for (o, bb) in out.iter_mut().zip(b) {
                *o += bb;
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub iterations: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub momentum: f64,
    pub shuffle_seed: u64,
    pub bias: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 10_000,
            learning_rate: 0.01,
            batch_size: 256,
            momentum: 0.0,
            shuffle_seed: 0,
            bias: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.learning_rate > 0.0 && self.learning_rate.is_finite(),
            "learning rate must be positive, got {}",
            self.learning_rate
        );
        ensure!(self.batch_size >= 1, "batch size must be at least 1");
        ensure!(
            (0.0..1.0).contains(&self.momentum),
            "momentum must lie in [0, 1), got {}",
            self.momentum
        );
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossPoint {
    pub iteration: usize,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedProbe {
    pub params: ProbeParams,
    pub config: TrainConfig,
    /// Full training-set loss every [`TRACE_INTERVAL`] iterations and at the end.
    pub loss_trace: Vec<LossPoint>,
}

pub fn predict_logits(f: &[f64], params: &ProbeParams) -> Result<Vec<f64>> {
    ensure!(
        f.len() == params.width(),
        "feature width {} does not match probe width {}",
        f.len(),
        params.width()
    );
    Ok(params.logits_unchecked(f))
}

/// Predicted class; ties go to the lowest index.
pub fn predict_class(f: &[f64], params: &ProbeParams) -> Result<usize> {
    Ok(argmax(&predict_logits(f, params)?))
}

/// Logits for every sample, in input order.
pub fn logits_batch(samples: &[FeatureVector], params: &ProbeParams, exec: Exec) -> Result<Vec<Vec<f64>>> {
    exec.try_map(samples, |s| predict_logits(&s.values, params))
}

/// `−log softmax(logits)[y]`, as `logsumexp(logits) − logits[y]`.
pub fn cross_entropy(logits: &[f64], label: usize) -> Result<f64> {
    ensure!(
        label < logits.len(),
        "label {label} out of range for {} classes",
        logits.len()
    );
    Ok(logsumexp(logits)? - logits[label])
}

/// Mean cross-entropy over labelled samples.
pub fn mean_loss(samples: &[FeatureVector], params: &ProbeParams) -> Result<f64> {
    ensure!(!samples.is_empty(), "loss over an empty sample set");
    let mut total = 0.0;
    for s in samples {
        let y = s
            .label
            .ok_or_else(|| Error::arg("loss requires labelled samples"))?;
        total += cross_entropy(&predict_logits(&s.values, params)?, y)?;
    }
    Ok(total / samples.len() as f64)
}

/// Gradient of [`mean_loss`] over `batch` with respect to θ (and b).
///
/// `(1/B) Σ_i f_i (softmax(f_iᵀθ) − onehot(y_i))ᵀ`; the bias gradient is the
/// mean residual.
pub fn gradient(batch: &[FeatureVector], params: &ProbeParams) -> Result<ProbeParams> {
    ensure!(!batch.is_empty(), "gradient of an empty batch");
    let width = params.width();
    for s in batch {
        ensure!(
            s.width() == width,
            "feature width {} does not match probe width {width}",
            s.width()
        );
        let y = s.label.ok_or_else(|| Error::arg("gradient requires labelled samples"))?;
        ensure!(y < params.classes(), "label {y} out of range for {} classes", params.classes());
    }
    let mut grad = ProbeParams::zeros(width, params.classes(), params.bias.is_some());
    accumulate_gradient(batch.iter().map(|s| (s.values.as_slice(), s.label.unwrap_or(0))), params, &mut grad);
    Ok(grad)
}

/// Unchecked kernel shared by [`gradient`] and the trainer. `grad` must be
/// zeroed and shaped like `params`.
fn accumulate_gradient<'a>(
    batch: impl ExactSizeIterator<Item = (&'a [f64], usize)>,
    params: &ProbeParams,
    grad: &mut ProbeParams,
) {
    let scale = 1.0 / batch.len() as f64;
    for (f, y) in batch {
        let logits = params.logits_unchecked(f);
        let mut residual = softmax(&logits).expect("at least two classes");
        residual[y] -= 1.0;
        for (x, row) in f.iter().zip(0..grad.theta.rows()) {
            if *x == 0.0 {
                continue;
            }
            for (g, r) in grad.theta.row_mut(row).iter_mut().zip(&residual) {
                *g += x * r;
            }
        }
        if let Some(b) = grad.bias.as_mut() {
            for (g, r) in b.iter_mut().zip(&residual) {
                *g += r;
            }
        }
    }
    for g in grad.theta.as_mut_slice() {
        *g *= scale;
    }
    if let Some(b) = grad.bias.as_mut() {
        for g in b {
            *g *= scale;
        }
    }
}

/// Fit a linear probe on ID-train features by minibatch SGD.
///
/// θ starts at zero. Batches are drawn by walking a seeded permutation of
/// the training set, reshuffled at each epoch boundary; a batch that spans
/// the boundary wraps into the next permutation.
pub fn train(samples: &[FeatureVector], classes: usize, config: &TrainConfig) -> Result<TrainedProbe> {
    config.validate()?;
    ensure!(!samples.is_empty(), "training set is empty");
    ensure!(classes >= 2, "need at least 2 classes, got {classes}");
    let width = samples[0].width();
    ensure!(width >= 1, "features must have positive width");
    let mut labels = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        ensure!(
            s.split == SplitTag::IdTrain,
            "training sample {i} is tagged {:?}, expected IdTrain",
            s.split
        );
        ensure!(
            s.width() == width,
            "training sample {i} has width {}, expected {width}",
            s.width()
        );
        let y = s.label.ok_or_else(|| Error::arg(format!("training sample {i} has no label")))?;
        ensure!(y < classes, "training sample {i} has label {y} but C = {classes}");
        labels.push(y);
    }

    let n = samples.len();
    let mut params = ProbeParams::zeros(width, classes, config.bias);
    let mut velocity = ProbeParams::zeros(width, classes, config.bias);
    let mut grad = ProbeParams::zeros(width, classes, config.bias);
    let mut rng = SeededRng::new(config.shuffle_seed);
    let mut order = rng.permutation(n);
    let mut cursor = 0;
    let mut batch: Vec<usize> = Vec::with_capacity(config.batch_size);
    let mut trace = vec![LossPoint {
        iteration: 0,
        loss: mean_loss(samples, &params)?,
    }];

    for step in 1..=config.iterations {
        batch.clear();
        while batch.len() < config.batch_size {
            if cursor == n {
                order = rng.permutation(n);
                cursor = 0;
            }
            let take = (config.batch_size - batch.len()).min(n - cursor);
            batch.extend_from_slice(&order[cursor..cursor + take]);
            cursor += take;
        }

        grad.theta.as_mut_slice().fill(0.0);
        if let Some(b) = grad.bias.as_mut() {
            b.fill(0.0);
        }
        accumulate_gradient(
            batch.iter().map(|&i| (samples[i].values.as_slice(), labels[i])),
            &params,
            &mut grad,
        );
        sgd_step(&mut params, &mut velocity, &grad, config);

        if step % TRACE_INTERVAL == 0 || step == config.iterations {
            trace.push(LossPoint {
                iteration: step,
                loss: mean_loss(samples, &params)?,
            });
        }
    }

    ensure!(params.is_finite(), "training diverged to non-finite weights");
    Ok(TrainedProbe {
        params,
        config: config.clone(),
        loss_trace: trace,
    })
}

fn sgd_step(params: &mut ProbeParams, velocity: &mut ProbeParams, grad: &ProbeParams, config: &TrainConfig) {
    let (lr, mu) = (config.learning_rate, config.momentum);
    let update = |p: &mut [f64], v: &mut [f64], g: &[f64]| {
        for ((pp, vv), gg) in p.iter_mut().zip(v.iter_mut()).zip(g) {
            *vv = mu * *vv + gg;
            *pp -= lr * *vv;
        }
    };
    update(
        params.theta.as_mut_slice(),
        velocity.theta.as_mut_slice(),
        grad.theta.as_slice(),
    );
    if let (Some(p), Some(v), Some(g)) = (params.bias.as_mut(), velocity.bias.as_mut(), grad.bias.as_ref()) {
        update(p, v, g);
    }
}

/// A probe as persisted in a `PRB1` file.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeFile {
    pub strategy: FusionStrategy,
    pub params: ProbeParams,
    pub config: TrainConfig,
}

impl ProbeFile {
    /// Layout after magic/version: strategy `u8`, width `u32`, C `u32`,
    /// has-bias `u8`, iterations `u64`, lr `f64`, batch `u64`, momentum
    /// `f64`, shuffle seed `u64`, θ rows as `f64`, then C bias `f64`s.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let p = &self.params;
        let mut w = FrameWriter::new(PROBE_MAGIC);
        w.u8(self.strategy.tag());
        w.usize_as_u32(p.width(), "probe width")?;
        w.usize_as_u32(p.classes(), "class count")?;
        w.u8(u8::from(p.bias.is_some()));
        w.u64(self.config.iterations as u64);
        w.f64(self.config.learning_rate);
        w.u64(self.config.batch_size as u64);
        w.f64(self.config.momentum);
        w.u64(self.config.shuffle_seed);
        w.f64_slice(p.theta.as_slice());
        if let Some(b) = &p.bias {
            w.f64_slice(b);
        }
        Ok(w.into_bytes())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = FrameReader::open(bytes, PROBE_MAGIC)?;
        let tag = r.u8()?;
        let strategy = FusionStrategy::from_tag(tag).ok_or(FormatError::InvalidField {
            field: "strategy",
            value: u64::from(tag),
        })?;
        let width = r.u32()? as usize;
        let classes = r.u32()? as usize;
        let has_bias = match r.u8()? {
            0 => false,
            1 => true,
            v => {
                return Err(FormatError::InvalidField {
                    field: "bias flag",
                    value: u64::from(v),
                }
                .into())
            }
        };
        let config = TrainConfig {
            iterations: r.u64()? as usize,
            learning_rate: r.f64()?,
            batch_size: r.u64()? as usize,
            momentum: r.f64()?,
            shuffle_seed: r.u64()?,
            bias: has_bias,
        };
        let theta = Matrix::new(width, classes, r.f64_vec(width.saturating_mul(classes))?)?;
        let bias = if has_bias { Some(r.f64_vec(classes)?) } else { None };
        r.finish()?;
        Ok(ProbeFile {
            strategy,
            params: ProbeParams { theta, bias },
            config,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?)
    }
}
