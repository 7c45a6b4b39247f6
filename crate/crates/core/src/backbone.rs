//! A small pre-norm Vision Transformer with register tokens.
//!
//! The input sequence is `[CLS, R_1..R_M, p_1..p_L]`. CLS and registers
//! are learned per-slot embeddings; patch embeddings get an additive
//! position embedding (patch slots only). Every token passes through the
//! final LayerNorm before the output is split into a [`TokenSet`].
//!
//! The backbone is frozen: there is no backward pass.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, FormatError, Result};
use crate::framing::{read_file, FrameReader, FrameWriter};
use crate::numerics::{l2_norm, layernorm_into, softmax, Matrix, SeededRng, DEFAULT_LAYERNORM_EPS};
use crate::par::Exec;

pub const WEIGHTS_MAGIC: &[u8; 4] = b"WGT1";

const INIT_STD: f64 = 0.02;
const MLP_RATIO: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub image_size: usize,
    pub patch_size: usize,
    pub channels: usize,
    pub embed_dim: usize,
    pub depth: usize,
    pub heads: usize,
    pub num_registers: usize,
    pub layernorm_eps: f64,
    pub seed: u64,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig {
            image_size: 32,
            patch_size: 8,
            channels: 3,
            embed_dim: 32,
            depth: 2,
            heads: 4,
            num_registers: 4,
            layernorm_eps: DEFAULT_LAYERNORM_EPS,
            seed: 0,
        }
    }
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.patch_size > 0, "patch size must be positive");
        ensure!(
            self.image_size > 0 && self.image_size.is_multiple_of(self.patch_size),
            "image size {} is not divisible by patch size {}",
            self.image_size,
            self.patch_size
        );
        ensure!(self.channels == 3, "images must have 3 channels, got {}", self.channels);
        ensure!(
            self.heads > 0 && self.embed_dim > 0 && self.embed_dim.is_multiple_of(self.heads),
            "embed dim {} is not divisible by {} heads",
            self.embed_dim,
            self.heads
        );
        ensure!(self.depth >= 1, "depth must be at least 1");
        ensure!(
            self.layernorm_eps > 0.0,
            "layernorm eps must be positive, got {}",
            self.layernorm_eps
        );
        Ok(())
    }

    /// Number of patch tokens, `(H/K)·(W/K)`.
    pub fn num_patches(&self) -> usize {
        let side = self.image_size / self.patch_size;
        side * side
    }

    pub fn patch_dim(&self) -> usize {
        self.channels * self.patch_size * self.patch_size
    }

    pub fn seq_len(&self) -> usize {
        1 + self.num_registers + self.num_patches()
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.heads
    }
}

/// An `H×W×3` image stored row-major in (row, col, channel) order.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        ensure!(
            data.len() == height * width * 3,
            "image {height}x{width}x3 needs {} values, got {}",
            height * width * 3,
            data.len()
        );
        ensure!(data.iter().all(|v| v.is_finite()), "image contains non-finite values");
        Ok(Image { height, width, data })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        Image {
            height,
            width,
            data: vec![value; height * width * 3],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixel(&self, row: usize, col: usize, channel: usize) -> f64 {
        self.data[(row * self.width + col) * 3 + channel]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

/// Output of one forward pass, taken after the final LayerNorm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenSet {
    pub cls: Vec<f64>,
    pub patches: Matrix,
    pub registers: Matrix,
}

impl TokenSet {
    pub fn new(cls: Vec<f64>, patches: Matrix, registers: Matrix) -> Result<Self> {
        let d = cls.len();
        ensure!(d > 0, "token dimension must be positive");
        ensure!(
            patches.cols() == d && registers.cols() == d,
            "token widths disagree: cls {d}, patches {}, registers {}",
            patches.cols(),
            registers.cols()
        );
        ensure!(patches.rows() >= 1, "a token set needs at least one patch token");
        Ok(TokenSet {
            cls,
            patches,
            registers,
        })
    }

    pub fn dim(&self) -> usize {
        self.cls.len()
    }

    pub fn num_patches(&self) -> usize {
        self.patches.rows()
    }

    pub fn num_registers(&self) -> usize {
        self.registers.rows()
    }
}

/// Euclidean norms of every token in a [`TokenSet`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenNorms {
    pub cls: f64,
    pub patches: Vec<f64>,
    pub registers: Vec<f64>,
}

pub fn token_norms(tokens: &TokenSet) -> TokenNorms {
    TokenNorms {
        cls: l2_norm(&tokens.cls),
        patches: tokens.patches.iter_rows().map(l2_norm).collect(),
        registers: tokens.registers.iter_rows().map(l2_norm).collect(),
    }
}

/// Split an image into `K×K` patches in raster order, each flattened in
/// (row, col, channel) order.
pub fn patchify(image: &Image, patch_size: usize) -> Result<Matrix> {
    let (h, w, k) = (image.height, image.width, patch_size);
    if k == 0 || h % k != 0 || w % k != 0 {
        return Err(Error::arg(format!(
            "image of height {h} and width {w} cannot be divided into {k}x{k} patches"
        )));
    }
    let (ph, pw) = (h / k, w / k);
    let mut data = Vec::with_capacity(h * w * 3);
    for py in 0..ph {
        for px in 0..pw {
            for r in 0..k {
                let row = py * k + r;
                let start = (row * w + px * k) * 3;
                data.extend_from_slice(&image.data[start..start + k * 3]);
            }
        }
    }
    Matrix::new(ph * pw, k * k * 3, data)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerNormParams {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

impl LayerNormParams {
    fn identity(dim: usize) -> Self {
        LayerNormParams {
            gamma: vec![1.0; dim],
            beta: vec![0.0; dim],
        }
    }

    fn apply_rows(&self, x: &Matrix, eps: f64) -> Matrix {
        let mut out = Matrix::zeros(x.rows(), x.cols());
        for r in 0..x.rows() {
            layernorm_into(x.row(r), &self.gamma, &self.beta, eps, out.row_mut(r));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockWeights {
    pub norm1: LayerNormParams,
    /// `D × 3D`, columns laid out as [Q | K | V], heads contiguous within each.
    pub qkv: Matrix,
    pub qkv_bias: Vec<f64>,
    pub proj: Matrix,
    pub proj_bias: Vec<f64>,
    pub norm2: LayerNormParams,
    pub fc1: Matrix,
    pub fc1_bias: Vec<f64>,
    pub fc2: Matrix,
    pub fc2_bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneWeights {
    /// `3K² × D`.
    pub patch_proj: Matrix,
    pub patch_bias: Vec<f64>,
    pub cls_token: Vec<f64>,
    /// `M × D`.
    pub register_tokens: Matrix,
    /// `L × D`, added to patch slots only.
    pub pos_embed: Matrix,
    pub blocks: Vec<BlockWeights>,
    pub final_norm: LayerNormParams,
}

impl BackboneWeights {
    /// Weight matrices and token embeddings ~ N(0, 0.02²); biases zero;
    /// LayerNorm affine parameters at identity.
    pub fn init(config: &BackboneConfig, rng: &mut SeededRng) -> Self {
        Self::build(config, || rng.gaussian(0.0, INIT_STD))
    }

    fn build(config: &BackboneConfig, mut fill: impl FnMut() -> f64) -> Self {
        let d = config.embed_dim;
        let hidden = MLP_RATIO * d;
        let mut dense = |rows: usize, cols: usize| Matrix::from_fn(rows, cols, |_, _| fill());
        let patch_proj = dense(config.patch_dim(), d);
        let cls_token = dense(1, d).into_vec();
        let register_tokens = dense(config.num_registers, d);
        let pos_embed = dense(config.num_patches(), d);
        let blocks = (0..config.depth)
            .map(|_| BlockWeights {
                norm1: LayerNormParams::identity(d),
                qkv: dense(d, 3 * d),
                qkv_bias: vec![0.0; 3 * d],
                proj: dense(d, d),
                proj_bias: vec![0.0; d],
                norm2: LayerNormParams::identity(d),
                fc1: dense(d, hidden),
                fc1_bias: vec![0.0; hidden],
                fc2: dense(hidden, d),
                fc2_bias: vec![0.0; d],
            })
            .collect();
        BackboneWeights {
            patch_proj,
            patch_bias: vec![0.0; d],
            cls_token,
            register_tokens,
            pos_embed,
            blocks,
            final_norm: LayerNormParams::identity(d),
        }
    }

    /// Total number of scalars across all tensors for `config`.
    fn volume(config: &BackboneConfig) -> u128 {
        let d = config.embed_dim as u128;
        let hidden = MLP_RATIO as u128 * d;
        let per_block = 4 * d + 3 * d * d + 3 * d + d * d + d + d * hidden + hidden + hidden * d + d;
        config.patch_dim() as u128 * d
            + 2 * d
            + (config.num_registers + config.num_patches()) as u128 * d
            + config.depth as u128 * per_block
            + 2 * d
    }

    fn check_shapes(&self, config: &BackboneConfig) -> Result<()> {
        let d = config.embed_dim;
        let hidden = MLP_RATIO * d;
        let expect = |name: &str, m: &Matrix, rows: usize, cols: usize| -> Result<()> {
            ensure!(
                m.shape() == (rows, cols),
                "weight {name} has shape {:?}, expected ({rows}, {cols})",
                m.shape()
            );
            Ok(())
        };
        let expect_len = |name: &str, v: &[f64], len: usize| -> Result<()> {
            ensure!(v.len() == len, "weight {name} has length {}, expected {len}", v.len());
            Ok(())
        };
        expect("patch_proj", &self.patch_proj, config.patch_dim(), d)?;
        expect_len("patch_bias", &self.patch_bias, d)?;
        expect_len("cls_token", &self.cls_token, d)?;
        expect("register_tokens", &self.register_tokens, config.num_registers, d)?;
        expect("pos_embed", &self.pos_embed, config.num_patches(), d)?;
        ensure!(
            self.blocks.len() == config.depth,
            "{} blocks for depth {}",
            self.blocks.len(),
            config.depth
        );
        for b in &self.blocks {
            for ln in [&b.norm1, &b.norm2] {
                expect_len("norm.gamma", &ln.gamma, d)?;
                expect_len("norm.beta", &ln.beta, d)?;
            }
            expect("qkv", &b.qkv, d, 3 * d)?;
            expect_len("qkv_bias", &b.qkv_bias, 3 * d)?;
            expect("proj", &b.proj, d, d)?;
            expect_len("proj_bias", &b.proj_bias, d)?;
            expect("fc1", &b.fc1, d, hidden)?;
            expect_len("fc1_bias", &b.fc1_bias, hidden)?;
            expect("fc2", &b.fc2, hidden, d)?;
            expect_len("fc2_bias", &b.fc2_bias, d)?;
        }
        expect_len("final_norm.gamma", &self.final_norm.gamma, d)?;
        expect_len("final_norm.beta", &self.final_norm.beta, d)?;
        Ok(())
    }

    /// Visit every tensor in the fixed serialization order.
    fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = vec![
            self.patch_proj.as_slice(),
            &self.patch_bias,
            &self.cls_token,
            self.register_tokens.as_slice(),
            self.pos_embed.as_slice(),
        ];
        for b in &self.blocks {
            out.extend([
                b.norm1.gamma.as_slice(),
                &b.norm1.beta,
                b.qkv.as_slice(),
                &b.qkv_bias,
                b.proj.as_slice(),
                &b.proj_bias,
                &b.norm2.gamma,
                &b.norm2.beta,
                b.fc1.as_slice(),
                &b.fc1_bias,
                b.fc2.as_slice(),
                &b.fc2_bias,
            ]);
        }
        out.extend([self.final_norm.gamma.as_slice(), &self.final_norm.beta]);
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![
            self.patch_proj.as_mut_slice(),
            &mut self.patch_bias,
            &mut self.cls_token,
            self.register_tokens.as_mut_slice(),
            self.pos_embed.as_mut_slice(),
        ];
        for b in &mut self.blocks {
            out.extend([
                b.norm1.gamma.as_mut_slice(),
                &mut b.norm1.beta,
                b.qkv.as_mut_slice(),
                &mut b.qkv_bias,
                b.proj.as_mut_slice(),
                &mut b.proj_bias,
                &mut b.norm2.gamma,
                &mut b.norm2.beta,
                b.fc1.as_mut_slice(),
                &mut b.fc1_bias,
                b.fc2.as_mut_slice(),
                &mut b.fc2_bias,
            ]);
        }
        out.extend([self.final_norm.gamma.as_mut_slice(), &mut self.final_norm.beta]);
        out
    }
}

/// Attention probabilities captured during a traced forward pass,
/// indexed `[block][head]`, each `S × S`.
#[derive(Debug, Clone, Default)]
pub struct ForwardTrace {
    pub attention: Vec<Vec<Matrix>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Backbone {
    config: BackboneConfig,
    weights: BackboneWeights,
}

impl Backbone {
    /// Build a backbone with weights drawn from `config.seed`.
    pub fn new(config: BackboneConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = SeededRng::new(config.seed);
        let weights = BackboneWeights::init(&config, &mut rng);
        Ok(Backbone { config, weights })
    }

    pub fn from_parts(config: BackboneConfig, weights: BackboneWeights) -> Result<Self> {
        config.validate()?;
        weights.check_shapes(&config)?;
        Ok(Backbone { config, weights })
    }

    pub fn config(&self) -> &BackboneConfig {
        &self.config
    }

    pub fn weights(&self) -> &BackboneWeights {
        &self.weights
    }

    pub fn into_parts(self) -> (BackboneConfig, BackboneWeights) {
        (self.config, self.weights)
    }

    pub fn forward(&self, image: &Image) -> Result<TokenSet> {
        self.run(image, None)
    }

    /// Forward pass that also records every attention-probability matrix.
    pub fn forward_traced(&self, image: &Image) -> Result<(TokenSet, ForwardTrace)> {
        let mut trace = ForwardTrace::default();
        let tokens = self.run(image, Some(&mut trace))?;
        Ok((tokens, trace))
    }

    /// Forward a batch of images; output order matches input order.
    pub fn forward_batch(&self, images: &[Image], exec: Exec) -> Result<Vec<TokenSet>> {
        exec.try_map(images, |img| self.forward(img))
    }

    fn run(&self, image: &Image, mut trace: Option<&mut ForwardTrace>) -> Result<TokenSet> {
        let cfg = &self.config;
        ensure!(
            image.height == cfg.image_size && image.width == cfg.image_size,
            "image is {}x{}, backbone expects {}x{}",
            image.height,
            image.width,
            cfg.image_size,
            cfg.image_size
        );
        let w = &self.weights;
        let d = cfg.embed_dim;
        let m = cfg.num_registers;

        let patches = patchify(image, cfg.patch_size)?;
        let embedded = patches.matmul(&w.patch_proj)?;
        let mut x = Matrix::zeros(cfg.seq_len(), d);
        x.row_mut(0).copy_from_slice(&w.cls_token);
        for r in 0..m {
            x.row_mut(1 + r).copy_from_slice(w.register_tokens.row(r));
        }
        for p in 0..cfg.num_patches() {
            let dst = x.row_mut(1 + m + p);
            for (((o, e), b), pos) in dst
                .iter_mut()
                .zip(embedded.row(p))
                .zip(&w.patch_bias)
                .zip(w.pos_embed.row(p))
            {
                *o = e + b + pos;
            }
        }

        for block in &w.blocks {
            let probs = self.attention_residual(block, &mut x)?;
            if let Some(t) = trace.as_deref_mut() {
                t.attention.push(probs);
            }
            self.mlp_residual(block, &mut x)?;
        }

        let out = w.final_norm.apply_rows(&x, cfg.layernorm_eps);
        let cls = out.row(0).to_vec();
        let registers = Matrix::from_fn(m, d, |r, c| out.get(1 + r, c));
        let patches = Matrix::from_fn(cfg.num_patches(), d, |r, c| out.get(1 + m + r, c));
        Ok(TokenSet {
            cls,
            patches,
            registers,
        })
    }

    fn attention_residual(&self, block: &BlockWeights, x: &mut Matrix) -> Result<Vec<Matrix>> {
        let cfg = &self.config;
        let (s, d) = x.shape();
        let hd = cfg.head_dim();
        let scale = 1.0 / (hd as f64).sqrt();

        let normed = block.norm1.apply_rows(x, cfg.layernorm_eps);
        let mut qkv = normed.matmul(&block.qkv)?;
        for r in 0..s {
            for (v, b) in qkv.row_mut(r).iter_mut().zip(&block.qkv_bias) {
                *v += b;
            }
        }

        let mut merged = Matrix::zeros(s, d);
        let mut all_probs = Vec::with_capacity(cfg.heads);
        for h in 0..cfg.heads {
            let (q0, k0, v0) = (h * hd, d + h * hd, 2 * d + h * hd);
            let mut probs = Matrix::zeros(s, s);
            for i in 0..s {
                let q = &qkv.row(i)[q0..q0 + hd];
                let scores: Vec<f64> = (0..s)
                    .map(|j| {
                        let k = &qkv.row(j)[k0..k0 + hd];
                        q.iter().zip(k).map(|(a, b)| a * b).sum::<f64>() * scale
                    })
                    .collect();
                probs.row_mut(i).copy_from_slice(&softmax(&scores)?);
            }
            for i in 0..s {
                let out = &mut merged.row_mut(i)[q0..q0 + hd];
                for j in 0..s {
                    let p = probs.get(i, j);
                    let v = &qkv.row(j)[v0..v0 + hd];
                    for (o, vv) in out.iter_mut().zip(v) {
                        *o += p * vv;
                    }
                }
            }
            all_probs.push(probs);
        }

        let projected = merged.matmul(&block.proj)?;
        for r in 0..s {
            for ((xv, pv), b) in x.row_mut(r).iter_mut().zip(projected.row(r)).zip(&block.proj_bias) {
                *xv += pv + b;
            }
        }
        Ok(all_probs)
    }

    fn mlp_residual(&self, block: &BlockWeights, x: &mut Matrix) -> Result<()> {
        let normed = block.norm2.apply_rows(x, self.config.layernorm_eps);
        let mut hidden = normed.matmul(&block.fc1)?;
        for r in 0..hidden.rows() {
            for (v, b) in hidden.row_mut(r).iter_mut().zip(&block.fc1_bias) {
                *v = gelu(*v + b);
            }
        }
        let out = hidden.matmul(&block.fc2)?;
        for r in 0..x.rows() {
            for ((xv, ov), b) in x.row_mut(r).iter_mut().zip(out.row(r)).zip(&block.fc2_bias) {
                *xv += ov + b;
            }
        }
        Ok(())
    }

    /// Dump config and weights as a `WGT1` container (`f64` tensors).
    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_bytes()?.write_to(path)
    }

    fn to_bytes(&self) -> Result<FrameWriter> {
        let c = &self.config;
        let mut w = FrameWriter::new(WEIGHTS_MAGIC);
        for (v, what) in [
            (c.image_size, "image size"),
            (c.patch_size, "patch size"),
            (c.channels, "channels"),
            (c.embed_dim, "embed dim"),
            (c.depth, "depth"),
            (c.heads, "heads"),
            (c.num_registers, "registers"),
        ] {
            w.usize_as_u32(v, what)?;
        }
        w.f64(c.layernorm_eps);
        w.u64(c.seed);
        for t in self.weights.tensors() {
            w.f64_slice(t);
        }
        Ok(w)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = FrameReader::open(bytes, WEIGHTS_MAGIC)?;
        let mut field = || -> Result<usize> { Ok(r.u32()? as usize) };
        let config = BackboneConfig {
            image_size: field()?,
            patch_size: field()?,
            channels: field()?,
            embed_dim: field()?,
            depth: field()?,
            heads: field()?,
            num_registers: field()?,
            layernorm_eps: r.f64()?,
            seed: r.u64()?,
        };
        config.validate()?;
        // A corrupt header must not trigger a huge allocation.
        let needed = BackboneWeights::volume(&config) * 8;
        if needed > r.remaining() as u128 {
            return Err(FormatError::Truncated {
                offset: bytes.len() - r.remaining(),
                needed: usize::try_from(needed).unwrap_or(usize::MAX),
                available: r.remaining(),
            }
            .into());
        }
        let mut weights = BackboneWeights::build(&config, || 0.0);
        for t in weights.tensors_mut() {
            let vals = r.f64_vec(t.len())?;
            t.copy_from_slice(&vals);
        }
        r.finish()?;
        Ok(Backbone { config, weights })
    }
}

/// GELU, tanh approximation.
#[inline]
pub fn gelu(x: f64) -> f64 {
    const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
    0.5 * x * (1.0 + (SQRT_2_OVER_PI * (x + 0.044_715 * x * x * x)).tanh())
}
