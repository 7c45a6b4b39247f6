//! Synthetic stand-ins for the ID, OOD and anomaly datasets.
//!
//! Direct mode builds token sets from class-conditional Gaussians:
//!
//! - `cls        = g_y + δ + σε`
//! - `register_k = g_y + r_y + δ + σε`
//! - `patch_j    = g_y + ρ·s_y + (1−ρ)·s_z + δ + σε`, with `z` uniform
//!
//! `g_y` is the class mean, `r_y` a register direction that stays tied to
//! the label in every split, and `s_y` a patch direction whose label
//! alignment `ρ` is high in ID data and drops in OOD splits. `δ` is the
//! split's offset (zero for ID). Anomalies replace `g_y` with a mean `a`
//! that lies `displacement·σ` away from every class mean, carry no register
//! direction, and get patch content from a random class.
//!
//! Backbone mode draws images instead (class prototype + label-aligned
//! texture + noise) and runs them through the toy backbone.

use serde::{Deserialize, Serialize};

use super::config::{DatasetSpec, ExperimentConfig};
use crate::backbone::{Backbone, Image, TokenSet};
use crate::error::{Error, Result};
use crate::features::SplitTag;
use crate::numerics::{dot, l2_norm, Matrix, SeededRng};
use crate::par::Exec;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledTokens {
    pub tokens: TokenSet,
    pub label: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub name: String,
    pub tag: SplitTag,
    pub samples: Vec<LabeledTokens>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub classes: usize,
    pub dim: usize,
    pub splits: Vec<Split>,
}

impl Dataset {
    pub fn split(&self, name: &str) -> Option<&Split> {
        self.splits.iter().find(|s| s.name == name)
    }

    pub fn with_tag(&self, tag: SplitTag) -> impl Iterator<Item = &Split> + '_ {
        self.splits.iter().filter(move |s| s.tag == tag)
    }
}

/// Latent parameters that generate a direct-mode dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticWorld {
    /// `C × D` class means `g_y`.
    pub class_means: Matrix,
    /// `C × D` register directions `r_y`.
    pub robust_dirs: Matrix,
    /// `C × D` patch directions `s_y`.
    pub spurious_dirs: Matrix,
    /// One offset `δ` per OOD split, in config order.
    pub ood_offsets: Vec<Vec<f64>>,
    /// One mean `a` per anomaly split, in config order.
    pub anomaly_means: Vec<Vec<f64>>,
}

/// Where one sample comes from.
#[derive(Debug, Clone, Copy)]
pub enum SampleSource<'a> {
    Class {
        label: usize,
        alignment: f64,
        offset: &'a [f64],
    },
    Anomaly {
        mean: &'a [f64],
    },
}

impl SyntheticWorld {
    pub fn new(spec: &DatasetSpec, rng: &mut SeededRng) -> Self {
        let (c, d) = (spec.classes, spec.dim);
        let mut gaussian = |scale: f64| Matrix::from_fn(c, d, |_, _| rng.gaussian(0.0, scale));
        let class_means = gaussian(spec.class_scale);
        let robust_dirs = gaussian(spec.robust_scale);
        let spurious_dirs = gaussian(spec.spurious_scale);

        let ood_offsets = spec
            .ood
            .iter()
            .map(|s| scaled(random_direction(d, rng), s.shift))
            .collect();

        let basis = orthonormal_basis(
            class_means
                .iter_rows()
                .chain(robust_dirs.iter_rows())
                .chain(spurious_dirs.iter_rows()),
        );
        let max_class_norm = class_means.iter_rows().map(l2_norm).fold(0.0, f64::max);
        let anomaly_means = spec
            .anomaly
            .iter()
            .map(|s| {
                let distance = s.displacement * spec.sigma;
                let mut v = random_direction(d, rng);
                if basis.len() < d {
                    // Orthogonal to every class, register and patch direction:
                    // |a − g_y|² = |a|² + |g_y|² ≥ distance².
                    for b in &basis {
                        let p = dot(&v, b);
                        for (x, bb) in v.iter_mut().zip(b) {
                            *x -= p * bb;
                        }
                    }
                    let n = l2_norm(&v);
                    scaled(v.iter().map(|x| x / n).collect(), distance)
                } else {
                    // No orthogonal complement left; push far enough out that
                    // the triangle inequality guarantees the distance.
                    scaled(v, max_class_norm + distance)
                }
            })
            .collect();

        SyntheticWorld {
            class_means,
            robust_dirs,
            spurious_dirs,
            ood_offsets,
            anomaly_means,
        }
    }

    /// Draw one token set.
    pub fn sample(&self, spec: &DatasetSpec, source: SampleSource<'_>, rng: &mut SeededRng) -> TokenSet {
        let (c, d) = (spec.classes, spec.dim);
        let z = rng.below(c);
        let (base, register_dir, patch_dir): (Vec<f64>, Vec<f64>, Vec<f64>) = match source {
            SampleSource::Class {
                label,
                alignment,
                offset,
            } => {
                let base: Vec<f64> = self
                    .class_means
                    .row(label)
                    .iter()
                    .zip(offset)
                    .map(|(g, o)| g + o)
                    .collect();
                let patch_dir = self
                    .spurious_dirs
                    .row(label)
                    .iter()
                    .zip(self.spurious_dirs.row(z))
                    .map(|(own, other)| alignment * own + (1.0 - alignment) * other)
                    .collect();
                (base, self.robust_dirs.row(label).to_vec(), patch_dir)
            }
            SampleSource::Anomaly { mean } => {
                (mean.to_vec(), vec![0.0; d], self.spurious_dirs.row(z).to_vec())
            }
        };
        let sigma = spec.sigma;
        let mut token = |extra: &[f64]| -> Vec<f64> {
            base.iter()
                .zip(extra)
                .map(|(b, e)| b + e + sigma * rng.normal())
                .collect()
        };
        let zeros = vec![0.0; d];
        let cls = token(&zeros);
        let registers: Vec<Vec<f64>> = (0..spec.registers).map(|_| token(&register_dir)).collect();
        let patches: Vec<Vec<f64>> = (0..spec.patches).map(|_| token(&patch_dir)).collect();
        TokenSet {
            cls,
            patches: Matrix::from_rows(&patches).expect("uniform rows"),
            registers: if registers.is_empty() {
                Matrix::zeros(0, d)
            } else {
                Matrix::from_rows(&registers).expect("uniform rows")
            },
        }
    }

    /// Labelled samples for one ID or OOD split, class-major.
    pub fn sample_split(
        &self,
        spec: &DatasetSpec,
        per_class: usize,
        alignment: f64,
        offset: &[f64],
        rng: &mut SeededRng,
    ) -> Vec<LabeledTokens> {
        let mut out = Vec::with_capacity(per_class * spec.classes);
        for label in 0..spec.classes {
            for _ in 0..per_class {
                let source = SampleSource::Class {
                    label,
                    alignment,
                    offset,
                };
                out.push(LabeledTokens {
                    tokens: self.sample(spec, source, rng),
                    label: Some(label),
                });
            }
        }
        out
    }
}

/// A direct-mode dataset together with the parameters that generated it.
#[derive(Debug, Clone)]
pub struct Generated {
    pub world: SyntheticWorld,
    pub dataset: Dataset,
}

/// Generate every configured split in direct mode.
///
/// Each split draws from its own stream (`rng.split("split:<name>")`), so
/// adding or removing a split leaves the others unchanged.
pub fn gen_synthetic(spec: &DatasetSpec, rng: &SeededRng) -> Result<Generated> {
    spec.validate()?;
    let world = SyntheticWorld::new(spec, &mut rng.split("world"));
    let zero = vec![0.0; spec.dim];
    let mut splits = Vec::new();

    for (name, tag, per_class) in [
        ("id_train", SplitTag::IdTrain, spec.train_per_class),
        ("id_test", SplitTag::IdTest, spec.test_per_class),
    ] {
        let mut r = rng.split(&format!("split:{name}"));
        let samples = world.sample_split(spec, per_class, spec.spurious_alignment, &zero, &mut r);
        splits.push(Split {
            name: name.into(),
            tag,
            samples,
        });
    }
    for (s, offset) in spec.ood.iter().zip(&world.ood_offsets) {
        let mut r = rng.split(&format!("split:{}", s.name));
        let alignment = s.alignment.unwrap_or(spec.spurious_alignment);
        splits.push(Split {
            name: s.name.clone(),
            tag: SplitTag::Ood,
            samples: world.sample_split(spec, s.per_class, alignment, offset, &mut r),
        });
    }
    for (s, mean) in spec.anomaly.iter().zip(&world.anomaly_means) {
        let mut r = rng.split(&format!("split:{}", s.name));
        let samples = (0..s.count)
            .map(|_| LabeledTokens {
                tokens: world.sample(spec, SampleSource::Anomaly { mean }, &mut r),
                label: None,
            })
            .collect();
        splits.push(Split {
            name: s.name.clone(),
            tag: SplitTag::Anomaly,
            samples,
        });
    }

    Ok(Generated {
        world,
        dataset: Dataset {
            classes: spec.classes,
            dim: spec.dim,
            splits,
        },
    })
}

/// Pixel-space analogue of [`SyntheticWorld`] for backbone mode.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageWorld {
    pub image_size: usize,
    pub prototypes: Vec<Vec<f64>>,
    pub textures: Vec<Vec<f64>>,
    pub ood_offsets: Vec<Vec<f64>>,
    pub anomaly_prototypes: Vec<Vec<f64>>,
}

impl ImageWorld {
    pub fn new(spec: &DatasetSpec, image_size: usize, rng: &mut SeededRng) -> Self {
        let n = image_size * image_size * 3;
        let mut field = |scale: f64| -> Vec<f64> { (0..n).map(|_| rng.gaussian(0.0, scale)).collect() };
        let prototypes: Vec<Vec<f64>> = (0..spec.classes).map(|_| field(spec.class_scale)).collect();
        let textures = (0..spec.classes).map(|_| field(spec.spurious_scale)).collect();
        // Per-pixel RMS of the offset equals the configured shift.
        let ood_offsets = spec.ood.iter().map(|s| field(s.shift)).collect();
        let max_norm = prototypes.iter().map(|p| l2_norm(p)).fold(0.0, f64::max);
        let anomaly_prototypes = spec
            .anomaly
            .iter()
            .map(|s| scaled(random_direction(n, rng), max_norm + s.displacement * spec.sigma))
            .collect();
        ImageWorld {
            image_size,
            prototypes,
            textures,
            ood_offsets,
            anomaly_prototypes,
        }
    }

    fn render(&self, base: &[f64], texture: &[f64], sigma: f64, rng: &mut SeededRng) -> Image {
        let data = base
            .iter()
            .zip(texture)
            .map(|(b, t)| b + t + sigma * rng.normal())
            .collect();
        Image::new(self.image_size, self.image_size, data).expect("finite pixels")
    }

    fn class_image(&self, spec: &DatasetSpec, label: usize, alignment: f64, offset: Option<&[f64]>, rng: &mut SeededRng) -> Image {
        let z = rng.below(spec.classes);
        let base: Vec<f64> = match offset {
            Some(o) => self.prototypes[label].iter().zip(o).map(|(p, o)| p + o).collect(),
            None => self.prototypes[label].clone(),
        };
        let texture: Vec<f64> = self.textures[label]
            .iter()
            .zip(&self.textures[z])
            .map(|(own, other)| alignment * own + (1.0 - alignment) * other)
            .collect();
        self.render(&base, &texture, spec.sigma, rng)
    }
}

type LabeledImage = (Image, Option<usize>);

/// Generate images for every split and embed them with `backbone`.
pub fn gen_backbone_dataset(spec: &DatasetSpec, backbone: &Backbone, rng: &SeededRng, exec: Exec) -> Result<Dataset> {
    spec.validate()?;
    let cfg = backbone.config();
    if cfg.embed_dim != spec.dim || cfg.num_registers != spec.registers {
        return Err(Error::arg(format!(
            "backbone (D={}, M={}) does not match dataset (D={}, M={})",
            cfg.embed_dim, cfg.num_registers, spec.dim, spec.registers
        )));
    }
    let world = ImageWorld::new(spec, cfg.image_size, &mut rng.split("world"));
    let mut plans: Vec<(String, SplitTag, Vec<LabeledImage>)> = Vec::new();

    let class_split = |name: &str, per_class: usize, alignment: f64, offset: Option<&[f64]>| {
        let mut r = rng.split(&format!("split:{name}"));
        let mut images = Vec::with_capacity(per_class * spec.classes);
        for label in 0..spec.classes {
            for _ in 0..per_class {
                images.push((world.class_image(spec, label, alignment, offset, &mut r), Some(label)));
            }
        }
        images
    };
    plans.push(("id_train".into(), SplitTag::IdTrain, class_split("id_train", spec.train_per_class, spec.spurious_alignment, None)));
    plans.push(("id_test".into(), SplitTag::IdTest, class_split("id_test", spec.test_per_class, spec.spurious_alignment, None)));
    for (s, offset) in spec.ood.iter().zip(&world.ood_offsets) {
        let alignment = s.alignment.unwrap_or(spec.spurious_alignment);
        plans.push((s.name.clone(), SplitTag::Ood, class_split(&s.name, s.per_class, alignment, Some(offset))));
    }
    for (s, proto) in spec.anomaly.iter().zip(&world.anomaly_prototypes) {
        let mut r = rng.split(&format!("split:{}", s.name));
        let images = (0..s.count)
            .map(|_| {
                let z = r.below(spec.classes);
                (world.render(proto, &world.textures[z], spec.sigma, &mut r), None)
            })
            .collect();
        plans.push((s.name.clone(), SplitTag::Anomaly, images));
    }

    let mut splits = Vec::with_capacity(plans.len());
    for (name, tag, items) in plans {
        let images: Vec<Image> = items.iter().map(|(img, _)| img.clone()).collect();
        let tokens = backbone
            .forward_batch(&images, exec)
            .map_err(|e| e.context(format!("split {name}")))?;
        let samples = tokens
            .into_iter()
            .zip(items)
            .map(|(tokens, (_, label))| LabeledTokens { tokens, label })
            .collect();
        splits.push(Split { name, tag, samples });
    }
    Ok(Dataset {
        classes: spec.classes,
        dim: spec.dim,
        splits,
    })
}

/// Build the dataset a config asks for, along with the backbone when one is used.
pub fn build_dataset(config: &ExperimentConfig, exec: Exec) -> Result<(Dataset, Option<Backbone>)> {
    let seeds = config.seeds();
    let data_rng = SeededRng::new(seeds.data);
    match config.mode {
        super::config::SourceMode::Direct => Ok((gen_synthetic(&config.dataset, &data_rng)?.dataset, None)),
        super::config::SourceMode::Backbone => {
            let backbone = Backbone::new(config.backbone_config())?;
            let dataset = gen_backbone_dataset(&config.dataset, &backbone, &data_rng, exec)?;
            Ok((dataset, Some(backbone)))
        }
    }
}

fn random_direction(n: usize, rng: &mut SeededRng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        let norm = l2_norm(&v);
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

fn scaled(v: Vec<f64>, s: f64) -> Vec<f64> {
    v.into_iter().map(|x| x * s).collect()
}

/// Gram–Schmidt over `vectors`, dropping near-dependent ones.
fn orthonormal_basis<'a>(vectors: impl Iterator<Item = &'a [f64]>) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for v in vectors {
        let mut u = v.to_vec();
        for b in &basis {
            let p = dot(&u, b);
            for (x, bb) in u.iter_mut().zip(b) {
                *x -= p * bb;
            }
        }
        let n = l2_norm(&u);
        if n > 1e-9 * l2_norm(v).max(1e-300) {
            basis.push(u.into_iter().map(|x| x / n).collect());
        }
    }
    basis
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::{AnomalySplitSpec, OodSplitSpec};

    fn small_spec() -> DatasetSpec {
        DatasetSpec {
            classes: 3,
            dim: 16,
            registers: 2,
            patches: 4,
            train_per_class: 5,
            test_per_class: 4,
            ood: vec![OodSplitSpec {
                name: "o".into(),
                per_class: 3,
                shift: 1.0,
                alignment: Some(0.0),
            }],
            anomaly: vec![AnomalySplitSpec {
                name: "a".into(),
                count: 7,
                displacement: 6.0,
            }],
            ..DatasetSpec::default()
        }
    }

    #[test]
    fn split_sizes_and_labels() {
        let g = gen_synthetic(&small_spec(), &SeededRng::new(1)).unwrap();
        let d = &g.dataset;
        assert_eq!(d.split("id_train").unwrap().samples.len(), 15);
        assert_eq!(d.split("id_test").unwrap().samples.len(), 12);
        assert_eq!(d.split("o").unwrap().samples.len(), 9);
        let a = d.split("a").unwrap();
        assert_eq!(a.samples.len(), 7);
        assert!(a.samples.iter().all(|s| s.label.is_none()));
        let t = &d.split("id_test").unwrap().samples[0].tokens;
        assert_eq!((t.dim(), t.num_patches(), t.num_registers()), (16, 4, 2));
    }

    #[test]
    fn anomaly_means_are_far_from_every_class() {
        let spec = small_spec();
        let g = gen_synthetic(&spec, &SeededRng::new(2)).unwrap();
        for a in &g.world.anomaly_means {
            for y in 0..spec.classes {
                let d: f64 = a
                    .iter()
                    .zip(g.world.class_means.row(y))
                    .map(|(x, m)| (x - m).powi(2))
                    .sum::<f64>()
                    .sqrt();
                assert!(d >= 6.0 * spec.sigma - 1e-9, "distance {d}");
            }
        }
    }

    #[test]
    fn anomaly_distance_holds_without_orthogonal_room() {
        let spec = DatasetSpec {
            dim: 4,
            ..small_spec()
        };
        let g = gen_synthetic(&spec, &SeededRng::new(3)).unwrap();
        for y in 0..spec.classes {
            let d: f64 = g.world.anomaly_means[0]
                .iter()
                .zip(g.world.class_means.row(y))
                .map(|(x, m)| (x - m).powi(2))
                .sum::<f64>()
                .sqrt();
            assert!(d >= 6.0 * spec.sigma - 1e-9);
        }
    }

    #[test]
    fn noiseless_samples_reproduce_class_means() {
        let spec = DatasetSpec {
            sigma: 0.0,
            train_per_class: 1,
            test_per_class: 1,
            ..small_spec()
        };
        let g = gen_synthetic(&spec, &SeededRng::new(4)).unwrap();
        for s in &g.dataset.split("id_test").unwrap().samples {
            let y = s.label.unwrap();
            assert_eq!(s.tokens.cls, g.world.class_means.row(y));
        }
    }

    #[test]
    fn splits_use_independent_streams() {
        let spec = small_spec();
        let rng = SeededRng::new(5);
        let with_ood = gen_synthetic(&spec, &rng).unwrap().dataset;
        let without = gen_synthetic(
            &DatasetSpec {
                ood: vec![],
                ..spec.clone()
            },
            &rng,
        )
        .unwrap()
        .dataset;
        assert_eq!(with_ood.split("id_train"), without.split("id_train"));
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = small_spec();
        let a = gen_synthetic(&spec, &SeededRng::new(6)).unwrap().dataset;
        let b = gen_synthetic(&spec, &SeededRng::new(6)).unwrap().dataset;
        assert_eq!(a, b);
    }

    #[test]
    fn invalid_spec_is_rejected() {
        let spec = DatasetSpec {
            classes: 1,
            ..small_spec()
        };
        assert!(gen_synthetic(&spec, &SeededRng::new(0)).is_err());
    }
}
