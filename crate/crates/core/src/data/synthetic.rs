//! Synthetic multimodal data with a tunable split between shared and
//! modality-specific signal.
//!
//! Every sample draws a shared latent `z` and one private latent `u_m` per
//! modality. Modality `m` observes `A_m [ρ_m z ; (1 − ρ_m) u_m]` plus noise, and
//! the target is
//!
//! ```text
//! y = w·z + Σ_m (1 − ρ_m) v_m·u_m + γ (g·z) Σ_m (1 − ρ_m) h_m·u_m + σ ε
//! ```
//!
//! so a modality with `ρ_m = 1` carries nothing the others lack, and `γ`
//! controls how much of the target only exists as a cross-modal product.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Dataset, DatasetManifest, Features, Label, LabelKind, ModalityKind, ModalitySpec, Sample, FORMAT_VERSION};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Regression,
    Classification,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub latent_dim: usize,
    pub kinds: Vec<ModalityKind>,
    pub widths: Vec<usize>,
    /// Share of each modality's signal taken from the common latent, in [0, 1].
    pub redundancy: Vec<f64>,
    /// Weight of the cross-modal product term.
    pub interaction: f64,
    /// Standard deviation of feature and label noise.
    pub noise: f64,
    pub task: TaskKind,
    /// Only used for classification.
    pub classes: usize,
    /// Seeds the loading matrices and target weights.
    pub structure_seed: u64,
    pub min_steps: usize,
    pub max_steps: usize,
    /// Consecutive samples sharing one group id.
    pub group_size: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            latent_dim: 2,
            kinds: vec![ModalityKind::Vector, ModalityKind::Vector, ModalityKind::Sequence],
            widths: vec![6, 6, 6],
            redundancy: vec![1.0, 1.0, 0.0],
            interaction: 1.0,
            noise: 0.05,
            task: TaskKind::Regression,
            classes: 2,
            structure_seed: 0,
            min_steps: 3,
            max_steps: 6,
            group_size: 5,
        }
    }
}

impl SyntheticSpec {
    pub fn modality_count(&self) -> usize {
        self.kinds.len()
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.kinds.len();
        if m == 0 || self.widths.len() != m || self.redundancy.len() != m {
            return Err(Error::Config(format!(
                "synthetic spec needs matching kinds/widths/redundancy lists, got {}/{}/{}",
                m,
                self.widths.len(),
                self.redundancy.len()
            )));
        }
        if self.latent_dim == 0 || self.widths.contains(&0) {
            return Err(Error::Config("latent_dim and widths must be positive".into()));
        }
        if let Some(r) = self.redundancy.iter().find(|r| !(0.0..=1.0).contains(*r)) {
            return Err(Error::Config(format!("redundancy {r} outside [0, 1]")));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) || !self.interaction.is_finite() {
            return Err(Error::Config("noise must be finite and non-negative, interaction finite".into()));
        }
        if self.task == TaskKind::Classification && self.classes < 2 {
            return Err(Error::Config("classification needs at least two classes".into()));
        }
        if self.min_steps == 0 || self.min_steps > self.max_steps {
            return Err(Error::Config("sequence lengths need 1 <= min_steps <= max_steps".into()));
        }
        if self.group_size == 0 {
            return Err(Error::Config("group_size must be positive".into()));
        }
        Ok(())
    }

    pub fn manifest(&self, n: usize) -> DatasetManifest {
        DatasetManifest {
            format_version: FORMAT_VERSION,
            label_kind: match self.task {
                TaskKind::Regression => LabelKind::Regression,
                TaskKind::Classification => LabelKind::Classification,
            },
            class_count: match self.task {
                TaskKind::Regression => 0,
                TaskKind::Classification => self.classes,
            },
            sample_count: n,
            modalities: self
                .kinds
                .iter()
                .zip(&self.widths)
                .enumerate()
                .map(|(m, (&kind, &width))| ModalitySpec {
                    name: format!("modality{}", m + 1),
                    kind,
                    width,
                })
                .collect(),
        }
    }
}

struct Structure {
    loadings: Vec<Vec<Vec<f64>>>,
    w: Vec<f64>,
    g: Vec<f64>,
    v: Vec<Vec<f64>>,
    h: Vec<Vec<f64>>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn unit(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let norm = dot(&v, &v).sqrt();
        if norm > 1e-6 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Unit vector orthogonal to `other` when the dimension allows it.
fn unit_orthogonal(rng: &mut ChaCha8Rng, other: &[f64]) -> Vec<f64> {
    if other.len() < 2 {
        return unit(rng, other.len());
    }
    loop {
        let mut v = unit(rng, other.len());
        let p = dot(&v, other);
        v.iter_mut().zip(other).for_each(|(x, o)| *x -= p * o);
        let norm = dot(&v, &v).sqrt();
        if norm > 1e-3 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

fn structure(spec: &SyntheticSpec) -> Structure {
    let l = spec.latent_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.structure_seed);
    let w = unit(&mut rng, l);
    let g = unit_orthogonal(&mut rng, &w);
    let mut v = Vec::new();
    let mut h = Vec::new();
    for _ in 0..spec.modality_count() {
        let vm = unit(&mut rng, l);
        h.push(unit_orthogonal(&mut rng, &vm));
        v.push(vm);
    }
    let normal = Normal::new(0.0, (1.0 / l as f64).sqrt()).expect("positive std");
    let loadings = spec
        .widths
        .iter()
        .enumerate()
        .map(|(m, &p)| {
            let mut r = ChaCha8Rng::seed_from_u64(spec.structure_seed);
            r.set_stream(m as u64 + 1);
            (0..p).map(|_| (0..2 * l).map(|_| normal.sample(&mut r)).collect()).collect()
        })
        .collect();
    Structure { loadings, w, g, v, h }
}

/// Builds `n` samples; sample `i` depends only on `(spec, seed, i)` apart from
/// the class thresholds, which come from the whole batch.
pub fn generate_synthetic(spec: &SyntheticSpec, n: usize, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::invalid("sample count must be at least 1"));
    }
    let st = structure(spec);
    let l = spec.latent_dim;
    let mut samples = Vec::with_capacity(n);
    let mut clean = Vec::with_capacity(n);
    let mut noisy = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        let mut gauss = |k: usize| -> Vec<f64> { (0..k).map(|_| rng.sample(StandardNormal)).collect() };
        let z = gauss(l);
        let u: Vec<Vec<f64>> = (0..spec.modality_count()).map(|_| gauss(l)).collect();
        let eps: f64 = gauss(1)[0];

        let mut private = 0.0;
        let mut mixed = 0.0;
        for (m, um) in u.iter().enumerate() {
            let keep = 1.0 - spec.redundancy[m];
            private += keep * dot(&st.v[m], um);
            mixed += keep * dot(&st.h[m], um);
        }
        let score = dot(&st.w, &z) + private + spec.interaction * dot(&st.g, &z) * mixed;
        clean.push(score);
        noisy.push(score + spec.noise * eps);

        let mut modalities = Vec::with_capacity(spec.modality_count());
        for (m, private_m) in u.iter().enumerate() {
            let rho = spec.redundancy[m];
            let latent: Vec<f64> = z.iter().map(|x| rho * x).chain(private_m.iter().map(|x| (1.0 - rho) * x)).collect();
            let base: Vec<f64> = st.loadings[m].iter().map(|row| dot(row, &latent)).collect();
            let observe = |rng: &mut ChaCha8Rng| -> Vec<f64> {
                base.iter()
                    .map(|b| b + spec.noise * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            };
            modalities.push(match spec.kinds[m] {
                ModalityKind::Vector => Features::Vector(observe(&mut rng)),
                ModalityKind::Sequence => {
                    let steps = rng.random_range(spec.min_steps..=spec.max_steps);
                    Features::Sequence((0..steps).map(|_| observe(&mut rng)).collect())
                }
            });
        }
        samples.push(Sample {
            id: format!("s{i:06}"),
            group_id: format!("g{:05}", i / spec.group_size),
            modalities,
            label: Label::Value(0.0),
        });
    }

    match spec.task {
        TaskKind::Regression => {
            for (s, y) in samples.iter_mut().zip(&noisy) {
                s.label = Label::Value(*y);
            }
        }
        TaskKind::Classification => {
            let mut sorted = clean.clone();
            sorted.sort_by(f64::total_cmp);
            let cuts: Vec<f64> = (1..spec.classes).map(|j| sorted[(j * n / spec.classes).min(n - 1)]).collect();
            for (s, y) in samples.iter_mut().zip(&noisy) {
                s.label = Label::Class(cuts.iter().filter(|c| *y >= **c).count());
            }
        }
    }
    Dataset::new(spec.manifest(n), samples)
}
