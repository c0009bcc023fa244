//! Fast built-in property checks run by the `selftest` command.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{grad_check, GradCheckOptions, GradCheckReport};
use crate::data::{generate_synthetic, split, ModalityKind, SyntheticSpec};
use crate::encoders::EncoderKind;
use crate::error::Result;
use crate::fusion::{as_superdiagonal_mrrf, complexity, Fusion, FusionKind, LmfLayer, MrrfLayer, TensorFusion};
use crate::metrics;
use crate::model::{EncoderSpec, Model, ModelSpec};
use crate::optim::{AdamConfig, AdamState};
use crate::tensor::{fold, kmode_product, unfold, DenseTensor, Matrix, Shape};

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SelftestReport {
    pub checks: Vec<CheckResult>,
}

impl SelftestReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

fn uniform(r: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| r.random_range(-1.0..1.0)).collect()
}

/// Random padded inputs: a leading one, then uniform entries.
pub fn random_padded(r: &mut ChaCha8Rng, padded: &[usize]) -> Vec<Vec<f64>> {
    padded
        .iter()
        .map(|&p| {
            let mut x = vec![1.0];
            x.extend(uniform(r, p - 1));
            x
        })
        .collect()
}

/// Largest output difference between an MRRF layer and the tensor-fusion layer
/// built from its reconstructed dense weight.
pub fn factored_vs_dense_gap(layer: &MrrfLayer, inputs: &[Vec<f64>]) -> Result<f64> {
    let tf = TensorFusion::from_weight(layer.reconstruct_dense()?)?;
    let refs: Vec<&[f64]> = inputs.iter().map(Vec::as_slice).collect();
    let a = layer.forward(&refs)?;
    let b = tf.forward(&refs)?;
    Ok(a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max))
}

/// Builds a small model of the given kinds and gradient-checks it on one sample.
pub fn model_grad_check(encoder: EncoderKind, fusion: FusionKind, seed: u64) -> Result<GradCheckReport> {
    let kind = if encoder == EncoderKind::Lstm { ModalityKind::Sequence } else { ModalityKind::Vector };
    let syn = SyntheticSpec {
        kinds: vec![kind; 3],
        widths: vec![3, 2, 3],
        min_steps: 5,
        max_steps: 5,
        noise: 0.1,
        ..SyntheticSpec::default()
    };
    let data = generate_synthetic(&syn, 1, seed)?;
    let spec = ModelSpec {
        fusion,
        fusion_dim: 3,
        ranks: Some(vec![2, 3, 2]),
        lmf_rank: Some(2),
        encoders: vec![EncoderSpec { kind: encoder, hidden: 4, out: 2 }; 3],
    };
    let model = Model::build(&spec, &data.manifest, seed)?;
    grad_check(&model, &data.samples[0], &GradCheckOptions::default())
}

fn check(name: &'static str, f: impl FnOnce() -> Result<(bool, String)>) -> CheckResult {
    match f() {
        Ok((passed, detail)) => CheckResult { name, passed, detail },
        Err(e) => CheckResult {
            name,
            passed: false,
            detail: e.to_string(),
        },
    }
}

pub fn run_selftest() -> SelftestReport {
    let mut checks = Vec::new();

    checks.push(check("unfold_fold_roundtrip", || {
        let mut r = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let dims: Vec<usize> = (0..r.random_range(1..5)).map(|_| r.random_range(1..5)).collect();
            let shape = Shape::new(dims.clone())?;
            let t = DenseTensor::new(shape.clone(), uniform(&mut r, shape.numel()))?;
            for k in 0..dims.len() {
                if fold(&unfold(&t, k)?, k, &shape)? != t {
                    return Ok((false, format!("dims {dims:?} mode {k}")));
                }
            }
        }
        Ok((true, "20 random tensors".into()))
    }));

    checks.push(check("kmode_products_commute", || {
        let mut r = ChaCha8Rng::seed_from_u64(2);
        let mut worst: f64 = 0.0;
        for _ in 0..20 {
            let t = DenseTensor::from_dims(&[3, 4, 2], uniform(&mut r, 24))?;
            let a = Matrix::new(2, 3, uniform(&mut r, 6))?;
            let b = Matrix::new(5, 2, uniform(&mut r, 10))?;
            let x = kmode_product(&kmode_product(&t, &a, 0)?, &b, 2)?;
            let y = kmode_product(&kmode_product(&t, &b, 2)?, &a, 0)?;
            worst = worst.max(x.max_abs_diff(&y)?);
        }
        Ok((worst < 1e-12, format!("max diff {worst:e}")))
    }));

    checks.push(check("factored_equals_dense", || {
        let mut r = ChaCha8Rng::seed_from_u64(3);
        let mut worst: f64 = 0.0;
        for _ in 0..20 {
            let padded: Vec<usize> = (0..3).map(|_| r.random_range(2..7)).collect();
            let ranks: Vec<usize> = padded.iter().map(|&p| r.random_range(1..=p)).collect();
            let layer = MrrfLayer::new(&padded, &ranks, r.random_range(1..5), "", &mut r)?;
            worst = worst.max(factored_vs_dense_gap(&layer, &random_padded(&mut r, &padded))?);
        }
        Ok((worst < 1e-9, format!("max diff {worst:e}")))
    }));

    checks.push(check("superdiagonal_embedding", || {
        let mut r = ChaCha8Rng::seed_from_u64(4);
        let mut worst: f64 = 0.0;
        for _ in 0..20 {
            let padded: Vec<usize> = (0..3).map(|_| r.random_range(2..6)).collect();
            let lmf = LmfLayer::new(&padded, r.random_range(1..5), 3, "", &mut r)?;
            let mrrf = as_superdiagonal_mrrf(&lmf)?;
            let xs = random_padded(&mut r, &padded);
            let refs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
            let (a, b) = (lmf.forward(&refs)?, mrrf.forward(&refs)?);
            worst = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(worst, f64::max);
        }
        Ok((worst < 1e-12, format!("max diff {worst:e}")))
    }));

    checks.push(check("parameter_counts", || {
        let m = complexity::mrrf(&[9, 9, 9], &[3, 3, 3], 4);
        let t = complexity::tensor(&[9, 9, 9], 4);
        Ok((m == 189 && t == 2916, format!("mrrf {m}, tf {t}")))
    }));

    checks.push(check("model_gradients", || {
        let mut worst: f64 = 0.0;
        for enc in EncoderKind::ALL {
            for fusion in FusionKind::ALL {
                let rep = model_grad_check(enc, fusion, 0)?;
                if !rep.passed() {
                    return Ok((false, format!("{enc} x {fusion}: worst {:e}", rep.worst())));
                }
                worst = worst.max(rep.worst());
            }
        }
        Ok((true, format!("worst rel err {worst:e}")))
    }));

    checks.push(check("adam_first_step", || {
        let mut p = crate::autodiff::Parameter::new("p", DenseTensor::vector(vec![0.0])?);
        struct One<'a>(&'a mut crate::autodiff::Parameter);
        impl crate::autodiff::Parameterized for One<'_> {
            fn parameters(&self) -> Vec<&crate::autodiff::Parameter> {
                vec![&*self.0]
            }
            fn parameters_mut(&mut self) -> Vec<&mut crate::autodiff::Parameter> {
                vec![&mut *self.0]
            }
        }
        let mut holder = One(&mut p);
        let mut adam = AdamState::new(AdamConfig::new(0.1), &holder)?;
        holder.0.grads_mut()[0] = 1.0;
        adam.step(&mut holder)?;
        let got = p.value().data()[0];
        let want = -0.1 / (1.0 + 1e-8);
        Ok(((got - want).abs() < 1e-9, format!("p = {got}")))
    }));

    checks.push(check("metrics_examples", || {
        let m = metrics::mae(&[1.0, 2.0], &[0.0, 0.0])?;
        let f = metrics::f1(&[1, 1, 1, 0, 0], &[1, 1, 0, 1, 0], 1)?;
        let a = metrics::acc7(&[3.7], &[3.0])?;
        Ok((m == 1.5 && (f - 2.0 / 3.0).abs() < 1e-15 && a == 1.0, format!("mae {m}, f1 {f}, acc7 {a}")))
    }));

    checks.push(check("group_disjoint_split", || {
        let syn = SyntheticSpec {
            group_size: 3,
            ..SyntheticSpec::default()
        };
        let data = generate_synthetic(&syn, 90, 5)?;
        let s = split(&data, [0.6, 0.2, 0.2], 9)?;
        let groups = |d: &crate::data::Dataset| d.samples.iter().map(|x| x.group_id.clone()).collect::<std::collections::BTreeSet<_>>();
        let (a, b, c) = (groups(&s.train), groups(&s.validation), groups(&s.test));
        let ok = a.is_disjoint(&b) && a.is_disjoint(&c) && b.is_disjoint(&c);
        Ok((ok, format!("{}/{}/{} groups", a.len(), b.len(), c.len())))
    }));

    SelftestReport { checks }
}
