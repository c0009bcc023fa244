//! The four fusion layers: concat (CF), full tensor (TF), CP low-rank (LMF), and
//! Tucker-factored modality-rank fusion (MRRF).
//!
//! Every layer consumes M padded modality vectors (each with a leading constant 1,
//! see [`crate::tensor::pad_one`]) and produces an `h`-vector. The dense weight of
//! a tensor-fusion layer has mode order `(output, modality 1, …, modality M)`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Parameter, Parameterized, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{self, outer_product, DenseTensor, Matrix, Shape};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionKind {
    Cf,
    Tf,
    Lmf,
    Mrrf,
}

impl FusionKind {
    pub const ALL: [FusionKind; 4] = [FusionKind::Cf, FusionKind::Tf, FusionKind::Lmf, FusionKind::Mrrf];
}

impl fmt::Display for FusionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FusionKind::Cf => "cf",
            FusionKind::Tf => "tf",
            FusionKind::Lmf => "lmf",
            FusionKind::Mrrf => "mrrf",
        })
    }
}

impl FromStr for FusionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cf" => Ok(FusionKind::Cf),
            "tf" => Ok(FusionKind::Tf),
            "lmf" => Ok(FusionKind::Lmf),
            "mrrf" => Ok(FusionKind::Mrrf),
            other => Err(Error::Config(format!("unknown fusion kind {other:?} (expected cf, tf, lmf or mrrf)"))),
        }
    }
}

/// Uniform on `±√(6 / (fan_in + fan_out))`.
pub(crate) fn scaled_uniform(dims: &[usize], fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Result<DenseTensor> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n = dims.iter().product();
    DenseTensor::from_dims(dims, (0..n).map(|_| rng.random_range(-bound..=bound)).collect())
}

fn check_inputs(padded: &[usize], inputs: &[&[f64]]) -> Result<()> {
    if inputs.len() != padded.len() {
        return Err(Error::shape(format!(
            "layer fuses {} modalities, got {} inputs",
            padded.len(),
            inputs.len()
        )));
    }
    for (m, (x, &p)) in inputs.iter().zip(padded).enumerate() {
        if x.len() != p {
            return Err(Error::shape(format!(
                "modality {m}: padded input has length {}, layer expects {p}",
                x.len()
            )));
        }
    }
    Ok(())
}

fn check_padded(padded: &[usize]) -> Result<()> {
    if padded.is_empty() || padded.contains(&0) {
        return Err(Error::invalid(format!("padded modality dims must be non-empty and positive, got {padded:?}")));
    }
    Ok(())
}

/// Shared contract of every fusion layer.
pub trait Fusion: Parameterized {
    /// Padded input length per modality (`d_m + 1`).
    fn padded_dims(&self) -> &[usize];

    fn output_dim(&self) -> usize;

    /// Direct evaluation, no tape.
    fn forward(&self, inputs: &[&[f64]]) -> Result<Vec<f64>>;

    /// Taped evaluation for training; `inputs` are padded vectors already on `tape`.
    fn forward_tape(&self, tape: &mut Tape, inputs: &[Var]) -> Result<Var>;

    /// Trainable scalar count from the closed-form complexity formula.
    fn param_count(&self) -> usize;
}

/// Concatenation followed by one linear map; the pad slots act as the bias.
#[derive(Clone, Debug, PartialEq)]
pub struct ConcatFusion {
    padded: Vec<usize>,
    weight: Parameter,
}

impl ConcatFusion {
    pub fn new(padded: &[usize], h: usize, prefix: &str, rng: &mut impl Rng) -> Result<Self> {
        check_padded(padded)?;
        let total: usize = padded.iter().sum();
        let w = scaled_uniform(&[h, total], total, h, rng)?;
        Ok(ConcatFusion {
            padded: padded.to_vec(),
            weight: Parameter::new(format!("{prefix}weight"), w),
        })
    }

    pub fn from_weight(padded: &[usize], weight: Matrix) -> Result<Self> {
        check_padded(padded)?;
        let total: usize = padded.iter().sum();
        if weight.cols() != total {
            return Err(Error::shape(format!(
                "concat weight has {} columns, padded dims sum to {total}",
                weight.cols()
            )));
        }
        Ok(ConcatFusion {
            padded: padded.to_vec(),
            weight: Parameter::new("weight", weight.into_tensor()),
        })
    }

    pub fn weight(&self) -> &Parameter {
        &self.weight
    }
}

impl Parameterized for ConcatFusion {
    fn parameters(&self) -> Vec<&Parameter> {
        vec![&self.weight]
    }
    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        vec![&mut self.weight]
    }
}

impl Fusion for ConcatFusion {
    fn padded_dims(&self) -> &[usize] {
        &self.padded
    }

    fn output_dim(&self) -> usize {
        self.weight.value().dims()[0]
    }

    fn forward(&self, inputs: &[&[f64]]) -> Result<Vec<f64>> {
        check_inputs(&self.padded, inputs)?;
        let x = inputs.concat();
        tensor::matvec(self.weight.value().data(), self.output_dim(), x.len(), &x)
    }

    fn forward_tape(&self, tape: &mut Tape, inputs: &[Var]) -> Result<Var> {
        let w = tape.param(&self.weight);
        let x = tape.concat(inputs)?;
        tape.matvec(w, x)
    }

    fn param_count(&self) -> usize {
        self.output_dim() * self.padded.iter().sum::<usize>()
    }
}

/// Full outer-product fusion: `H = W · (x_1 ⊗ … ⊗ x_M)` with `W` of shape `(h, p_1, …, p_M)`.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorFusion {
    padded: Vec<usize>,
    weight: Parameter,
}

impl TensorFusion {
    pub fn new(padded: &[usize], h: usize, prefix: &str, rng: &mut impl Rng) -> Result<Self> {
        check_padded(padded)?;
        let mut dims = vec![h];
        dims.extend_from_slice(padded);
        let fan_in = padded.iter().product();
        let w = scaled_uniform(&dims, fan_in, h, rng)?;
        Ok(TensorFusion {
            padded: padded.to_vec(),
            weight: Parameter::new(format!("{prefix}weight"), w),
        })
    }

    /// Wraps a dense weight of shape `(h, p_1, …, p_M)`.
    pub fn from_weight(weight: DenseTensor) -> Result<Self> {
        if weight.order() < 2 {
            return Err(Error::shape(format!("tensor-fusion weight needs order ≥ 2, got {}", weight.shape())));
        }
        Ok(TensorFusion {
            padded: weight.dims()[1..].to_vec(),
            weight: Parameter::new("weight", weight),
        })
    }

    pub fn weight(&self) -> &Parameter {
        &self.weight
    }
}

impl Parameterized for TensorFusion {
    fn parameters(&self) -> Vec<&Parameter> {
        vec![&self.weight]
    }
    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        vec![&mut self.weight]
    }
}

impl Fusion for TensorFusion {
    fn padded_dims(&self) -> &[usize] {
        &self.padded
    }

    fn output_dim(&self) -> usize {
        self.weight.value().dims()[0]
    }

    fn forward(&self, inputs: &[&[f64]]) -> Result<Vec<f64>> {
        check_inputs(&self.padded, inputs)?;
        let d = outer_product(inputs)?;
        tensor::matvec(self.weight.value().data(), self.output_dim(), d.len(), d.data())
    }

    fn forward_tape(&self, tape: &mut Tape, inputs: &[Var]) -> Result<Var> {
        let w = tape.param(&self.weight);
        let d = tape.outer(inputs)?;
        let d = tape.flatten(d)?;
        tape.matvec(w, d)
    }

    fn param_count(&self) -> usize {
        self.output_dim() * self.padded.iter().product::<usize>()
    }
}

/// CP-factored fusion with one rank `r` shared by all modalities.
///
/// Factor `m` is an `r × p_m` matrix whose row `j` is the rank-1 component `w_m^j`;
/// the `r × h` output factor absorbs the component weights.
#[derive(Clone, Debug, PartialEq)]
pub struct LmfLayer {
    padded: Vec<usize>,
    rank: usize,
    factors: Vec<Parameter>,
    output: Parameter,
}

impl LmfLayer {
    pub fn new(padded: &[usize], rank: usize, h: usize, prefix: &str, rng: &mut impl Rng) -> Result<Self> {
        check_padded(padded)?;
        if rank == 0 {
            return Err(Error::invalid("LMF rank must be at least 1"));
        }
        let factors = padded
            .iter()
            .enumerate()
            .map(|(m, &p)| Ok(Parameter::new(format!("{prefix}factor{m}"), scaled_uniform(&[rank, p], p, rank, rng)?)))
            .collect::<Result<Vec<_>>>()?;
        let output = Parameter::new(format!("{prefix}output"), scaled_uniform(&[rank, h], rank, h, rng)?);
        Ok(LmfLayer {
            padded: padded.to_vec(),
            rank,
            factors,
            output,
        })
    }

    pub fn from_parts(factors: Vec<Matrix>, output: Matrix) -> Result<Self> {
        let rank = output.rows();
        if factors.is_empty() {
            return Err(Error::invalid("LMF needs at least one modality factor"));
        }
        if let Some(m) = factors.iter().position(|f| f.rows() != rank) {
            return Err(Error::shape(format!(
                "factor {m} has {} rows but the output factor has rank {rank}",
                factors[m].rows()
            )));
        }
        Ok(LmfLayer {
            padded: factors.iter().map(Matrix::cols).collect(),
            rank,
            factors: factors
                .into_iter()
                .enumerate()
                .map(|(m, f)| Parameter::new(format!("factor{m}"), f.into_tensor()))
                .collect(),
            output: Parameter::new("output", output.into_tensor()),
        })
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn factor(&self, m: usize) -> &Parameter {
        &self.factors[m]
    }

    pub fn output_factor(&self) -> &Parameter {
        &self.output
    }
}

impl Parameterized for LmfLayer {
    fn parameters(&self) -> Vec<&Parameter> {
        self.factors.iter().chain(std::iter::once(&self.output)).collect()
    }
    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        self.factors.iter_mut().chain(std::iter::once(&mut self.output)).collect()
    }
}

impl Fusion for LmfLayer {
    fn padded_dims(&self) -> &[usize] {
        &self.padded
    }

    fn output_dim(&self) -> usize {
        self.output.value().dims()[1]
    }

    fn forward(&self, inputs: &[&[f64]]) -> Result<Vec<f64>> {
        check_inputs(&self.padded, inputs)?;
        let mut q = vec![1.0; self.rank];
        for (f, x) in self.factors.iter().zip(inputs) {
            let proj = tensor::matvec(f.value().data(), self.rank, x.len(), x)?;
            q.iter_mut().zip(proj).for_each(|(a, b)| *a *= b);
        }
        tensor::tmatvec(self.output.value().data(), self.rank, self.output_dim(), &q)
    }

    fn forward_tape(&self, tape: &mut Tape, inputs: &[Var]) -> Result<Var> {
        if inputs.len() != self.factors.len() {
            return Err(Error::shape(format!("LMF fuses {} modalities, got {}", self.factors.len(), inputs.len())));
        }
        let mut q: Option<Var> = None;
        for (f, &x) in self.factors.iter().zip(inputs) {
            let w = tape.param(f);
            let proj = tape.matvec(w, x)?;
            q = Some(match q {
                None => proj,
                Some(acc) => tape.hadamard(acc, proj)?,
            });
        }
        let out = tape.param(&self.output);
        tape.matvec_t(out, q.expect("at least one modality"))
    }

    fn param_count(&self) -> usize {
        self.rank * self.padded.iter().sum::<usize>() + self.rank * self.output_dim()
    }
}

/// Tucker-factored fusion with an independent compression rank per modality.
///
/// Factor `W_m` is `p_m × r_m`; the dense core has shape `(r_1, …, r_M, h)`, i.e. the
/// output mode is kept at full size. Evaluation projects each padded input to
/// `z_m = W_mᵀ x_m`, forms `Z = z_1 ⊗ … ⊗ z_M`, and contracts `vec(Z)` against the
/// core viewed as a `(∏ r_m) × h` matrix. The `∏ p_m`-sized fused tensor is never built.
#[derive(Clone, Debug, PartialEq)]
pub struct MrrfLayer {
    padded: Vec<usize>,
    ranks: Vec<usize>,
    factors: Vec<Parameter>,
    core: Parameter,
}

/// Clamps each requested rank to `[1, p_m]`. Zero is an error; over-complete ranks
/// are clamped with a warning.
pub fn clamp_ranks(padded: &[usize], requested: &[usize]) -> Result<Vec<usize>> {
    if padded.len() != requested.len() {
        return Err(Error::invalid(format!(
            "{} ranks given for {} modalities",
            requested.len(),
            padded.len()
        )));
    }
    requested
        .iter()
        .zip(padded)
        .enumerate()
        .map(|(m, (&r, &p))| {
            if r == 0 {
                Err(Error::invalid(format!("rank for modality {m} must be at least 1")))
            } else if r > p {
                log::warn!("rank {r} for modality {m} exceeds padded dim {p}; clamping to {p}");
                Ok(p)
            } else {
                Ok(r)
            }
        })
        .collect()
}

impl MrrfLayer {
    pub fn new(padded: &[usize], ranks: &[usize], h: usize, prefix: &str, rng: &mut impl Rng) -> Result<Self> {
        check_padded(padded)?;
        let ranks = clamp_ranks(padded, ranks)?;
        let factors = padded
            .iter()
            .zip(&ranks)
            .enumerate()
            .map(|(m, (&p, &r))| Ok(Parameter::new(format!("{prefix}factor{m}"), scaled_uniform(&[p, r], p, r, rng)?)))
            .collect::<Result<Vec<_>>>()?;
        let mut core_dims = ranks.clone();
        core_dims.push(h);
        let core = scaled_uniform(&core_dims, ranks.iter().product(), h, rng)?;
        Ok(MrrfLayer {
            padded: padded.to_vec(),
            ranks,
            factors,
            core: Parameter::new(format!("{prefix}core"), core),
        })
    }

    /// Assembles a layer from explicit factors (`p_m × r_m`) and core (`r_1, …, r_M, h`).
    pub fn from_parts(factors: Vec<Matrix>, core: DenseTensor) -> Result<Self> {
        let ranks: Vec<usize> = factors.iter().map(Matrix::cols).collect();
        if core.order() != ranks.len() + 1 || core.dims()[..ranks.len()] != ranks[..] {
            return Err(Error::shape(format!(
                "core {} does not match factor ranks {ranks:?}",
                core.shape()
            )));
        }
        Ok(MrrfLayer {
            padded: factors.iter().map(Matrix::rows).collect(),
            ranks,
            factors: factors
                .into_iter()
                .enumerate()
                .map(|(m, f)| Parameter::new(format!("factor{m}"), f.into_tensor()))
                .collect(),
            core: Parameter::new("core", core),
        })
    }

    /// Full-rank layer with identity factors that reproduces `tf` exactly.
    pub fn from_tensor_fusion(tf: &TensorFusion) -> Result<Self> {
        let w = tf.weight().value();
        let order = w.order();
        let axes: Vec<usize> = (1..order).chain(std::iter::once(0)).collect();
        let core = w.permute(&axes)?;
        let factors = tf
            .padded_dims()
            .iter()
            .map(|&p| Matrix::identity(p))
            .collect::<Result<Vec<_>>>()?;
        Self::from_parts(factors, core)
    }

    /// Embeds a CP layer as a Tucker layer with superdiagonal core: `r_m = r` for
    /// every modality and `core[j, …, j, a] = output[j, a]`.
    pub fn from_lmf(lmf: &LmfLayer) -> Result<Self> {
        let m_count = lmf.padded.len();
        let r = lmf.rank;
        let h = lmf.output_dim();
        let factors = lmf
            .factors
            .iter()
            .map(|f| Ok(Matrix::from_tensor(f.value().clone())?.transpose()))
            .collect::<Result<Vec<_>>>()?;
        let mut dims = vec![r; m_count];
        dims.push(h);
        let mut core = DenseTensor::zeros(Shape::new(dims)?);
        let out = lmf.output.value().data();
        let mut index = vec![0; m_count + 1];
        for j in 0..r {
            for a in 0..h {
                index[..m_count].iter_mut().for_each(|i| *i = j);
                index[m_count] = a;
                core.set(&index, out[j * h + a])?;
            }
        }
        Self::from_parts(factors, core)
    }

    pub fn ranks(&self) -> &[usize] {
        &self.ranks
    }

    pub fn factor(&self, m: usize) -> &Parameter {
        &self.factors[m]
    }

    pub fn core(&self) -> &Parameter {
        &self.core
    }

    /// Expands to the dense `(h, p_1, …, p_M)` weight: `core ×_1 W_1 ⋯ ×_M W_M`,
    /// then the output mode is moved to the front.
    pub fn reconstruct_dense(&self) -> Result<DenseTensor> {
        let mut w = self.core.value().clone();
        for (m, f) in self.factors.iter().enumerate() {
            let f = Matrix::from_tensor(f.value().clone())?;
            w = tensor::kmode_product(&w, &f, m)?;
        }
        let m_count = self.factors.len();
        let axes: Vec<usize> = std::iter::once(m_count).chain(0..m_count).collect();
        w.permute(&axes)
    }

    fn projections(&self, inputs: &[&[f64]]) -> Result<Vec<Vec<f64>>> {
        self.factors
            .iter()
            .zip(inputs)
            .zip(&self.ranks)
            .map(|((f, x), &r)| tensor::tmatvec(f.value().data(), x.len(), r, x))
            .collect()
    }
}

/// Alias for [`MrrfLayer::from_lmf`].
pub fn as_superdiagonal_mrrf(lmf: &LmfLayer) -> Result<MrrfLayer> {
    MrrfLayer::from_lmf(lmf)
}

impl Parameterized for MrrfLayer {
    fn parameters(&self) -> Vec<&Parameter> {
        self.factors.iter().chain(std::iter::once(&self.core)).collect()
    }
    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        self.factors.iter_mut().chain(std::iter::once(&mut self.core)).collect()
    }
}

impl Fusion for MrrfLayer {
    fn padded_dims(&self) -> &[usize] {
        &self.padded
    }

    fn output_dim(&self) -> usize {
        *self.core.value().dims().last().expect("core has an output mode")
    }

    fn forward(&self, inputs: &[&[f64]]) -> Result<Vec<f64>> {
        check_inputs(&self.padded, inputs)?;
        let z = outer_product(&self.projections(inputs)?)?;
        tensor::tmatvec(self.core.value().data(), z.len(), self.output_dim(), z.data())
    }

    fn forward_tape(&self, tape: &mut Tape, inputs: &[Var]) -> Result<Var> {
        if inputs.len() != self.factors.len() {
            return Err(Error::shape(format!("MRRF fuses {} modalities, got {}", self.factors.len(), inputs.len())));
        }
        let mut zs = Vec::with_capacity(inputs.len());
        for (f, &x) in self.factors.iter().zip(inputs) {
            let w = tape.param(f);
            zs.push(tape.matvec_t(w, x)?);
        }
        let z = tape.outer(&zs)?;
        let z = tape.flatten(z)?;
        let core = tape.param(&self.core);
        tape.matvec_t(core, z)
    }

    fn param_count(&self) -> usize {
        let factors: usize = self.padded.iter().zip(&self.ranks).map(|(p, r)| p * r).sum();
        factors + self.ranks.iter().product::<usize>() * self.output_dim()
    }
}

/// Closed-form trainable-scalar counts, keyed by padded dims.
pub mod complexity {
    pub fn concat(padded: &[usize], h: usize) -> usize {
        h * padded.iter().sum::<usize>()
    }

    pub fn tensor(padded: &[usize], h: usize) -> usize {
        h * padded.iter().product::<usize>()
    }

    pub fn lmf(padded: &[usize], rank: usize, h: usize) -> usize {
        padded.iter().map(|p| rank * p).sum::<usize>() + rank * h
    }

    pub fn mrrf(padded: &[usize], ranks: &[usize], h: usize) -> usize {
        padded.iter().zip(ranks).map(|(p, r)| p * r).sum::<usize>() + ranks.iter().product::<usize>() * h
    }
}

/// One of the four layers behind a single type.
#[derive(Clone, Debug, PartialEq)]
pub enum FusionLayer {
    Concat(ConcatFusion),
    Tensor(TensorFusion),
    LowRank(LmfLayer),
    Mrrf(MrrfLayer),
}

impl FusionLayer {
    pub fn kind(&self) -> FusionKind {
        match self {
            FusionLayer::Concat(_) => FusionKind::Cf,
            FusionLayer::Tensor(_) => FusionKind::Tf,
            FusionLayer::LowRank(_) => FusionKind::Lmf,
            FusionLayer::Mrrf(_) => FusionKind::Mrrf,
        }
    }

    fn inner(&self) -> &dyn Fusion {
        match self {
            FusionLayer::Concat(l) => l,
            FusionLayer::Tensor(l) => l,
            FusionLayer::LowRank(l) => l,
            FusionLayer::Mrrf(l) => l,
        }
    }
}

impl Parameterized for FusionLayer {
    fn parameters(&self) -> Vec<&Parameter> {
        self.inner().parameters()
    }
    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        match self {
            FusionLayer::Concat(l) => l.parameters_mut(),
            FusionLayer::Tensor(l) => l.parameters_mut(),
            FusionLayer::LowRank(l) => l.parameters_mut(),
            FusionLayer::Mrrf(l) => l.parameters_mut(),
        }
    }
}

impl Fusion for FusionLayer {
    fn padded_dims(&self) -> &[usize] {
        self.inner().padded_dims()
    }
    fn output_dim(&self) -> usize {
        self.inner().output_dim()
    }
    fn forward(&self, inputs: &[&[f64]]) -> Result<Vec<f64>> {
        self.inner().forward(inputs)
    }
    fn forward_tape(&self, tape: &mut Tape, inputs: &[Var]) -> Result<Var> {
        self.inner().forward_tape(tape, inputs)
    }
    fn param_count(&self) -> usize {
        self.inner().param_count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::OpKind;
    use crate::tensor::pad_one;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random_padded_inputs(padded: &[usize], r: &mut impl Rng) -> Vec<Vec<f64>> {
        padded
            .iter()
            .map(|&p| {
                let v: Vec<f64> = (0..p - 1).map(|_| r.random_range(-1.0..1.0)).collect();
                pad_one(&v).into_data()
            })
            .collect()
    }

    fn refs(v: &[Vec<f64>]) -> Vec<&[f64]> {
        v.iter().map(Vec::as_slice).collect()
    }

    /// H[a] = Σ_{i,j,k} W[a,i,j,k] x[i] y[j] z[k], written as loops.
    fn tf_loop_oracle(w: &DenseTensor, xs: &[Vec<f64>]) -> Vec<f64> {
        let d = w.dims();
        let mut out = vec![0.0; d[0]];
        for a in 0..d[0] {
            for i in 0..d[1] {
                for j in 0..d[2] {
                    for k in 0..d[3] {
                        out[a] += w.get(&[a, i, j, k]).unwrap() * xs[0][i] * xs[1][j] * xs[2][k];
                    }
                }
            }
        }
        out
    }

    /// Dense weight of a CP layer by explicit summation over rank-1 terms.
    fn lmf_reconstruct_oracle(l: &LmfLayer) -> DenseTensor {
        let p = l.padded_dims().to_vec();
        let h = l.output_dim();
        let mut w = DenseTensor::zeros(Shape::new([h, p[0], p[1], p[2]]).unwrap());
        let f = |m: usize, j: usize, i: usize| l.factor(m).value().get(&[j, i]).unwrap();
        for a in 0..h {
            for i in 0..p[0] {
                for jj in 0..p[1] {
                    for k in 0..p[2] {
                        let mut s = 0.0;
                        for r in 0..l.rank() {
                            s += l.output_factor().value().get(&[r, a]).unwrap() * f(0, r, i) * f(1, r, jj) * f(2, r, k);
                        }
                        w.set(&[a, i, jj, k], s).unwrap();
                    }
                }
            }
        }
        w
    }

    #[test]
    fn concat_zero_and_hand_sum() {
        let z = ConcatFusion::from_weight(&[2, 2], Matrix::zeros(3, 4).unwrap()).unwrap();
        assert_eq!(z.forward(&[&[1.0, 5.0], &[1.0, -2.0]]).unwrap(), vec![0.0; 3]);
        let ones = ConcatFusion::from_weight(&[2, 2], Matrix::new(1, 4, vec![1.0; 4]).unwrap()).unwrap();
        let a = pad_one(&[1.0]);
        let b = pad_one(&[2.0]);
        assert_eq!(ones.forward(&[a.data(), b.data()]).unwrap(), vec![5.0]);
        assert!(ones.forward(&[a.data()]).is_err());
        assert!(ones.forward(&[a.data(), &[1.0, 2.0, 3.0]]).is_err());
    }

    #[test]
    fn concat_matches_loop() {
        let mut r = rng(1);
        let padded = [3, 4, 2];
        let l = ConcatFusion::new(&padded, 3, "", &mut r).unwrap();
        let xs = random_padded_inputs(&padded, &mut r);
        let got = l.forward(&refs(&xs)).unwrap();
        let flat: Vec<f64> = xs.concat();
        for a in 0..3 {
            let mut s = 0.0;
            for (j, x) in flat.iter().enumerate() {
                s += l.weight().value().get(&[a, j]).unwrap() * x;
            }
            assert!((got[a] - s).abs() < 1e-12);
        }
    }

    #[test]
    fn tf_counting_bias_and_loops() {
        let padded = [3, 2, 4];
        let w = DenseTensor::filled(Shape::new([2, 3, 2, 4]).unwrap(), 1.0);
        let tf = TensorFusion::from_weight(w).unwrap();
        let ones: Vec<Vec<f64>> = padded.iter().map(|&p| vec![1.0; p]).collect();
        assert_eq!(tf.forward(&refs(&ones)).unwrap(), vec![24.0, 24.0]);

        let mut w = DenseTensor::zeros(Shape::new([2, 3, 2, 4]).unwrap());
        w.set(&[1, 0, 0, 0], 2.5).unwrap();
        let tf = TensorFusion::from_weight(w).unwrap();
        let xs = random_padded_inputs(&padded, &mut rng(2));
        assert_eq!(tf.forward(&refs(&xs)).unwrap(), vec![0.0, 2.5]);

        let mut r = rng(3);
        let tf = TensorFusion::new(&padded, 3, "", &mut r).unwrap();
        let xs = random_padded_inputs(&padded, &mut r);
        let got = tf.forward(&refs(&xs)).unwrap();
        let expect = tf_loop_oracle(tf.weight().value(), &xs);
        for (g, e) in got.iter().zip(&expect) {
            assert!((g - e).abs() < 1e-12);
        }
    }

    #[test]
    fn lmf_cases() {
        // rank 1, unit factors: H[a] = ∏_m Σ_j x_m[j]
        let padded = [2, 3, 2];
        let factors: Vec<Matrix> = padded.iter().map(|&p| Matrix::new(1, p, vec![1.0; p]).unwrap()).collect();
        let l = LmfLayer::from_parts(factors, Matrix::new(1, 2, vec![1.0, 1.0]).unwrap()).unwrap();
        let xs = random_padded_inputs(&padded, &mut rng(4));
        let expect: f64 = xs.iter().map(|x| x.iter().sum::<f64>()).product();
        for v in l.forward(&refs(&xs)).unwrap() {
            assert!((v - expect).abs() < 1e-12);
        }

        let mut r = rng(5);
        let l = LmfLayer::new(&padded, 3, 2, "", &mut r).unwrap();
        let dense = TensorFusion::from_weight(lmf_reconstruct_oracle(&l)).unwrap();
        for _ in 0..10 {
            let xs = random_padded_inputs(&padded, &mut r);
            let a = l.forward(&refs(&xs)).unwrap();
            let b = dense.forward(&refs(&xs)).unwrap();
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() < 1e-9);
            }
        }

        let factors: Vec<Matrix> = padded.iter().map(|&p| Matrix::new(2, p, vec![0.7; 2 * p]).unwrap()).collect();
        let zero = LmfLayer::from_parts(factors, Matrix::zeros(2, 3).unwrap()).unwrap();
        assert_eq!(zero.forward(&refs(&xs)).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn mrrf_identity_factors_match_tf() {
        let mut r = rng(6);
        let padded = [3, 4, 2];
        let tf = TensorFusion::new(&padded, 3, "", &mut r).unwrap();
        let mrrf = MrrfLayer::from_tensor_fusion(&tf).unwrap();
        assert_eq!(mrrf.ranks(), &padded);
        assert_eq!(mrrf.reconstruct_dense().unwrap(), *tf.weight().value());
        for _ in 0..20 {
            let xs = random_padded_inputs(&padded, &mut r);
            let a = mrrf.forward(&refs(&xs)).unwrap();
            let b = tf.forward(&refs(&xs)).unwrap();
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn mrrf_matches_dense_reconstruction() {
        let mut r = rng(7);
        let padded = [4, 3, 5];
        let l = MrrfLayer::new(&padded, &[2, 3, 1], 3, "", &mut r).unwrap();
        let w = l.reconstruct_dense().unwrap();
        assert_eq!(w.dims(), &[3, 4, 3, 5]);
        for _ in 0..20 {
            let xs = random_padded_inputs(&padded, &mut r);
            let a = l.forward(&refs(&xs)).unwrap();
            let b = tf_loop_oracle(&w, &xs);
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn mrrf_zero_core_and_rank1_separable() {
        let padded = [2, 3, 2];
        let mut r = rng(8);
        let factors: Vec<Matrix> = padded
            .iter()
            .map(|&p| Matrix::new(p, 1, (0..p).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap())
            .collect();
        let zero = MrrfLayer::from_parts(factors.clone(), DenseTensor::zeros(Shape::new([1, 1, 1, 2]).unwrap())).unwrap();
        let xs = random_padded_inputs(&padded, &mut r);
        assert_eq!(zero.forward(&refs(&xs)).unwrap(), vec![0.0, 0.0]);

        let unit = MrrfLayer::from_parts(factors.clone(), DenseTensor::filled(Shape::new([1, 1, 1, 1]).unwrap(), 1.0)).unwrap();
        let w = unit.reconstruct_dense().unwrap();
        let cols: Vec<Vec<f64>> = factors.iter().map(|f| f.data().to_vec()).collect();
        let expect = outer_product(&cols).unwrap();
        assert!(w.reshape(&padded).unwrap().max_abs_diff(&expect).unwrap() < 1e-15);
    }

    #[test]
    fn superdiagonal_embedding_preserves_lmf() {
        let mut r = rng(9);
        let padded = [3, 4, 2];
        let lmf = LmfLayer::new(&padded, 3, 2, "", &mut r).unwrap();
        let mrrf = as_superdiagonal_mrrf(&lmf).unwrap();
        assert_eq!(mrrf.ranks(), &[3, 3, 3]);
        for _ in 0..100 {
            let xs = random_padded_inputs(&padded, &mut r);
            let a = lmf.forward(&refs(&xs)).unwrap();
            let b = mrrf.forward(&refs(&xs)).unwrap();
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() < 1e-12);
            }
        }

        let one = LmfLayer::new(&padded, 1, 4, "", &mut r).unwrap();
        assert_eq!(as_superdiagonal_mrrf(&one).unwrap().core().value().dims(), &[1, 1, 1, 4]);

        let factors: Vec<Matrix> = padded.iter().map(|&p| Matrix::zeros(2, p).unwrap()).collect();
        let zero = LmfLayer::from_parts(factors, Matrix::zeros(2, 3).unwrap()).unwrap();
        assert!(as_superdiagonal_mrrf(&zero).unwrap().core().value().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn param_counts() {
        let mut r = rng(10);
        let padded = [9, 9, 9];
        let m = MrrfLayer::new(&padded, &[3, 3, 3], 4, "", &mut r).unwrap();
        assert_eq!(m.param_count(), 189);
        assert_eq!(m.scalar_count(), 189);
        let t = TensorFusion::new(&padded, 4, "", &mut r).unwrap();
        assert_eq!(t.param_count(), 2916);
        assert_eq!(t.scalar_count(), 2916);
        let c = ConcatFusion::new(&padded, 4, "", &mut r).unwrap();
        assert_eq!(c.param_count(), 108);
        assert_eq!(c.scalar_count(), 108);
        let l = LmfLayer::new(&padded, 3, 4, "", &mut r).unwrap();
        assert_eq!(l.param_count(), 3 * 27 + 12);
        assert_eq!(l.scalar_count(), l.param_count());

        let padded = [4, 6, 3];
        let m = MrrfLayer::new(&padded, &[1, 1, 1], 1, "", &mut r).unwrap();
        assert_eq!(m.param_count(), 4 + 6 + 3 + 1);
    }

    #[test]
    fn mrrf_count_increases_in_each_rank() {
        let padded = [5, 6, 4];
        for m in 0..3 {
            let mut ranks = vec![2, 3, 2];
            let mut prev = complexity::mrrf(&padded, &ranks, 3);
            for r in ranks[m] + 1..=padded[m] {
                ranks[m] = r;
                let next = complexity::mrrf(&padded, &ranks, 3);
                assert!(next > prev);
                prev = next;
            }
        }
    }

    #[test]
    fn ranks_clamp_and_reject_zero() {
        let mut r = rng(11);
        let m = MrrfLayer::new(&[3, 2], &[7, 2], 2, "", &mut r).unwrap();
        assert_eq!(m.ranks(), &[3, 2]);
        assert!(MrrfLayer::new(&[3, 2], &[0, 2], 2, "", &mut r).is_err());
        assert!(MrrfLayer::new(&[3, 2], &[1], 2, "", &mut r).is_err());
    }

    #[test]
    fn mrrf_records_m_plus_two_contractions() {
        let mut r = rng(12);
        let padded = [3, 4, 2];
        let l = MrrfLayer::new(&padded, &[2, 2, 2], 3, "", &mut r).unwrap();
        let xs = random_padded_inputs(&padded, &mut r);
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| tape.constant(DenseTensor::vector(x.clone()).unwrap())).collect();
        let out = l.forward_tape(&mut tape, &vars).unwrap();
        let kinds = tape.recorded_kinds();
        assert_eq!(kinds.iter().filter(|k| k.is_contraction()).count(), padded.len() + 2);
        assert_eq!(kinds.iter().filter(|k| **k == OpKind::OuterProduct).count(), 1);
        let direct = l.forward(&refs(&xs)).unwrap();
        assert_eq!(tape.value(out).data(), &direct[..]);
    }

    #[test]
    fn taped_forward_equals_direct_forward_for_all_layers() {
        let mut r = rng(13);
        let padded = [3, 4, 2];
        let layers = vec![
            FusionLayer::Concat(ConcatFusion::new(&padded, 3, "", &mut r).unwrap()),
            FusionLayer::Tensor(TensorFusion::new(&padded, 3, "", &mut r).unwrap()),
            FusionLayer::LowRank(LmfLayer::new(&padded, 2, 3, "", &mut r).unwrap()),
            FusionLayer::Mrrf(MrrfLayer::new(&padded, &[2, 3, 1], 3, "", &mut r).unwrap()),
        ];
        for l in &layers {
            let xs = random_padded_inputs(&padded, &mut r);
            let mut tape = Tape::new();
            let vars: Vec<Var> = xs.iter().map(|x| tape.constant(DenseTensor::vector(x.clone()).unwrap())).collect();
            let out = l.forward_tape(&mut tape, &vars).unwrap();
            let direct = l.forward(&refs(&xs)).unwrap();
            for (a, b) in tape.value(out).data().iter().zip(&direct) {
                assert!((a - b).abs() < 1e-12, "{:?}", l.kind());
            }
        }
    }

    #[test]
    fn zero_inputs_depend_only_on_pad_slot_weights() {
        let mut r = rng(14);
        let padded = [3, 4, 2];
        let zeros: Vec<Vec<f64>> = padded.iter().map(|&p| pad_one(&vec![0.0; p - 1]).into_data()).collect();
        let layers = vec![
            FusionLayer::Concat(ConcatFusion::new(&padded, 3, "", &mut r).unwrap()),
            FusionLayer::Tensor(TensorFusion::new(&padded, 3, "", &mut r).unwrap()),
            FusionLayer::LowRank(LmfLayer::new(&padded, 2, 3, "", &mut r).unwrap()),
            FusionLayer::Mrrf(MrrfLayer::new(&padded, &[2, 3, 1], 3, "", &mut r).unwrap()),
        ];
        for l in layers {
            let before = l.forward(&refs(&zeros)).unwrap();
            let mut perturbed = l.clone();
            perturb_non_pad(&mut perturbed, &padded, &mut r);
            let after = perturbed.forward(&refs(&zeros)).unwrap();
            assert_eq!(before, after, "{:?}", l.kind());
        }
    }

    /// Randomizes every weight that multiplies a non-constant input slot.
    fn perturb_non_pad(l: &mut FusionLayer, padded: &[usize], r: &mut impl Rng) {
        match l {
            FusionLayer::Concat(c) => {
                let cols = padded.iter().sum::<usize>();
                let starts: Vec<usize> = padded.iter().scan(0, |s, &p| { let v = *s; *s += p; Some(v) }).collect();
                let w = c.weight.values_mut();
                for (i, v) in w.iter_mut().enumerate() {
                    if !starts.contains(&(i % cols)) {
                        *v = r.random_range(-5.0..5.0);
                    }
                }
            }
            FusionLayer::Tensor(t) => {
                let dims = t.weight.value().dims().to_vec();
                let shape = Shape::new(dims).unwrap();
                let strides = shape.strides();
                let w = t.weight.values_mut();
                for (off, v) in w.iter_mut().enumerate() {
                    let any_non_pad = (1..strides.len()).any(|k| !(off / strides[k]).is_multiple_of(shape.dims()[k]));
                    if any_non_pad {
                        *v = r.random_range(-5.0..5.0);
                    }
                }
            }
            FusionLayer::LowRank(lmf) => {
                for (f, &p) in lmf.factors.iter_mut().zip(padded) {
                    for (i, v) in f.values_mut().iter_mut().enumerate() {
                        if i % p != 0 {
                            *v = r.random_range(-5.0..5.0);
                        }
                    }
                }
            }
            FusionLayer::Mrrf(m) => {
                for (f, &rank) in m.factors.iter_mut().zip(&m.ranks) {
                    for (i, v) in f.values_mut().iter_mut().enumerate() {
                        if i >= rank {
                            *v = r.random_range(-5.0..5.0);
                        }
                    }
                }
            }
        }
    }
}
