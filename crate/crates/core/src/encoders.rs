//! Per-modality sub-embedding networks.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Parameter, Parameterized, Tape, Var};
use crate::data::Features;
use crate::error::{Error, Result};
use crate::fusion::scaled_uniform;
use crate::tensor::{self, DenseTensor, Shape};

/// `y = W x + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: Parameter,
    pub bias: Parameter,
}

impl Linear {
    pub fn new(input: usize, output: usize, prefix: &str, rng: &mut impl Rng) -> Result<Self> {
        Ok(Linear {
            weight: Parameter::new(format!("{prefix}weight"), scaled_uniform(&[output, input], input, output, rng)?),
            bias: Parameter::new(format!("{prefix}bias"), DenseTensor::zeros(Shape::new([output])?)),
        })
    }

    pub fn input_dim(&self) -> usize {
        self.weight.value().dims()[1]
    }

    pub fn output_dim(&self) -> usize {
        self.weight.value().dims()[0]
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut y = tensor::matvec(self.weight.value().data(), self.output_dim(), self.input_dim(), x)?;
        y.iter_mut().zip(self.bias.value().data()).for_each(|(y, b)| *y += b);
        Ok(y)
    }

    pub fn forward_tape(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let w = tape.param(&self.weight);
        let b = tape.param(&self.bias);
        let y = tape.matvec(w, x)?;
        tape.add(y, b)
    }
}

impl Parameterized for Linear {
    fn parameters(&self) -> Vec<&Parameter> {
        vec![&self.weight, &self.bias]
    }
    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Two-layer feed-forward encoder: `layer2 · relu(layer1 · x + b1) + b2`.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpEncoder {
    pub layer1: Linear,
    pub layer2: Linear,
}

impl MlpEncoder {
    pub fn new(input: usize, hidden: usize, output: usize, prefix: &str, rng: &mut impl Rng) -> Result<Self> {
        Ok(MlpEncoder {
            layer1: Linear::new(input, hidden, &format!("{prefix}l1."), rng)?,
            layer2: Linear::new(hidden, output, &format!("{prefix}l2."), rng)?,
        })
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut h = self.layer1.forward(x)?;
        h.iter_mut().for_each(|v| *v = v.max(0.0));
        self.layer2.forward(&h)
    }

    pub fn forward_tape(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let h = self.layer1.forward_tape(tape, x)?;
        let h = tape.relu(h)?;
        self.layer2.forward_tape(tape, h)
    }
}

impl Parameterized for MlpEncoder {
    fn parameters(&self) -> Vec<&Parameter> {
        let mut p = self.layer1.parameters();
        p.extend(self.layer2.parameters());
        p
    }
    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        let mut p = self.layer1.parameters_mut();
        p.extend(self.layer2.parameters_mut());
        p
    }
}

/// Single-layer unidirectional LSTM; the embedding is the final hidden state.
///
/// Each gate reads `[x_t; h_{t-1}]` through its own `H × (in + H)` matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmEncoder {
    pub input_gate: Linear,
    pub forget_gate: Linear,
    pub output_gate: Linear,
    pub candidate: Linear,
    hidden: usize,
}

impl LstmEncoder {
    pub fn new(input: usize, hidden: usize, prefix: &str, rng: &mut impl Rng) -> Result<Self> {
        let gate = |name: &str, rng: &mut _| Linear::new(input + hidden, hidden, &format!("{prefix}{name}."), rng);
        Ok(LstmEncoder {
            input_gate: gate("input", rng)?,
            forget_gate: gate("forget", rng)?,
            output_gate: gate("output", rng)?,
            candidate: gate("candidate", rng)?,
            hidden,
        })
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden
    }

    pub fn input_dim(&self) -> usize {
        self.input_gate.input_dim() - self.hidden
    }

    /// Runs the recurrence and returns every `(h_t, c_t)`.
    pub fn states(&self, seq: &[Vec<f64>]) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
        if seq.is_empty() {
            return Err(Error::invalid("LSTM input sequence is empty"));
        }
        let sigmoid = crate::autodiff::tape_sigmoid;
        let mut h = vec![0.0; self.hidden];
        let mut c = vec![0.0; self.hidden];
        let mut out = Vec::with_capacity(seq.len());
        for x in seq {
            let xh = [x.as_slice(), h.as_slice()].concat();
            let i = self.input_gate.forward(&xh)?;
            let f = self.forget_gate.forward(&xh)?;
            let o = self.output_gate.forward(&xh)?;
            let g = self.candidate.forward(&xh)?;
            for k in 0..self.hidden {
                c[k] = sigmoid(f[k]) * c[k] + sigmoid(i[k]) * g[k].tanh();
                h[k] = sigmoid(o[k]) * c[k].tanh();
            }
            out.push((h.clone(), c.clone()));
        }
        Ok(out)
    }

    pub fn forward(&self, seq: &[Vec<f64>]) -> Result<Vec<f64>> {
        Ok(self.states(seq)?.pop().expect("non-empty").0)
    }

    pub fn forward_tape(&self, tape: &mut Tape, seq: &[Vec<f64>]) -> Result<Var> {
        if seq.is_empty() {
            return Err(Error::invalid("LSTM input sequence is empty"));
        }
        let zeros = DenseTensor::zeros(Shape::new([self.hidden])?);
        let mut h = tape.constant(zeros.clone());
        let mut c = tape.constant(zeros);
        for x in seq {
            let x = tape.constant(DenseTensor::vector(x.clone())?);
            let xh = tape.concat(&[x, h])?;
            let i = self.input_gate.forward_tape(tape, xh)?;
            let i = tape.sigmoid(i)?;
            let f = self.forget_gate.forward_tape(tape, xh)?;
            let f = tape.sigmoid(f)?;
            let o = self.output_gate.forward_tape(tape, xh)?;
            let o = tape.sigmoid(o)?;
            let g = self.candidate.forward_tape(tape, xh)?;
            let g = tape.tanh(g)?;
            let keep = tape.hadamard(f, c)?;
            let write = tape.hadamard(i, g)?;
            c = tape.add(keep, write)?;
            let tc = tape.tanh(c)?;
            h = tape.hadamard(o, tc)?;
        }
        Ok(h)
    }
}

impl Parameterized for LstmEncoder {
    fn parameters(&self) -> Vec<&Parameter> {
        [&self.input_gate, &self.forget_gate, &self.output_gate, &self.candidate]
            .into_iter()
            .flat_map(|g| g.parameters())
            .collect()
    }
    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        [
            &mut self.input_gate,
            &mut self.forget_gate,
            &mut self.output_gate,
            &mut self.candidate,
        ]
        .into_iter()
        .flat_map(|g| g.parameters_mut())
        .collect()
    }
}

/// Mean over steps followed by an affine projection. Order of steps is irrelevant.
#[derive(Clone, Debug, PartialEq)]
pub struct MeanPoolEncoder {
    pub projection: Linear,
}

impl MeanPoolEncoder {
    pub fn new(input: usize, output: usize, prefix: &str, rng: &mut impl Rng) -> Result<Self> {
        Ok(MeanPoolEncoder {
            projection: Linear::new(input, output, &format!("{prefix}proj."), rng)?,
        })
    }

    fn pool(steps: &[Vec<f64>]) -> Result<Vec<f64>> {
        let first = steps.first().ok_or_else(|| Error::invalid("mean-pool input sequence is empty"))?;
        let mut acc = vec![0.0; first.len()];
        for s in steps {
            if s.len() != acc.len() {
                return Err(Error::shape("sequence steps have different widths"));
            }
            acc.iter_mut().zip(s).for_each(|(a, x)| *a += x);
        }
        let n = steps.len() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        Ok(acc)
    }

    pub fn forward(&self, steps: &[Vec<f64>]) -> Result<Vec<f64>> {
        self.projection.forward(&Self::pool(steps)?)
    }

    pub fn forward_tape(&self, tape: &mut Tape, steps: &[Vec<f64>]) -> Result<Var> {
        let x = tape.constant(DenseTensor::vector(Self::pool(steps)?)?);
        self.projection.forward_tape(tape, x)
    }
}

impl Parameterized for MeanPoolEncoder {
    fn parameters(&self) -> Vec<&Parameter> {
        self.projection.parameters()
    }
    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        self.projection.parameters_mut()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    Mlp,
    Lstm,
    Meanpool,
}

impl EncoderKind {
    pub const ALL: [EncoderKind; 3] = [EncoderKind::Mlp, EncoderKind::Lstm, EncoderKind::Meanpool];
}

impl fmt::Display for EncoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EncoderKind::Mlp => "mlp",
            EncoderKind::Lstm => "lstm",
            EncoderKind::Meanpool => "meanpool",
        })
    }
}

impl FromStr for EncoderKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mlp" => Ok(EncoderKind::Mlp),
            "lstm" => Ok(EncoderKind::Lstm),
            "meanpool" => Ok(EncoderKind::Meanpool),
            other => Err(Error::Config(format!("unknown encoder kind {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum Encoder {
    Mlp(MlpEncoder),
    Lstm(LstmEncoder),
    MeanPool(MeanPoolEncoder),
}

impl Encoder {
    pub fn kind(&self) -> EncoderKind {
        match self {
            Encoder::Mlp(_) => EncoderKind::Mlp,
            Encoder::Lstm(_) => EncoderKind::Lstm,
            Encoder::MeanPool(_) => EncoderKind::Meanpool,
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            Encoder::Mlp(e) => e.layer2.output_dim(),
            Encoder::Lstm(e) => e.hidden_dim(),
            Encoder::MeanPool(e) => e.projection.output_dim(),
        }
    }

    fn mismatch(&self, features: &Features) -> Error {
        Error::data(format!("{} encoder cannot read {} features", self.kind(), features.kind()))
    }

    pub fn forward(&self, features: &Features) -> Result<Vec<f64>> {
        match (self, features) {
            (Encoder::Mlp(e), Features::Vector(x)) => e.forward(x),
            (Encoder::Lstm(e), Features::Sequence(s)) => e.forward(s),
            (Encoder::MeanPool(e), Features::Sequence(s)) => e.forward(s),
            (Encoder::MeanPool(e), Features::Vector(x)) => e.projection.forward(x),
            _ => Err(self.mismatch(features)),
        }
    }

    pub fn forward_tape(&self, tape: &mut Tape, features: &Features) -> Result<Var> {
        match (self, features) {
            (Encoder::Mlp(e), Features::Vector(x)) => {
                let x = tape.constant(DenseTensor::vector(x.clone())?);
                e.forward_tape(tape, x)
            }
            (Encoder::Lstm(e), Features::Sequence(s)) => e.forward_tape(tape, s),
            (Encoder::MeanPool(e), Features::Sequence(s)) => e.forward_tape(tape, s),
            (Encoder::MeanPool(e), Features::Vector(x)) => {
                let x = tape.constant(DenseTensor::vector(x.clone())?);
                e.projection.forward_tape(tape, x)
            }
            _ => Err(self.mismatch(features)),
        }
    }
}

impl Parameterized for Encoder {
    fn parameters(&self) -> Vec<&Parameter> {
        match self {
            Encoder::Mlp(e) => e.parameters(),
            Encoder::Lstm(e) => e.parameters(),
            Encoder::MeanPool(e) => e.parameters(),
        }
    }
    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        match self {
            Encoder::Mlp(e) => e.parameters_mut(),
            Encoder::Lstm(e) => e.parameters_mut(),
            Encoder::MeanPool(e) => e.parameters_mut(),
        }
    }
}
