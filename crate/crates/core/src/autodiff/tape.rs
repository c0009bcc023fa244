use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use super::{Parameter, Parameterized};
use crate::error::{Error, Result};
use crate::tensor::{self, DenseTensor, Matrix, Shape};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

/// The closed set of differentiable primitives.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    /// `[a, x] -> a·x` (or `aᵀ·x` when `transpose`). `a` may have any order; it is
    /// viewed as a matrix whose column count (row count when transposed) is `len(x)`,
    /// split on a mode boundary.
    MatVec { transpose: bool },
    /// `[t, m] -> t ×_mode m`.
    KModeProduct { mode: usize },
    OuterProduct,
    Tanh,
    Relu,
    Sigmoid,
    Concat,
    PadOne,
    Add,
    Hadamard,
    Flatten,
}

impl OpKind {
    pub fn name(&self) -> &'static str {
        match self {
            OpKind::MatVec { .. } => "matvec",
            OpKind::KModeProduct { .. } => "kmode",
            OpKind::OuterProduct => "outer",
            OpKind::Tanh => "tanh",
            OpKind::Relu => "relu",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Concat => "concat",
            OpKind::PadOne => "pad_one",
            OpKind::Add => "add",
            OpKind::Hadamard => "hadamard",
            OpKind::Flatten => "flatten",
        }
    }

    /// Multilinear contractions, as opposed to elementwise or structural ops.
    pub fn is_contraction(&self) -> bool {
        matches!(
            self,
            OpKind::MatVec { .. } | OpKind::KModeProduct { .. } | OpKind::OuterProduct
        )
    }

    fn arity(&self) -> Option<usize> {
        match self {
            OpKind::MatVec { .. } | OpKind::KModeProduct { .. } | OpKind::Add | OpKind::Hadamard => Some(2),
            OpKind::Tanh | OpKind::Relu | OpKind::Sigmoid | OpKind::PadOne | OpKind::Flatten => Some(1),
            OpKind::OuterProduct | OpKind::Concat => None,
        }
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OpKind::MatVec { transpose: true } => write!(f, "matvec_t"),
            OpKind::KModeProduct { mode } => write!(f, "kmode:{mode}"),
            other => write!(f, "{}", other.name()),
        }
    }
}

impl FromStr for OpKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "matvec" => OpKind::MatVec { transpose: false },
            "matvec_t" => OpKind::MatVec { transpose: true },
            "outer" => OpKind::OuterProduct,
            "tanh" => OpKind::Tanh,
            "relu" => OpKind::Relu,
            "sigmoid" => OpKind::Sigmoid,
            "concat" => OpKind::Concat,
            "pad_one" => OpKind::PadOne,
            "add" => OpKind::Add,
            "hadamard" => OpKind::Hadamard,
            "flatten" => OpKind::Flatten,
            other => {
                let mode = other
                    .strip_prefix("kmode:")
                    .and_then(|m| m.parse().ok())
                    .ok_or_else(|| Error::Unsupported(other.to_string()))?;
                OpKind::KModeProduct { mode }
            }
        })
    }
}

#[derive(Clone, Debug)]
enum Source {
    Constant,
    Param(String),
    Apply { kind: OpKind, inputs: Vec<Var> },
}

#[derive(Clone, Debug)]
struct Node {
    value: DenseTensor,
    source: Source,
}

/// Records primitive applications so their adjoints can be replayed in reverse.
///
/// A tape belongs to one forward pass on one thread. Parameters are copied in by
/// name; a parameter requested twice resolves to the same leaf.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<String, Var>,
    records: usize,
    fault: Option<&'static str>,
}

/// Parameter gradients keyed by parameter name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Gradients(BTreeMap<String, DenseTensor>);

impl Gradients {
    pub fn get(&self, name: &str) -> Option<&DenseTensor> {
        self.0.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &DenseTensor)> {
        self.0.iter()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Adds every gradient into the matching parameter of `target`.
    pub fn accumulate_into<P: Parameterized + ?Sized>(&self, target: &mut P) -> Result<()> {
        for p in target.parameters_mut() {
            if let Some(g) = self.0.get(p.name()) {
                p.accumulate_grad(g)?;
            }
        }
        Ok(())
    }

    fn add(&mut self, name: &str, g: DenseTensor) -> Result<()> {
        match self.0.get_mut(name) {
            Some(acc) => acc.add_assign(&g),
            None => {
                self.0.insert(name.to_string(), g);
                Ok(())
            }
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Debug hook: negates every adjoint flowing through ops named `op_name`
    /// (see [`OpKind::name`]). Used as a negative control for gradient checks.
    pub fn corrupt_adjoint(&mut self, op_name: Option<&str>) -> Result<()> {
        const NAMES: [&str; 11] = [
            "matvec", "kmode", "outer", "tanh", "relu", "sigmoid", "concat", "pad_one", "add", "hadamard",
            "flatten",
        ];
        self.fault = match op_name {
            None => None,
            Some(n) => Some(
                NAMES
                    .iter()
                    .copied()
                    .find(|&k| k == n)
                    .ok_or_else(|| Error::Unsupported(n.to_string()))?,
            ),
        };
        Ok(())
    }

    /// Number of recorded primitive applications (leaves excluded).
    pub fn len(&self) -> usize {
        self.records
    }

    pub fn is_empty(&self) -> bool {
        self.records == 0
    }

    /// Kinds of the recorded applications, in recording order.
    pub fn recorded_kinds(&self) -> Vec<OpKind> {
        self.nodes
            .iter()
            .filter_map(|n| match &n.source {
                Source::Apply { kind, .. } => Some(*kind),
                _ => None,
            })
            .collect()
    }

    pub fn value(&self, v: Var) -> &DenseTensor {
        &self.nodes[v.0].value
    }

    pub fn constant(&mut self, value: DenseTensor) -> Var {
        self.push(value, Source::Constant)
    }

    pub fn param(&mut self, p: &Parameter) -> Var {
        if let Some(&v) = self.params.get(p.name()) {
            return v;
        }
        let v = self.push(p.value().clone(), Source::Param(p.name().to_string()));
        self.params.insert(p.name().to_string(), v);
        v
    }

    fn push(&mut self, value: DenseTensor, source: Source) -> Var {
        self.nodes.push(Node { value, source });
        Var(self.nodes.len() - 1)
    }

    /// Applies `kind` to `inputs`, appending one entry to the tape.
    pub fn record(&mut self, kind: OpKind, inputs: &[Var]) -> Result<Var> {
        if let Some(n) = kind.arity() {
            if inputs.len() != n {
                return Err(Error::invalid(format!("{kind} takes {n} inputs, got {}", inputs.len())));
            }
        } else if inputs.is_empty() {
            return Err(Error::invalid(format!("{kind} needs at least one input")));
        }
        if let Some(bad) = inputs.iter().find(|v| v.0 >= self.nodes.len()) {
            return Err(Error::invalid(format!("{bad:?} is not on this tape")));
        }
        let values: Vec<&DenseTensor> = inputs.iter().map(|v| &self.nodes[v.0].value).collect();
        let out = forward(kind, &values)?;
        self.records += 1;
        Ok(self.push(
            out,
            Source::Apply {
                kind,
                inputs: inputs.to_vec(),
            },
        ))
    }

    pub fn matvec(&mut self, a: Var, x: Var) -> Result<Var> {
        self.record(OpKind::MatVec { transpose: false }, &[a, x])
    }

    pub fn matvec_t(&mut self, a: Var, x: Var) -> Result<Var> {
        self.record(OpKind::MatVec { transpose: true }, &[a, x])
    }

    pub fn kmode(&mut self, t: Var, m: Var, mode: usize) -> Result<Var> {
        self.record(OpKind::KModeProduct { mode }, &[t, m])
    }

    pub fn outer(&mut self, vs: &[Var]) -> Result<Var> {
        self.record(OpKind::OuterProduct, vs)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.record(OpKind::Tanh, &[x])
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.record(OpKind::Relu, &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.record(OpKind::Sigmoid, &[x])
    }

    pub fn concat(&mut self, vs: &[Var]) -> Result<Var> {
        self.record(OpKind::Concat, vs)
    }

    pub fn pad_one(&mut self, x: Var) -> Result<Var> {
        self.record(OpKind::PadOne, &[x])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(OpKind::Add, &[a, b])
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(OpKind::Hadamard, &[a, b])
    }

    pub fn flatten(&mut self, x: Var) -> Result<Var> {
        self.record(OpKind::Flatten, &[x])
    }

    /// Recomputes every recorded application from its inputs, in order.
    pub fn replay(&self) -> Result<Vec<DenseTensor>> {
        let mut values: Vec<DenseTensor> = Vec::with_capacity(self.nodes.len());
        let mut outputs = Vec::with_capacity(self.records);
        for node in &self.nodes {
            let v = match &node.source {
                Source::Apply { kind, inputs } => {
                    let ins: Vec<&DenseTensor> = inputs.iter().map(|v| &values[v.0]).collect();
                    let out = forward(*kind, &ins)?;
                    outputs.push(out.clone());
                    out
                }
                _ => node.value.clone(),
            };
            values.push(v);
        }
        Ok(outputs)
    }

    /// Propagates `seed` (the adjoint of `output`) back to every parameter leaf.
    ///
    /// The returned gradients equal `∂(seed · output)/∂param`. Records are visited
    /// in exact reverse recording order.
    pub fn backward(&self, output: Var, seed: &DenseTensor) -> Result<Gradients> {
        let out_node = self
            .nodes
            .get(output.0)
            .ok_or_else(|| Error::invalid(format!("{output:?} is not on this tape")))?;
        if out_node.value.shape() != seed.shape() {
            return Err(Error::shape(format!(
                "seed {} does not match output {}",
                seed.shape(),
                out_node.value.shape()
            )));
        }
        let mut adjoints: Vec<Option<DenseTensor>> = vec![None; output.0 + 1];
        adjoints[output.0] = Some(seed.clone());
        let mut grads = Gradients::default();
        for i in (0..=output.0).rev() {
            let Some(g) = adjoints[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.source {
                Source::Constant => {}
                Source::Param(name) => grads.add(name, g)?,
                Source::Apply { kind, inputs } => {
                    let ins: Vec<&DenseTensor> = inputs.iter().map(|v| &self.nodes[v.0].value).collect();
                    let mut parts = adjoint(*kind, &ins, &node.value, &g)?;
                    if self.fault == Some(kind.name()) {
                        for p in &mut parts {
                            p.scale(-1.0);
                        }
                    }
                    for (v, part) in inputs.iter().zip(parts) {
                        match &mut adjoints[v.0] {
                            Some(acc) => acc.add_assign(&part)?,
                            slot @ None => *slot = Some(part),
                        }
                    }
                }
            }
        }
        Ok(grads)
    }

    /// [`Tape::backward`] followed by accumulation into `target`'s parameter gradients.
    pub fn backward_into<P: Parameterized + ?Sized>(&self, output: Var, seed: &DenseTensor, target: &mut P) -> Result<()> {
        self.backward(output, seed)?.accumulate_into(target)
    }
}

fn expect_vector(t: &DenseTensor, what: &str) -> Result<()> {
    if t.order() != 1 {
        return Err(Error::shape(format!("{what} must be a vector, got {}", t.shape())));
    }
    Ok(())
}

/// Splits `a` into a (rows, cols) matrix view where `len` is either the column count
/// (`transpose == false`) or the row count, requiring the split to fall between modes.
fn matrix_view(a: &DenseTensor, len: usize, transpose: bool) -> Result<(usize, usize)> {
    let dims = a.dims();
    let mut acc = 1usize;
    let aligned = if transpose {
        dims.iter().any(|&d| {
            acc *= d;
            acc == len
        })
    } else {
        dims.iter().rev().any(|&d| {
            acc *= d;
            acc == len
        })
    };
    if !aligned || a.order() < 2 {
        return Err(Error::shape(format!(
            "cannot view {} as a matrix against a vector of length {len}{}",
            a.shape(),
            if transpose { " (transposed)" } else { "" }
        )));
    }
    let other = a.len() / len;
    Ok(if transpose { (len, other) } else { (other, len) })
}

fn forward(kind: OpKind, ins: &[&DenseTensor]) -> Result<DenseTensor> {
    match kind {
        OpKind::MatVec { transpose } => {
            let (a, x) = (ins[0], ins[1]);
            expect_vector(x, "matvec operand")?;
            let (rows, cols) = matrix_view(a, x.len(), transpose)?;
            let y = if transpose {
                tensor::tmatvec(a.data(), rows, cols, x.data())?
            } else {
                tensor::matvec(a.data(), rows, cols, x.data())?
            };
            DenseTensor::vector(y)
        }
        OpKind::KModeProduct { mode } => {
            let m = Matrix::from_tensor(ins[1].clone())?;
            tensor::kmode_product(ins[0], &m, mode)
        }
        OpKind::OuterProduct => {
            for t in ins {
                expect_vector(t, "outer product factor")?;
            }
            tensor::outer_product(ins)
        }
        OpKind::Tanh => Ok(ins[0].map(f64::tanh)),
        OpKind::Relu => Ok(ins[0].map(|x| x.max(0.0))),
        OpKind::Sigmoid => Ok(ins[0].map(sigmoid)),
        OpKind::Concat => {
            for t in ins {
                expect_vector(t, "concat operand")?;
            }
            DenseTensor::vector(ins.iter().flat_map(|t| t.data().iter().copied()).collect())
        }
        OpKind::PadOne => {
            expect_vector(ins[0], "pad_one operand")?;
            Ok(tensor::pad_one(ins[0].data()))
        }
        OpKind::Add => ins[0].zip_map(ins[1], |a, b| a + b),
        OpKind::Hadamard => ins[0].zip_map(ins[1], |a, b| a * b),
        OpKind::Flatten => Ok(tensor::flatten(ins[0])),
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn adjoint(kind: OpKind, ins: &[&DenseTensor], out: &DenseTensor, g: &DenseTensor) -> Result<Vec<DenseTensor>> {
    Ok(match kind {
        OpKind::MatVec { transpose } => {
            let (a, x) = (ins[0], ins[1]);
            let (rows, cols) = matrix_view(a, x.len(), transpose)?;
            let (xd, gd) = (x.data(), g.data());
            let mut ga = vec![0.0; a.len()];
            let gx = if transpose {
                // y[j] = Σ_i x[i] a[i, j]
                for i in 0..rows {
                    for j in 0..cols {
                        ga[i * cols + j] = xd[i] * gd[j];
                    }
                }
                tensor::matvec(a.data(), rows, cols, gd)?
            } else {
                // y[i] = Σ_j a[i, j] x[j]
                for i in 0..rows {
                    for j in 0..cols {
                        ga[i * cols + j] = gd[i] * xd[j];
                    }
                }
                tensor::tmatvec(a.data(), rows, cols, gd)?
            };
            vec![DenseTensor::new(a.shape().clone(), ga)?, DenseTensor::vector(gx)?]
        }
        OpKind::KModeProduct { mode } => {
            let (t, m) = (ins[0], Matrix::from_tensor(ins[1].clone())?);
            let gt = tensor::kmode_product(g, &m.transpose(), mode)?;
            let gm = tensor::unfold(g, mode)?.matmul(&tensor::unfold(t, mode)?.transpose())?;
            vec![gt, gm.into_tensor()]
        }
        OpKind::OuterProduct => outer_adjoint(ins, g)?,
        OpKind::Tanh => vec![g.zip_map(out, |g, y| g * (1.0 - y * y))?],
        OpKind::Sigmoid => vec![g.zip_map(out, |g, y| g * y * (1.0 - y))?],
        OpKind::Relu => vec![g.zip_map(ins[0], |g, x| if x > 0.0 { g } else { 0.0 })?],
        OpKind::Concat => {
            let mut start = 0;
            let mut parts = Vec::with_capacity(ins.len());
            for t in ins {
                parts.push(DenseTensor::vector(g.data()[start..start + t.len()].to_vec())?);
                start += t.len();
            }
            parts
        }
        OpKind::PadOne => vec![DenseTensor::new(ins[0].shape().clone(), g.data()[1..].to_vec())?],
        OpKind::Add => vec![g.clone(), g.clone()],
        OpKind::Hadamard => vec![g.zip_map(ins[1], |g, b| g * b)?, g.zip_map(ins[0], |g, a| g * a)?],
        OpKind::Flatten => vec![DenseTensor::new(ins[0].shape().clone(), g.data().to_vec())?],
    })
}

/// `∂/∂v_m` of `Σ_I g[I] ∏_n v_n[i_n]`: contract `g` against every other factor.
fn outer_adjoint(ins: &[&DenseTensor], g: &DenseTensor) -> Result<Vec<DenseTensor>> {
    let mut parts = Vec::with_capacity(ins.len());
    for m in 0..ins.len() {
        let mut acc = g.clone();
        // contract trailing modes first so mode indices of earlier factors stay valid
        for n in (0..ins.len()).rev() {
            if n == m {
                continue;
            }
            let row = Matrix::new(1, ins[n].len(), ins[n].data().to_vec())?;
            acc = tensor::kmode_product(&acc, &row, n)?;
        }
        parts.push(DenseTensor::new(Shape::new([ins[m].len()])?, acc.into_data())?);
    }
    Ok(parts)
}
