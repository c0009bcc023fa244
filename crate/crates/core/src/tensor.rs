//! Dense N-way tensors and the multilinear primitives the fusion layers are built from.
//!
//! Storage is row-major: the last mode varies fastest. Mode indices are 0-based
//! everywhere in this crate.

use std::fmt;

use crate::error::{Error, Result};

/// Extent of every mode of a tensor.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Shape(Vec<usize>);

impl Shape {
    /// Builds a shape, rejecting zero extents and element counts that overflow `usize`.
    pub fn new(dims: impl Into<Vec<usize>>) -> Result<Self> {
        let dims = dims.into();
        if dims.is_empty() {
            return Err(Error::invalid("a shape needs at least one mode"));
        }
        if let Some(k) = dims.iter().position(|&d| d == 0) {
            return Err(Error::invalid(format!("mode {k} of shape {dims:?} has zero extent")));
        }
        dims.iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::invalid(format!("element count of shape {dims:?} overflows")))?;
        Ok(Shape(dims))
    }

    pub fn dims(&self) -> &[usize] {
        &self.0
    }

    pub fn order(&self) -> usize {
        self.0.len()
    }

    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }

    /// Row-major strides.
    pub fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1; self.0.len()];
        for k in (0..self.0.len().saturating_sub(1)).rev() {
            strides[k] = strides[k + 1] * self.0[k + 1];
        }
        strides
    }

    /// Product of extents before mode `k` and after mode `k`.
    pub(crate) fn split_at_mode(&self, k: usize) -> (usize, usize) {
        let outer = self.0[..k].iter().product();
        let inner = self.0[k + 1..].iter().product();
        (outer, inner)
    }

    fn with_mode(&self, k: usize, extent: usize) -> Shape {
        let mut dims = self.0.clone();
        dims[k] = extent;
        Shape(dims)
    }
}

impl fmt::Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|d| d.to_string()).collect();
        write!(f, "({})", parts.join("x"))
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Row-major N-way array of `f64`.
#[derive(Clone, PartialEq)]
pub struct DenseTensor {
    shape: Shape,
    data: Vec<f64>,
}

impl fmt::Debug for DenseTensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DenseTensor")
            .field("shape", &self.shape)
            .field("data", &self.data)
            .finish()
    }
}

impl DenseTensor {
    pub fn new(shape: Shape, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.numel() {
            return Err(Error::shape(format!(
                "shape {shape} holds {} elements but {} values were given",
                shape.numel(),
                data.len()
            )));
        }
        Ok(DenseTensor { shape, data })
    }

    pub fn from_dims(dims: &[usize], data: Vec<f64>) -> Result<Self> {
        Self::new(Shape::new(dims)?, data)
    }

    pub fn zeros(shape: Shape) -> Self {
        let n = shape.numel();
        DenseTensor {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn filled(shape: Shape, value: f64) -> Self {
        let n = shape.numel();
        DenseTensor {
            shape,
            data: vec![value; n],
        }
    }

    /// 1-mode tensor. Fails on an empty vector since extents must be positive.
    pub fn vector(data: Vec<f64>) -> Result<Self> {
        let shape = Shape::new([data.len()])?;
        Ok(DenseTensor { shape, data })
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn dims(&self) -> &[usize] {
        self.shape.dims()
    }

    pub fn order(&self) -> usize {
        self.shape.order()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn offset(&self, index: &[usize]) -> Result<usize> {
        let dims = self.dims();
        if index.len() != dims.len() {
            return Err(Error::invalid(format!(
                "index {index:?} has {} modes, tensor has {}",
                index.len(),
                dims.len()
            )));
        }
        let mut off = 0;
        for (k, (&i, &d)) in index.iter().zip(dims).enumerate() {
            if i >= d {
                return Err(Error::invalid(format!("index {i} out of range for mode {k} of extent {d}")));
            }
            off = off * d + i;
        }
        Ok(off)
    }

    pub fn get(&self, index: &[usize]) -> Result<f64> {
        Ok(self.data[self.offset(index)?])
    }

    pub fn set(&mut self, index: &[usize], value: f64) -> Result<()> {
        let off = self.offset(index)?;
        self.data[off] = value;
        Ok(())
    }

    /// Same data under a new shape with the same element count.
    pub fn reshape(&self, dims: &[usize]) -> Result<DenseTensor> {
        let shape = Shape::new(dims)?;
        if shape.numel() != self.len() {
            return Err(Error::shape(format!("cannot reshape {} into {shape}", self.shape)));
        }
        Ok(DenseTensor {
            shape,
            data: self.data.clone(),
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> DenseTensor {
        DenseTensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn zip_map(&self, other: &DenseTensor, f: impl Fn(f64, f64) -> f64) -> Result<DenseTensor> {
        self.expect_same_shape(other)?;
        Ok(DenseTensor {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn add_assign(&mut self, other: &DenseTensor) -> Result<()> {
        self.expect_same_shape(other)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        for a in &mut self.data {
            *a *= factor;
        }
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|a| *a = value);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn max_abs_diff(&self, other: &DenseTensor) -> Result<f64> {
        self.expect_same_shape(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    pub(crate) fn expect_same_shape(&self, other: &DenseTensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(format!("{} vs {}", self.shape, other.shape)));
        }
        Ok(())
    }

    /// Reorders modes: output mode `j` is input mode `axes[j]`.
    pub fn permute(&self, axes: &[usize]) -> Result<DenseTensor> {
        let order = self.order();
        let mut seen = vec![false; order];
        if axes.len() != order {
            return Err(Error::invalid(format!("permutation {axes:?} for order-{order} tensor")));
        }
        for &a in axes {
            if a >= order || seen[a] {
                return Err(Error::invalid(format!("{axes:?} is not a permutation of 0..{order}")));
            }
            seen[a] = true;
        }
        let in_strides = self.shape.strides();
        let out_dims: Vec<usize> = axes.iter().map(|&a| self.dims()[a]).collect();
        let strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
        let mut data = Vec::with_capacity(self.len());
        let mut index = vec![0usize; order];
        for _ in 0..self.len() {
            let off: usize = index.iter().zip(&strides).map(|(i, s)| i * s).sum();
            data.push(self.data[off]);
            for k in (0..order).rev() {
                index[k] += 1;
                if index[k] < out_dims[k] {
                    break;
                }
                index[k] = 0;
            }
        }
        DenseTensor::from_dims(&out_dims, data)
    }
}

impl AsRef<[f64]> for DenseTensor {
    fn as_ref(&self) -> &[f64] {
        &self.data
    }
}

/// An order-2 tensor.
#[derive(Clone, PartialEq)]
pub struct Matrix(DenseTensor);

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Matrix{:?}{:?}", self.0.shape, self.0.data)
    }
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Ok(Matrix(DenseTensor::from_dims(&[rows, cols], data)?))
    }

    pub fn zeros(rows: usize, cols: usize) -> Result<Self> {
        Ok(Matrix(DenseTensor::zeros(Shape::new([rows, cols])?)))
    }

    pub fn identity(n: usize) -> Result<Self> {
        let mut m = Self::zeros(n, n)?;
        for i in 0..n {
            m.0.data[i * n + i] = 1.0;
        }
        Ok(m)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::shape("ragged rows"));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn from_tensor(t: DenseTensor) -> Result<Self> {
        if t.order() != 2 {
            return Err(Error::shape(format!("expected a matrix, got shape {}", t.shape())));
        }
        Ok(Matrix(t))
    }

    pub fn rows(&self) -> usize {
        self.0.dims()[0]
    }

    pub fn cols(&self) -> usize {
        self.0.dims()[1]
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.0.data[i * self.cols() + j]
    }

    pub fn data(&self) -> &[f64] {
        &self.0.data
    }

    pub fn as_tensor(&self) -> &DenseTensor {
        &self.0
    }

    pub fn into_tensor(self) -> DenseTensor {
        self.0
    }

    pub fn transpose(&self) -> Matrix {
        let (r, c) = (self.rows(), self.cols());
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = self.0.data[i * c + j];
            }
        }
        Matrix(DenseTensor {
            shape: Shape(vec![c, r]),
            data,
        })
    }

    /// `self · x`.
    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        matvec(self.data(), self.rows(), self.cols(), x)
    }

    /// `selfᵀ · x`.
    pub fn tmatvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        tmatvec(self.data(), self.rows(), self.cols(), x)
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols() != other.rows() {
            return Err(Error::shape(format!(
                "matmul {} by {}",
                self.0.shape, other.0.shape
            )));
        }
        let (n, k, m) = (self.rows(), self.cols(), other.cols());
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            for p in 0..k {
                let a = self.0.data[i * k + p];
                let row = &other.0.data[p * m..(p + 1) * m];
                for (o, b) in out[i * m..(i + 1) * m].iter_mut().zip(row) {
                    *o += a * b;
                }
            }
        }
        Matrix::new(n, m, out)
    }
}

/// `A · x` for a row-major `rows × cols` slice.
pub(crate) fn matvec(a: &[f64], rows: usize, cols: usize, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != cols || a.len() != rows * cols {
        return Err(Error::shape(format!(
            "({rows}x{cols}) matrix times vector of length {}",
            x.len()
        )));
    }
    Ok(a.chunks_exact(cols)
        .map(|row| row.iter().zip(x).map(|(w, v)| w * v).sum())
        .collect())
}

/// `Aᵀ · x` for a row-major `rows × cols` slice.
pub(crate) fn tmatvec(a: &[f64], rows: usize, cols: usize, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != rows || a.len() != rows * cols {
        return Err(Error::shape(format!(
            "transposed ({rows}x{cols}) matrix times vector of length {}",
            x.len()
        )));
    }
    let mut out = vec![0.0; cols];
    for (row, &xi) in a.chunks_exact(cols).zip(x) {
        for (o, w) in out.iter_mut().zip(row) {
            *o += w * xi;
        }
    }
    Ok(out)
}

/// `v_1 ⊗ v_2 ⊗ … ⊗ v_M`, an M-way tensor with entry `∏_m v_m[i_m]`.
pub fn outer_product<V: AsRef<[f64]>>(vectors: &[V]) -> Result<DenseTensor> {
    if vectors.is_empty() {
        return Err(Error::invalid("outer product of an empty list"));
    }
    if let Some(m) = vectors.iter().position(|v| v.as_ref().is_empty()) {
        return Err(Error::invalid(format!("outer product factor {m} is empty")));
    }
    let dims: Vec<usize> = vectors.iter().map(|v| v.as_ref().len()).collect();
    let shape = Shape::new(dims)?;
    let mut data = vec![1.0];
    for v in vectors {
        let v = v.as_ref();
        let mut next = Vec::with_capacity(data.len() * v.len());
        for &a in &data {
            next.extend(v.iter().map(|&b| a * b));
        }
        data = next;
    }
    DenseTensor::new(shape, data)
}

/// Mode-`k` product: contracts mode `k` of `t` against the columns of `m`.
///
/// `out[.., a, ..] = Σ_b m[a, b] · t[.., b, ..]`, so `m.cols()` must equal `t.dims()[k]`
/// and the result has `m.rows()` in mode `k`.
pub fn kmode_product(t: &DenseTensor, m: &Matrix, k: usize) -> Result<DenseTensor> {
    if k >= t.order() {
        return Err(Error::invalid(format!("mode {k} out of range for order-{} tensor", t.order())));
    }
    let extent = t.dims()[k];
    if m.cols() != extent {
        return Err(Error::shape(format!(
            "mode-{k} product of tensor {} with matrix {}: matrix columns must equal {extent}",
            t.shape(),
            m.as_tensor().shape()
        )));
    }
    let (outer, inner) = t.shape().split_at_mode(k);
    let rows = m.rows();
    let mut data = vec![0.0; outer * rows * inner];
    for o in 0..outer {
        let src = &t.data()[o * extent * inner..(o + 1) * extent * inner];
        let dst = &mut data[o * rows * inner..(o + 1) * rows * inner];
        for a in 0..rows {
            let out_row = &mut dst[a * inner..(a + 1) * inner];
            for b in 0..extent {
                let w = m.at(a, b);
                if w == 0.0 {
                    continue;
                }
                for (y, x) in out_row.iter_mut().zip(&src[b * inner..(b + 1) * inner]) {
                    *y += w * x;
                }
            }
        }
    }
    DenseTensor::new(t.shape().with_mode(k, rows), data)
}

/// Mode-`k` matricization: rows index mode `k`, columns enumerate the remaining
/// modes in row-major order.
pub fn unfold(t: &DenseTensor, k: usize) -> Result<Matrix> {
    if k >= t.order() {
        return Err(Error::invalid(format!("mode {k} out of range for order-{} tensor", t.order())));
    }
    let extent = t.dims()[k];
    let (outer, inner) = t.shape().split_at_mode(k);
    let cols = outer * inner;
    let mut data = vec![0.0; extent * cols];
    for o in 0..outer {
        for b in 0..extent {
            let src = &t.data()[(o * extent + b) * inner..(o * extent + b + 1) * inner];
            data[b * cols + o * inner..b * cols + (o + 1) * inner].copy_from_slice(src);
        }
    }
    Matrix::new(extent, cols, data)
}

/// Inverse of [`unfold`] for the same `k` and target shape.
pub fn fold(m: &Matrix, k: usize, target: &Shape) -> Result<DenseTensor> {
    if k >= target.order() {
        return Err(Error::invalid(format!("mode {k} out of range for shape {target}")));
    }
    let extent = target.dims()[k];
    let (outer, inner) = target.split_at_mode(k);
    if m.rows() != extent || m.cols() != outer * inner {
        return Err(Error::shape(format!(
            "cannot fold {}x{} matrix at mode {k} into {target}",
            m.rows(),
            m.cols()
        )));
    }
    let cols = m.cols();
    let mut data = vec![0.0; target.numel()];
    for o in 0..outer {
        for b in 0..extent {
            data[(o * extent + b) * inner..(o * extent + b + 1) * inner]
                .copy_from_slice(&m.data()[b * cols + o * inner..b * cols + (o + 1) * inner]);
        }
    }
    DenseTensor::new(target.clone(), data)
}

/// Row-major linearization into a 1-mode tensor.
pub fn flatten(t: &DenseTensor) -> DenseTensor {
    DenseTensor {
        shape: Shape(vec![t.len()]),
        data: t.data.clone(),
    }
}

/// Prepends the constant 1 to `v`, giving the bias slot of outer-product fusion.
pub fn pad_one(v: &[f64]) -> DenseTensor {
    let mut data = Vec::with_capacity(v.len() + 1);
    data.push(1.0);
    data.extend_from_slice(v);
    DenseTensor {
        shape: Shape(vec![data.len()]),
        data,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(dims: &[usize], rng: &mut impl Rng) -> DenseTensor {
        let n = dims.iter().product();
        DenseTensor::from_dims(dims, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn random_matrix(r: usize, c: usize, rng: &mut impl Rng) -> Matrix {
        Matrix::from_tensor(random_tensor(&[r, c], rng)).unwrap()
    }

    #[test]
    fn shape_rejects_zero_extent_and_overflow() {
        assert!(Shape::new([2, 0, 3]).is_err());
        assert!(Shape::new(Vec::<usize>::new()).is_err());
        assert!(Shape::new([usize::MAX, 2]).is_err());
        assert_eq!(Shape::new([2, 3, 4]).unwrap().numel(), 24);
        assert_eq!(Shape::new([2, 3, 4]).unwrap().strides(), vec![12, 4, 1]);
    }

    #[test]
    fn outer_product_ones() {
        let t = outer_product(&[vec![1.0, 1.0], vec![1.0, 1.0, 1.0]]).unwrap();
        assert_eq!(t.dims(), &[2, 3]);
        assert!(t.data().iter().all(|&x| x == 1.0));
    }

    #[test]
    fn outer_product_small() {
        let t = outer_product(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(t.data(), &[3.0, 4.0, 6.0, 8.0]);
    }

    #[test]
    fn outer_product_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v1: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
        let v2: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
        let v3: Vec<f64> = (0..2).map(|_| rng.random_range(-2.0..2.0)).collect();
        let t = outer_product(&[&v1[..], &v2[..], &v3[..]]).unwrap();
        assert_eq!(t.dims(), &[3, 4, 2]);
        for i in 0..3 {
            for j in 0..4 {
                for k in 0..2 {
                    assert_eq!(t.get(&[i, j, k]).unwrap(), v1[i] * v2[j] * v3[k]);
                }
            }
        }
    }

    #[test]
    fn outer_product_errors() {
        let empty: Vec<Vec<f64>> = vec![];
        assert!(matches!(outer_product(&empty), Err(Error::InvalidArgument(_))));
        assert!(matches!(
            outer_product(&[vec![1.0], vec![]]),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn kmode_identity_is_noop() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let t = random_tensor(&[3, 4, 5], &mut rng);
        for k in 0..3 {
            let id = Matrix::identity(t.dims()[k]).unwrap();
            assert_eq!(kmode_product(&t, &id, k).unwrap(), t);
        }
    }

    #[test]
    fn kmode_ones_row_sums_mode() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = random_tensor(&[3, 4, 5], &mut rng);
        let ones = Matrix::new(1, 4, vec![1.0; 4]).unwrap();
        let s = kmode_product(&t, &ones, 1).unwrap();
        assert_eq!(s.dims(), &[3, 1, 5]);
        for i in 0..3 {
            for k in 0..5 {
                let mut expect = 0.0;
                for j in 0..4 {
                    expect += t.get(&[i, j, k]).unwrap();
                }
                assert!((s.get(&[i, 0, k]).unwrap() - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn kmode_shape_rule_and_mismatch() {
        let t = DenseTensor::zeros(Shape::new([5, 4, 3]).unwrap());
        let m = Matrix::zeros(2, 4).unwrap();
        assert_eq!(kmode_product(&t, &m, 1).unwrap().dims(), &[5, 2, 3]);
        let err = kmode_product(&t, &m, 0).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("(5x4x3)") && msg.contains("(2x4)"), "{msg}");
        assert!(kmode_product(&t, &m, 3).is_err());
    }

    #[test]
    fn unfold_matrix_mode0_is_identity() {
        let t = DenseTensor::from_dims(&[2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let m = unfold(&t, 0).unwrap();
        assert_eq!((m.rows(), m.cols()), (2, 3));
        assert_eq!(m.data(), t.data());
    }

    #[test]
    fn unfold_mode1_enumerates_remaining_modes() {
        // t[i][j][k] = 100i + 10j + k
        let mut data = vec![];
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    data.push((100 * i + 10 * j + k) as f64);
                }
            }
        }
        let t = DenseTensor::from_dims(&[2, 2, 2], data).unwrap();
        let m = unfold(&t, 1).unwrap();
        // columns ordered (i, k) with k fastest
        assert_eq!(m.data(), &[0., 1., 100., 101., 10., 11., 110., 111.]);
    }

    #[test]
    fn unfold_fold_roundtrip_every_mode() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let t = random_tensor(&[3, 4, 5], &mut rng);
        for k in 0..3 {
            let back = fold(&unfold(&t, k).unwrap(), k, t.shape()).unwrap();
            assert_eq!(back, t);
        }
        assert!(unfold(&t, 3).is_err());
        let m = unfold(&t, 0).unwrap();
        assert!(fold(&m, 1, t.shape()).is_err());
    }

    #[test]
    fn flatten_cases() {
        let t = DenseTensor::from_dims(&[2, 2], vec![1., 2., 3., 4.]).unwrap();
        assert_eq!(flatten(&t).data(), &[1., 2., 3., 4.]);
        assert_eq!(flatten(&t).dims(), &[4]);
        let v = DenseTensor::vector(vec![1., 2.]).unwrap();
        assert_eq!(flatten(&v), v);
        let o = outer_product(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(flatten(&o).data(), &[3., 4., 6., 8.]);
    }

    #[test]
    fn pad_one_cases() {
        assert_eq!(pad_one(&[]).data(), &[1.0]);
        assert_eq!(pad_one(&[5.0, 6.0]).data(), &[1.0, 5.0, 6.0]);
        let p = pad_one(&[]);
        let t = outer_product(&[p.data(), p.data(), p.data()]).unwrap();
        assert_eq!(t.dims(), &[1, 1, 1]);
        assert_eq!(t.data(), &[1.0]);
    }

    #[test]
    fn padded_outer_product_contains_all_interaction_blocks() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a: Vec<f64> = (0..2).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let c: Vec<f64> = (0..2).map(|_| rng.random_range(-1.0..1.0)).collect();
        let t = outer_product(&[pad_one(&a), pad_one(&b), pad_one(&c)]).unwrap();
        let at = |i, j, k| t.get(&[i, j, k]).unwrap();
        assert_eq!(at(0, 0, 0), 1.0);
        for i in 0..2 {
            assert_eq!(at(i + 1, 0, 0), a[i]);
        }
        for j in 0..3 {
            assert_eq!(at(0, j + 1, 0), b[j]);
        }
        for k in 0..2 {
            assert_eq!(at(0, 0, k + 1), c[k]);
        }
        for i in 0..2 {
            for j in 0..3 {
                assert_eq!(at(i + 1, j + 1, 0), a[i] * b[j]);
                for k in 0..2 {
                    assert_eq!(at(i + 1, 0, k + 1), a[i] * c[k]);
                    assert_eq!(at(0, j + 1, k + 1), b[j] * c[k]);
                    assert_eq!(at(i + 1, j + 1, k + 1), a[i] * b[j] * c[k]);
                }
            }
        }
    }

    #[test]
    fn permute_moves_modes() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let t = random_tensor(&[2, 3, 4], &mut rng);
        let p = t.permute(&[2, 0, 1]).unwrap();
        assert_eq!(p.dims(), &[4, 2, 3]);
        for i in 0..2 {
            for j in 0..3 {
                for k in 0..4 {
                    assert_eq!(p.get(&[k, i, j]).unwrap(), t.get(&[i, j, k]).unwrap());
                }
            }
        }
        assert!(t.permute(&[0, 0, 1]).is_err());
    }

    fn dims_strategy() -> impl Strategy<Value = Vec<usize>> {
        prop::collection::vec(1usize..5, 1..5)
    }

    proptest! {
        #[test]
        fn kmode_shape_rule_holds(dims in dims_strategy(), rows in 1usize..5, seed in 0u64..1000, kraw in 0usize..8) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let k = kraw % dims.len();
            let t = random_tensor(&dims, &mut rng);
            let m = random_matrix(rows, dims[k], &mut rng);
            let out = kmode_product(&t, &m, k).unwrap();
            let mut expect = dims.clone();
            expect[k] = rows;
            prop_assert_eq!(out.dims(), &expect[..]);
        }

        #[test]
        fn kmode_products_commute(dims in prop::collection::vec(1usize..5, 2..5), seed in 0u64..1000, a in 0usize..8, b in 0usize..8) {
            let order = dims.len();
            let j = a % order;
            let k = (j + 1 + b % (order - 1)) % order;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = random_tensor(&dims, &mut rng);
            let mj = random_matrix(3, dims[j], &mut rng);
            let mk = random_matrix(2, dims[k], &mut rng);
            let jk = kmode_product(&kmode_product(&t, &mj, j).unwrap(), &mk, k).unwrap();
            let kj = kmode_product(&kmode_product(&t, &mk, k).unwrap(), &mj, j).unwrap();
            prop_assert!(jk.max_abs_diff(&kj).unwrap() < 1e-12);
        }

        #[test]
        fn fold_inverts_unfold(dims in dims_strategy(), seed in 0u64..1000, kraw in 0usize..8) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let k = kraw % dims.len();
            let t = random_tensor(&dims, &mut rng);
            prop_assert_eq!(fold(&unfold(&t, k).unwrap(), k, t.shape()).unwrap(), t);
        }

        #[test]
        fn kmode_equals_matricized_product(dims in dims_strategy(), rows in 1usize..5, seed in 0u64..1000, kraw in 0usize..8) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let k = kraw % dims.len();
            let t = random_tensor(&dims, &mut rng);
            let m = random_matrix(rows, dims[k], &mut rng);
            let direct = kmode_product(&t, &m, k).unwrap();
            let mut new_dims = dims.clone();
            new_dims[k] = rows;
            let via = fold(&m.matmul(&unfold(&t, k).unwrap()).unwrap(), k, &Shape::new(new_dims).unwrap()).unwrap();
            prop_assert!(direct.max_abs_diff(&via).unwrap() < 1e-12);
        }
    }
}
