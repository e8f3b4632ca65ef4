use std::fmt;

use super::counted::uncounted;
use super::real::Real;
use super::rng::Rng;
use crate::error::{Error, Result};

/// Dense row-major tensor of order 1 to 3 (last index fastest).
#[derive(Clone, PartialEq)]
pub struct Tensor<T = f64> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: fmt::Debug> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("data", &self.data)
            .finish()
    }
}

fn check_shape(shape: &[usize]) -> Result<()> {
    if shape.is_empty() || shape.len() > 3 {
        return Err(Error::InvalidShape {
            shape: shape.to_vec(),
            reason: "tensors have 1 to 3 extents".into(),
        });
    }
    Ok(())
}

impl<T: Real> Tensor<T> {
    /// Panics on an invalid shape; use [`Tensor::from_vec`] for fallible construction.
    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, T::zero())
    }

    pub fn filled(shape: &[usize], value: T) -> Self {
        check_shape(shape).expect("valid tensor shape");
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        check_shape(shape)?;
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(Error::InvalidShape {
                shape: shape.to_vec(),
                reason: format!("shape holds {len} values, got {}", data.len()),
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Builds a matrix from row literals. Panics on ragged input.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend(r.iter().map(|&v| T::from_f64(v)));
        }
        Tensor {
            shape: vec![rows.len(), cols],
            data,
        }
    }

    pub fn from_f64_slice(shape: &[usize], values: &[f64]) -> Result<Self> {
        Self::from_vec(shape, values.iter().map(|&v| T::from_f64(v)).collect())
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = T::one();
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.to_f64()).collect()
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Self> {
        Self::from_vec(shape, self.data)
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from_f64(v.to_f64())).collect(),
        }
    }

    /// Row count of a matrix (first extent).
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Column count of a matrix (last extent).
    pub fn cols(&self) -> usize {
        *self.shape.last().unwrap()
    }

    pub fn require_matrix(&self, op: &'static str) -> Result<(usize, usize)> {
        if self.rank() != 2 {
            return Err(Error::InvalidShape {
                shape: self.shape.clone(),
                reason: format!("{op} expects a matrix"),
            });
        }
        Ok((self.shape[0], self.shape[1]))
    }

    #[inline]
    pub fn get2(&self, i: usize, j: usize) -> T {
        self.data[i * self.shape[1] + j]
    }

    #[inline]
    pub fn set2(&mut self, i: usize, j: usize, v: T) {
        let c = self.shape[1];
        self.data[i * c + j] = v;
    }

    #[inline]
    pub fn get3(&self, i: usize, j: usize, k: usize) -> T {
        self.data[(i * self.shape[1] + j) * self.shape[2] + k]
    }

    #[inline]
    pub fn set3(&mut self, i: usize, j: usize, k: usize, v: T) {
        let idx = (i * self.shape[1] + j) * self.shape[2] + k;
        self.data[idx] = v;
    }

    /// Row `i` of a matrix, or the flattened slice `i` of an order-3 tensor.
    pub fn row(&self, i: usize) -> &[T] {
        let stride = self.data.len() / self.shape[0];
        &self.data[i * stride..(i + 1) * stride]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        let stride = self.data.len() / self.shape[0];
        &mut self.data[i * stride..(i + 1) * stride]
    }

    pub fn transpose(&self) -> Result<Self> {
        let (r, c) = self.require_matrix("transpose")?;
        let mut out = Vec::with_capacity(self.data.len());
        for j in 0..c {
            for i in 0..r {
                out.push(self.data[i * c + j]);
            }
        }
        Ok(Tensor {
            shape: vec![c, r],
            data: out,
        })
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::shape(op, &self.shape, &other.shape));
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "sub", |a, b| a - b)
    }

    /// Elementwise product.
    pub fn hadamard(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "hadamard", |a, b| a * b)
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape("add_assign", &self.shape, &other.shape));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|v| v * s)
    }

    pub fn scale_in_place(&mut self, s: T) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    pub fn sum(&self) -> T {
        let mut acc = T::zero();
        for &v in &self.data {
            acc += v;
        }
        acc
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.shape, other.shape, "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.to_f64() - b.to_f64()).abs())
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.data
            .iter()
            .map(|v| v.to_f64().abs())
            .fold(0.0, f64::max)
    }

    pub fn sum_sq(&self) -> f64 {
        self.data.iter().map(|v| v.to_f64().powi(2)).sum()
    }

    /// Column slice `[start, start + width)` of a matrix.
    pub fn col_block(&self, start: usize, width: usize) -> Self {
        let (r, c) = (self.shape[0], self.shape[1]);
        assert!(start + width <= c, "column block out of range");
        let mut data = Vec::with_capacity(r * width);
        for i in 0..r {
            data.extend_from_slice(&self.data[i * c + start..i * c + start + width]);
        }
        Tensor {
            shape: vec![r, width],
            data,
        }
    }

    /// Sums the rows of a matrix into a vector.
    pub fn col_sums(&self) -> Self {
        let (r, c) = (self.shape[0], self.shape[1]);
        let mut out = vec![T::zero(); c];
        for i in 0..r {
            for (o, &v) in out.iter_mut().zip(&self.data[i * c..(i + 1) * c]) {
                *o += v;
            }
        }
        Tensor {
            shape: vec![c],
            data: out,
        }
    }
}

/// Concatenates matrices with equal row counts along columns.
pub fn concat_cols<T: Real>(blocks: &[Tensor<T>]) -> Result<Tensor<T>> {
    let rows = blocks.first().map_or(0, |b| b.rows());
    let mut width = 0;
    for b in blocks {
        let (r, c) = b.require_matrix("concat_cols")?;
        if r != rows {
            return Err(Error::shape("concat_cols", &blocks[0].shape, &b.shape));
        }
        width += c;
    }
    let mut data = Vec::with_capacity(rows * width);
    for i in 0..rows {
        for b in blocks {
            data.extend_from_slice(b.row(i));
        }
    }
    Tensor::from_vec(&[rows, width], data)
}

/// `C = A·B` for `A: m×k`, `B: k×n`.
///
/// Each output entry is a length-`k` dot product accumulated from its first
/// term, so the kernel performs exactly `m·n·k` multiplies and `m·n·(k−1)` adds.
pub fn matmul<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, k) = a.require_matrix("matmul")?;
    let (k2, n) = b.require_matrix("matmul")?;
    if k != k2 {
        return Err(Error::shape("matmul", a.shape(), b.shape()));
    }
    let mut c = vec![T::zero(); m * n];
    if k > 0 {
        let ad = a.data();
        let bd = b.data();
        for i in 0..m {
            let c_row = &mut c[i * n..(i + 1) * n];
            let a_row = &ad[i * k..(i + 1) * k];
            let a0 = a_row[0];
            for (cv, &bv) in c_row.iter_mut().zip(&bd[..n]) {
                *cv = a0 * bv;
            }
            for r in 1..k {
                let ar = a_row[r];
                for (cv, &bv) in c_row.iter_mut().zip(&bd[r * n..(r + 1) * n]) {
                    *cv += ar * bv;
                }
            }
        }
    }
    Tensor::from_vec(&[m, n], c)
}

/// `Aᵀ·B` for `A: k×m`, `B: k×n`.
pub fn matmul_tn<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (ka, _) = a.require_matrix("matmul_tn")?;
    let (kb, _) = b.require_matrix("matmul_tn")?;
    if ka != kb {
        return Err(Error::shape("matmul_tn", a.shape(), b.shape()));
    }
    matmul(&a.transpose()?, b)
}

/// `A·Bᵀ` for `A: m×k`, `B: n×k`.
pub fn matmul_nt<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, ka) = a.require_matrix("matmul_nt")?;
    let (_, kb) = b.require_matrix("matmul_nt")?;
    if ka != kb {
        return Err(Error::shape("matmul_nt", a.shape(), b.shape()));
    }
    matmul(a, &b.transpose()?)
}

/// Normalization axis of a matrix softmax.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SoftmaxAxis {
    /// Each row `M[j, :]` is normalized over the column index `k`.
    RowsOverK,
    /// Each column `M[:, k]` is normalized over the row index `j`.
    ColsOverJ,
}

fn softmax_strided<T: Real>(data: &mut [T], start: usize, len: usize, stride: usize) {
    let mut max = data[start];
    for t in 1..len {
        max = max.max(data[start + t * stride]);
    }
    let mut sum = T::zero();
    for t in 0..len {
        let idx = start + t * stride;
        let e = (data[idx] - max).exp();
        data[idx] = e;
        sum += e;
    }
    for t in 0..len {
        data[start + t * stride] /= sum;
    }
}

/// Max-shifted softmax of a matrix along `axis`. Not counted as arithmetic.
pub fn softmax_axis<T: Real>(m: &Tensor<T>, axis: SoftmaxAxis) -> Result<Tensor<T>> {
    let (r, c) = m.require_matrix("softmax_axis")?;
    let mut out = m.clone();
    if r == 0 || c == 0 {
        return Ok(out);
    }
    uncounted(|| match axis {
        SoftmaxAxis::RowsOverK => {
            for i in 0..r {
                softmax_strided(&mut out.data, i * c, c, 1);
            }
        }
        SoftmaxAxis::ColsOverJ => {
            for j in 0..c {
                softmax_strided(&mut out.data, j, r, c);
            }
        }
    });
    Ok(out)
}

/// In-place softmax of a single slice.
pub fn softmax_in_place<T: Real>(v: &mut [T]) {
    if !v.is_empty() {
        uncounted(|| softmax_strided(v, 0, v.len(), 1));
    }
}

/// Running outer-product sums: `out[t] = Σ_{n ≤ t} q_n k_nᵀ`, shape `N×d×d`.
///
/// One pass over the sequence; slice `t` is slice `t−1` plus one outer product.
pub fn cum_outer<T: Real>(q: &Tensor<T>, k: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, d) = q.require_matrix("cum_outer")?;
    if q.shape() != k.shape() {
        return Err(Error::shape("cum_outer", q.shape(), k.shape()));
    }
    let dd = d * d;
    let mut out = vec![T::zero(); n * dd];
    for t in 0..n {
        let (prev, cur) = out.split_at_mut(t * dd);
        let slice = &mut cur[..dd];
        let qt = q.row(t);
        let kt = k.row(t);
        if t == 0 {
            for i in 0..d {
                for j in 0..d {
                    slice[i * d + j] = qt[i] * kt[j];
                }
            }
        } else {
            let last = &prev[(t - 1) * dd..];
            for i in 0..d {
                for j in 0..d {
                    slice[i * d + j] = last[i * d + j] + qt[i] * kt[j];
                }
            }
        }
    }
    Tensor::from_vec(&[n, d, d], out)
}

/// Random initialization schemes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Uniform on `±sqrt(6 / (fan_in + fan_out))`, fans taken from the last two extents.
    XavierUniform,
    /// Zero-mean normal with the given standard deviation.
    Normal(f64),
}

pub fn xavier_bound(shape: &[usize]) -> f64 {
    let (fan_in, fan_out) = match shape {
        [n] => (*n, *n),
        [.., a, b] => (*a, *b),
        [] => (1, 1),
    };
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

pub fn rand_init<T: Real>(shape: &[usize], init: Init, rng: &mut Rng) -> Tensor<T> {
    let mut t = Tensor::zeros(shape);
    match init {
        Init::XavierUniform => {
            let bound = xavier_bound(shape);
            for v in t.data_mut() {
                *v = T::from_f64(rng.uniform_range(-bound, bound));
            }
        }
        Init::Normal(sigma) => {
            for v in t.data_mut() {
                *v = T::from_f64(sigma * rng.normal());
            }
        }
    }
    t
}

/// Uniform entries on `[lo, hi)`; convenient for test fixtures.
pub fn rand_uniform<T: Real>(shape: &[usize], lo: f64, hi: f64, rng: &mut Rng) -> Tensor<T> {
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        *v = T::from_f64(rng.uniform_range(lo, hi));
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> Tensor<f64> {
        Tensor::from_rows(rows)
    }

    #[test]
    fn matmul_identity_zero_and_hand_case() {
        let a = m(&[&[1.0, 2.0], &[3.0, 4.0]]);
        assert_eq!(matmul(&Tensor::identity(2), &a).unwrap(), a);
        let z = Tensor::zeros(&[2, 2]);
        assert_eq!(matmul(&a, &z).unwrap(), z);
        let b = m(&[&[5.0, 6.0], &[7.0, 8.0]]);
        assert_eq!(
            matmul(&a, &b).unwrap(),
            m(&[&[19.0, 22.0], &[43.0, 50.0]])
        );
    }

    #[test]
    fn matmul_rejects_inner_mismatch() {
        let a = Tensor::<f64>::zeros(&[2, 3]);
        let b = Tensor::<f64>::zeros(&[2, 3]);
        let err = matmul(&a, &b).unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch { .. }), "{err}");
    }

    #[test]
    fn transposed_products_agree_with_explicit_transpose() {
        let mut rng = Rng::new(5);
        let a: Tensor = rand_uniform(&[4, 3], -1.0, 1.0, &mut rng);
        let b: Tensor = rand_uniform(&[4, 5], -1.0, 1.0, &mut rng);
        let tn = matmul_tn(&a, &b).unwrap();
        assert_eq!(tn, matmul(&a.transpose().unwrap(), &b).unwrap());
        let c: Tensor = rand_uniform(&[5, 3], -1.0, 1.0, &mut rng);
        let nt = matmul_nt(&a, &c).unwrap();
        assert_eq!(nt.shape(), &[4, 5]);
        for i in 0..4 {
            for j in 0..5 {
                let want: f64 = (0..3).map(|r| a.get2(i, r) * c.get2(j, r)).sum();
                assert!((nt.get2(i, j) - want).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn softmax_examples() {
        let s = softmax_axis(&m(&[&[0.0, 0.0], &[0.0, 0.0]]), SoftmaxAxis::RowsOverK).unwrap();
        assert_eq!(s, m(&[&[0.5, 0.5], &[0.5, 0.5]]));

        let big = softmax_axis(&m(&[&[1000.0, 1000.0]]), SoftmaxAxis::RowsOverK).unwrap();
        assert_eq!(big, m(&[&[0.5, 0.5]]));

        let s = softmax_axis(&m(&[&[0.0, 3f64.ln()]]), SoftmaxAxis::RowsOverK).unwrap();
        assert!((s.get2(0, 0) - 0.25).abs() < 1e-15);
        assert!((s.get2(0, 1) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn softmax_cols_normalizes_columns() {
        let mut rng = Rng::new(9);
        let x: Tensor = rand_uniform(&[5, 3], -3.0, 3.0, &mut rng);
        let s = softmax_axis(&x, SoftmaxAxis::ColsOverJ).unwrap();
        for k in 0..3 {
            let col: f64 = (0..5).map(|j| s.get2(j, k)).sum();
            assert!((col - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn cum_outer_examples() {
        let q = m(&[&[2.0], &[3.0]]);
        let k = m(&[&[5.0], &[7.0]]);
        let out = cum_outer(&q, &k).unwrap();
        assert_eq!(out.shape(), &[2, 1, 1]);
        assert_eq!(out.data(), &[10.0, 31.0]);

        let q1 = m(&[&[1.0, 2.0]]);
        let k1 = m(&[&[3.0, 4.0]]);
        let single = cum_outer(&q1, &k1).unwrap();
        assert_eq!(single.data(), &[3.0, 4.0, 6.0, 8.0]);

        let zeros = cum_outer(&q, &Tensor::zeros(&[2, 1])).unwrap();
        assert!(zeros.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn cum_outer_rejects_mismatch() {
        let q = Tensor::<f64>::zeros(&[2, 2]);
        let k = Tensor::<f64>::zeros(&[3, 2]);
        assert!(cum_outer(&q, &k).is_err());
    }

    #[test]
    fn rand_init_examples() {
        let a: Tensor = rand_init(&[4, 4], Init::XavierUniform, &mut Rng::new(1));
        let b: Tensor = rand_init(&[4, 4], Init::XavierUniform, &mut Rng::new(1));
        assert_eq!(a.data(), b.data());
        let bound = (6.0f64 / 8.0).sqrt();
        assert!(a.data().iter().all(|v| v.abs() <= bound));

        let z: Tensor = rand_init(&[3, 2], Init::Normal(0.0), &mut Rng::new(2));
        assert!(z.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(Tensor::<f64>::from_vec(&[2, 2], vec![0.0; 3]).is_err());
        assert!(Tensor::<f64>::from_vec(&[1, 1, 1, 1], vec![0.0]).is_err());
    }

    #[test]
    fn concat_and_col_block_invert() {
        let mut rng = Rng::new(4);
        let a: Tensor = rand_uniform(&[3, 2], -1.0, 1.0, &mut rng);
        let b: Tensor = rand_uniform(&[3, 4], -1.0, 1.0, &mut rng);
        let c = concat_cols(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(c.col_block(0, 2), a);
        assert_eq!(c.col_block(2, 4), b);
    }
}
