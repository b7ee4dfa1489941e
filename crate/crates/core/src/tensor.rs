//! Dense row-major `f64` tensors and the softmax / loss kernels.
//!
//! Every public operation validates shapes and rejects non-finite results, so a
//! NaN never silently propagates through a training run.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Floor added inside every logarithm so zero probabilities stay finite.
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::shape(
                "Tensor::new",
                format!("shape {shape:?} needs {expected} elements, got {}", data.len()),
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; len],
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let len = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; len],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    /// Builds a matrix from equally long rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::shape("Tensor::from_rows", "ragged rows"));
        }
        let data = rows.iter().flatten().copied().collect();
        Self::new(vec![rows.len(), cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Row count of a matrix (first extent).
    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(0)
    }

    /// Product of every extent after the first.
    pub fn cols(&self) -> usize {
        self.shape.iter().skip(1).product()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != self.data.len() {
            return Err(Error::shape(
                "Tensor::reshape",
                format!("{:?} -> {shape:?}", self.shape),
            ));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, factor: f64) -> Self {
        self.map(|v| v * factor)
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn ensure_finite(self, op: &'static str) -> Result<Self> {
        if self.is_finite() {
            Ok(self)
        } else {
            Err(Error::NonFinite(op))
        }
    }

    fn require_matrix(&self, op: &'static str) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            [r, c] => Ok((*r, *c)),
            other => Err(Error::shape(op, format!("expected a matrix, got shape {other:?}"))),
        }
    }

    pub fn transpose(&self) -> Result<Self> {
        let (r, c) = self.require_matrix("transpose")?;
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Self::new(vec![c, r], out)
    }

    /// Selects whole rows (first-axis slices) by index.
    pub fn select_rows(&self, indices: &[usize]) -> Self {
        let c = self.cols();
        let mut data = Vec::with_capacity(indices.len() * c);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        let mut shape = self.shape.clone();
        shape[0] = indices.len();
        Self { shape, data }
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape != b.shape {
        return Err(Error::shape(op, format!("{:?} vs {:?}", a.shape, b.shape)));
    }
    Ok(())
}

/// Matrix product `a · b`; the inner sum always runs left to right over `K`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.require_matrix("matmul")?;
    let (k2, p) = b.require_matrix("matmul")?;
    if k != k2 {
        return Err(Error::shape("matmul", format!("[{m}x{k}] x [{k2}x{p}]")));
    }
    let mut out = vec![0.0; m * p];
    for i in 0..m {
        let a_row = &a.data[i * k..(i + 1) * k];
        for j in 0..p {
            let mut acc = 0.0;
            for (kk, &av) in a_row.iter().enumerate() {
                acc += av * b.data[kk * p + j];
            }
            out[i * p + j] = acc;
        }
    }
    Tensor::new(vec![m, p], out)?.ensure_finite("matmul")
}

/// `a · bᵀ` without materializing the transpose.
pub fn matmul_bt(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.require_matrix("matmul_bt")?;
    let (p, k2) = b.require_matrix("matmul_bt")?;
    if k != k2 {
        return Err(Error::shape("matmul_bt", format!("[{m}x{k}] x [{p}x{k2}]^T")));
    }
    let mut out = vec![0.0; m * p];
    for i in 0..m {
        let a_row = &a.data[i * k..(i + 1) * k];
        for j in 0..p {
            let b_row = &b.data[j * k..(j + 1) * k];
            out[i * p + j] = a_row.iter().zip(b_row).fold(0.0, |acc, (x, y)| acc + x * y);
        }
    }
    Tensor::new(vec![m, p], out)?.ensure_finite("matmul_bt")
}

/// `aᵀ · b` without materializing the transpose; the sum runs over rows in order.
pub fn matmul_at(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (k, m) = a.require_matrix("matmul_at")?;
    let (k2, p) = b.require_matrix("matmul_at")?;
    if k != k2 {
        return Err(Error::shape("matmul_at", format!("[{k}x{m}]^T x [{k2}x{p}]")));
    }
    let mut out = vec![0.0; m * p];
    for kk in 0..k {
        let a_row = &a.data[kk * m..(kk + 1) * m];
        let b_row = &b.data[kk * p..(kk + 1) * p];
        for (i, &av) in a_row.iter().enumerate() {
            let dst = &mut out[i * p..(i + 1) * p];
            for (d, &bv) in dst.iter_mut().zip(b_row) {
                *d += av * bv;
            }
        }
    }
    Tensor::new(vec![m, p], out)?.ensure_finite("matmul_at")
}

/// Row-wise softmax of `z / temperature`, stabilized by subtracting each row's maximum.
pub fn softmax_rows(z: &Tensor, temperature: f64) -> Result<Tensor> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "softmax temperature must be positive, got {temperature}"
        )));
    }
    let (m, n) = z.require_matrix("softmax_rows")?;
    if !z.is_finite() {
        return Err(Error::NonFinite("softmax_rows input"));
    }
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &z.data[i * n..(i + 1) * n];
        let max = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b / temperature));
        let dst = &mut out[i * n..(i + 1) * n];
        let mut sum = 0.0;
        for (d, &v) in dst.iter_mut().zip(row) {
            *d = (v / temperature - max).exp();
            sum += *d;
        }
        dst.iter_mut().for_each(|d| *d /= sum);
    }
    Tensor::new(vec![m, n], out)?.ensure_finite("softmax_rows")
}

/// One-hot matrix with `n` columns.
pub fn one_hot(labels: &[usize], n: usize) -> Result<Tensor> {
    let mut t = Tensor::zeros(&[labels.len(), n]);
    for (i, &label) in labels.iter().enumerate() {
        if label >= n {
            return Err(Error::InvalidArgument(format!(
                "label {label} out of range for {n} classes"
            )));
        }
        t.data[i * n + label] = 1.0;
    }
    Ok(t)
}

fn check_one_hot(y: &Tensor) -> Result<()> {
    for i in 0..y.rows() {
        let row = y.row(i);
        let ones = row.iter().filter(|&&v| v == 1.0).count();
        let zeros = row.iter().filter(|&&v| v == 0.0).count();
        if ones != 1 || ones + zeros != row.len() {
            return Err(Error::NotOneHot { row: i });
        }
    }
    Ok(())
}

/// Batch-mean negative log-likelihood `(1/M) Σ_m −Y_m · ln(Ŷ_m + floor)`.
pub fn nll_loss(y_hat: &Tensor, y: &Tensor) -> Result<f64> {
    same_shape("nll_loss", y_hat, y)?;
    y_hat.require_matrix("nll_loss")?;
    check_one_hot(y)?;
    let m = y.rows();
    if m == 0 {
        return Err(Error::InvalidArgument("nll_loss on an empty batch".into()));
    }
    let total: f64 = y
        .data
        .iter()
        .zip(&y_hat.data)
        .filter(|(&t, _)| t != 0.0)
        .map(|(&t, &p)| -t * (p + LOG_FLOOR).ln())
        .sum();
    let loss = total / m as f64;
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(Error::NonFinite("nll_loss"))
    }
}

/// The prediction error `Δ = Y − Ŷ`.
pub fn prediction_error(y: &Tensor, y_hat: &Tensor) -> Result<Tensor> {
    same_shape("prediction_error", y, y_hat)?;
    let data = y.data.iter().zip(&y_hat.data).map(|(a, b)| a - b).collect();
    Tensor::new(y.shape.clone(), data)?.ensure_finite("prediction_error")
}

pub fn frobenius_norm(t: &Tensor) -> f64 {
    t.data.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Natural-log entropy of each probability row.
pub fn entropy_rows(p: &Tensor) -> Result<Tensor> {
    let (m, n) = p.require_matrix("entropy_rows")?;
    let data = (0..m)
        .map(|i| {
            p.data[i * n..(i + 1) * n]
                .iter()
                .map(|&q| -q * (q + LOG_FLOOR).ln())
                .sum()
        })
        .collect();
    Tensor::new(vec![m], data)?.ensure_finite("entropy_rows")
}

pub fn l2_distance(u: &Tensor, v: &Tensor) -> Result<f64> {
    same_shape("l2_distance", u, v)?;
    Ok(l2_distance_slices(&u.data, &v.data))
}

pub(crate) fn l2_distance_slices(u: &[f64], v: &[f64]) -> f64 {
    u.iter()
        .zip(v)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

/// Index of the largest entry in each row; ties go to the lowest index.
pub fn argmax_rows(t: &Tensor) -> Vec<usize> {
    (0..t.rows())
        .map(|i| {
            let row = t.row(i);
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn matmul_identity_and_zero() {
        let a = m(&[&[1.0, 2.0], &[3.0, 4.0]]);
        assert_eq!(matmul(&Tensor::identity(2), &a).unwrap(), a);
        let z = Tensor::zeros(&[2, 3]);
        assert_eq!(matmul(&Tensor::identity(2), &z).unwrap(), z);
    }

    #[test]
    fn matmul_hand_expansion() {
        let a = m(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let b = m(&[&[5.0], &[6.0]]);
        assert_eq!(matmul(&a, &b).unwrap().data(), &[17.0, 39.0]);
    }

    #[test]
    fn matmul_shape_mismatch() {
        let a = Tensor::zeros(&[2, 3]);
        assert!(matches!(matmul(&a, &a), Err(Error::Shape { .. })));
    }

    #[test]
    fn transposed_products_agree_with_matmul() {
        let a = m(&[&[1.0, -2.0, 0.5], &[3.0, 4.0, -1.0]]);
        let b = m(&[&[2.0, 1.0, 0.0], &[-1.0, 0.5, 3.0]]);
        let bt = b.transpose().unwrap();
        assert_eq!(matmul_bt(&a, &b).unwrap(), matmul(&a, &bt).unwrap());
        let at = a.transpose().unwrap();
        assert_eq!(matmul_at(&a, &b).unwrap(), matmul(&at, &b).unwrap());
    }

    #[test]
    fn softmax_known_rows() {
        let z = m(&[&[0.0, 0.0, 0.0]]);
        let p = softmax_rows(&z, 1.0).unwrap();
        for &v in p.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let z = m(&[&[2f64.ln(), 0.0]]);
        let p = softmax_rows(&z, 1.0).unwrap();
        assert!((p.data()[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((p.data()[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn softmax_huge_temperature_is_uniform() {
        let z = m(&[&[3.0, -7.5, 12.0, 0.25]]);
        let p = softmax_rows(&z, 1e8).unwrap();
        for &v in p.data() {
            assert!((v - 0.25).abs() < 1e-6);
        }
    }

    #[test]
    fn softmax_rejects_bad_temperature() {
        let z = m(&[&[0.0, 1.0]]);
        assert!(softmax_rows(&z, 0.0).is_err());
        assert!(softmax_rows(&z, -1.0).is_err());
    }

    #[test]
    fn softmax_survives_large_logits() {
        let z = m(&[&[1000.0, 0.0, -1000.0]]);
        let p = softmax_rows(&z, 1.0).unwrap();
        assert!((p.data()[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn nll_values() {
        let uniform = Tensor::full(&[2, 3], 1.0 / 3.0);
        let y = one_hot(&[0, 2], 3).unwrap();
        assert!((nll_loss(&uniform, &y).unwrap() - 3f64.ln()).abs() < 1e-9);
        assert!(nll_loss(&y, &y).unwrap().abs() < 1e-11);
        let y_hat = m(&[&[0.7, 0.3]]);
        let y = m(&[&[1.0, 0.0]]);
        assert!((nll_loss(&y_hat, &y).unwrap() - 0.356_674_943_938_732_4).abs() < 1e-11);
    }

    #[test]
    fn nll_rejects_soft_labels() {
        let y_hat = m(&[&[0.5, 0.5]]);
        let y = m(&[&[0.5, 0.5]]);
        assert!(matches!(nll_loss(&y_hat, &y), Err(Error::NotOneHot { row: 0 })));
    }

    #[test]
    fn prediction_error_cases() {
        let y = one_hot(&[3], 4).unwrap();
        let y_hat = Tensor::full(&[1, 4], 0.25);
        assert_eq!(prediction_error(&y, &y_hat).unwrap().data(), &[-0.25, -0.25, -0.25, 0.75]);
        assert!(prediction_error(&y, &y).unwrap().data().iter().all(|&v| v == 0.0));
        let y = m(&[&[1.0, 0.0]]);
        let y_hat = m(&[&[0.5, 0.5]]);
        assert_eq!(prediction_error(&y, &y_hat).unwrap().data(), &[0.5, -0.5]);
        assert!(prediction_error(&y, &Tensor::zeros(&[2, 2])).is_err());
    }

    #[test]
    fn norms_and_entropy() {
        assert_eq!(frobenius_norm(&Tensor::zeros(&[3, 4])), 0.0);
        let h = entropy_rows(&Tensor::full(&[1, 5], 0.2)).unwrap();
        assert!((h.data()[0] - 5f64.ln()).abs() < 1e-10);
        let u = Tensor::new(vec![2], vec![3.0, 0.0]).unwrap();
        let v = Tensor::new(vec![2], vec![0.0, 4.0]).unwrap();
        assert_eq!(l2_distance(&u, &v).unwrap(), 5.0);
        assert!(l2_distance(&u, &Tensor::zeros(&[3])).is_err());
    }

    #[test]
    fn argmax_ties_pick_first() {
        let t = m(&[&[0.0, 0.0, 0.0], &[0.1, 0.3, 0.3]]);
        assert_eq!(argmax_rows(&t), vec![0, 1]);
    }
}
