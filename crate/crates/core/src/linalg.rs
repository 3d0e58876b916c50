//! Dense vector/matrix kernel.
//!
//! Everything the flow needs from linear algebra lives here: the rank-1
//! Householder reflection used on the training path, the explicit reflection
//! matrix used by property checks, and the triangularization that factors an
//! orthogonal matrix into a product of reflections.

use std::ops::{Index, IndexMut};

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Reflector norms at or below this value are rejected.
pub const NORM_FLOOR: f64 = 1e-8;

/// Tolerance used by [`decompose_orthogonal`] to accept its input.
pub const ORTHOGONALITY_TOL: f64 = 1e-8;

fn check_finite(data: &[f64]) -> Result<()> {
    match data.iter().position(|x| !x.is_finite()) {
        Some(index) => Err(Error::NonFinite { index }),
        None => Ok(()),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseVector {
    data: Vec<f64>,
}

impl DenseVector {
    /// Builds a vector, rejecting empty input and non-finite entries.
    pub fn new(data: Vec<f64>) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::Shape("vector must have at least one entry".into()));
        }
        check_finite(&data)?;
        Ok(DenseVector { data })
    }

    pub fn zeros(dim: usize) -> Self {
        DenseVector {
            data: vec![0.0; dim],
        }
    }

    /// Wraps values produced by internal arithmetic on already-validated inputs.
    pub(crate) fn from_raw(data: Vec<f64>) -> Self {
        DenseVector { data }
    }

    pub fn dim(&self) -> usize {
        self.data.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn dot(&self, other: &DenseVector) -> f64 {
        dot(&self.data, &other.data)
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn norm_sq(&self) -> f64 {
        dot(&self.data, &self.data)
    }

    pub fn scaled(&self, c: f64) -> DenseVector {
        DenseVector::from_raw(self.data.iter().map(|x| c * x).collect())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

impl Index<usize> for DenseVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.data[i]
    }
}

impl IndexMut<usize> for DenseVector {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.data[i]
    }
}

impl TryFrom<Vec<f64>> for DenseVector {
    type Error = Error;

    fn try_from(data: Vec<f64>) -> Result<Self> {
        DenseVector::new(data)
    }
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Shape(format!("{rows}x{cols} matrix")));
        }
        if rows * cols != data.len() {
            return Err(Error::Shape(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        check_finite(&data)?;
        Ok(DenseMatrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Shape("ragged rows".into()));
        }
        DenseMatrix::new(rows.len(), cols, rows.concat())
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = DenseMatrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn diagonal(values: &[f64]) -> Self {
        let n = values.len();
        let mut m = DenseMatrix::zeros(n, n);
        for (i, v) in values.iter().enumerate() {
            m.data[i * n + i] = *v;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, value: f64) {
        self.data[r * self.cols + c] = value;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn transpose(&self) -> DenseMatrix {
        let mut t = DenseMatrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        t
    }

    /// `self * x`; panics if `x.len() != cols`.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols, "matvec dimension");
        (0..self.rows).map(|r| dot(self.row(r), x)).collect()
    }

    /// `self^T * y`; panics if `y.len() != rows`.
    pub fn matvec_transposed(&self, y: &[f64]) -> Vec<f64> {
        assert_eq!(y.len(), self.rows, "matvec_transposed dimension");
        let mut out = vec![0.0; self.cols];
        for (r, yr) in y.iter().enumerate() {
            if *yr == 0.0 {
                continue;
            }
            for (o, w) in out.iter_mut().zip(self.row(r)) {
                *o += yr * w;
            }
        }
        out
    }

    pub fn matmul(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        if self.cols != other.rows {
            return Err(Error::DimensionMismatch {
                expected: self.cols,
                found: other.rows,
            });
        }
        let mut out = DenseMatrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let orow = &other.data[k * other.cols..(k + 1) * other.cols];
                let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (d, b) in dst.iter_mut().zip(orow) {
                    *d += a * b;
                }
            }
        }
        Ok(out)
    }

    /// Largest elementwise absolute difference; `inf` when shapes differ.
    pub fn max_abs_diff(&self, other: &DenseMatrix) -> f64 {
        if self.rows != other.rows || self.cols != other.cols {
            return f64::INFINITY;
        }
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        self.is_square() && self.max_abs_diff(&self.transpose()) <= tol
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Reflects `z` in place about the hyperplane orthogonal to `v`.
///
/// `v_norm_sq` must be `v . v` and above the squared floor.
pub(crate) fn reflect_in_place(v: &[f64], v_norm_sq: f64, z: &mut [f64]) {
    let coeff = 2.0 * dot(v, z) / v_norm_sq;
    for (zi, vi) in z.iter_mut().zip(v) {
        *zi -= coeff * vi;
    }
}

fn checked_norm_sq(v: &DenseVector) -> Result<f64> {
    let norm_sq = v.norm_sq();
    let norm = norm_sq.sqrt();
    if norm.is_nan() || norm <= NORM_FLOOR {
        return Err(Error::DegenerateReflector {
            norm,
            floor: NORM_FLOOR,
        });
    }
    Ok(norm_sq)
}

/// Applies `H = I - 2 v v^T / |v|^2` to `z` as a rank-1 update.
pub fn householder_apply(v: &DenseVector, z: &DenseVector) -> Result<DenseVector> {
    if v.dim() != z.dim() {
        return Err(Error::DimensionMismatch {
            expected: v.dim(),
            found: z.dim(),
        });
    }
    let norm_sq = checked_norm_sq(v)?;
    let mut out = z.as_slice().to_vec();
    reflect_in_place(v.as_slice(), norm_sq, &mut out);
    Ok(DenseVector::from_raw(out))
}

/// Materializes the reflection matrix. Only property checks need this; the
/// flow itself always uses [`householder_apply`].
pub fn householder_matrix(v: &DenseVector) -> Result<DenseMatrix> {
    let norm_sq = checked_norm_sq(v)?;
    let n = v.dim();
    let mut h = DenseMatrix::identity(n);
    for r in 0..n {
        for c in 0..n {
            h.data[r * n + c] -= 2.0 * v[r] * v[c] / norm_sq;
        }
    }
    Ok(h)
}

/// True iff `max |M M^T - I| <= tol`. Non-square input is never orthogonal.
pub fn is_orthogonal(m: &DenseMatrix, tol: f64) -> bool {
    orthogonality_defect(m) <= tol
}

/// `max |M M^T - I|`, or `inf` for non-square input.
pub fn orthogonality_defect(m: &DenseMatrix) -> f64 {
    if !m.is_square() {
        return f64::INFINITY;
    }
    let n = m.rows;
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((dot(m.row(i), m.row(j)) - target).abs());
        }
    }
    worst
}

/// An orthogonal matrix written as `H_K ... H_1 diag(sign_diag)`.
///
/// `reflectors[0]` is `v_1`, the reflection applied first to a vector after
/// the sign flip.
#[derive(Debug, Clone, PartialEq)]
pub struct OrthogonalDecomposition {
    pub reflectors: Vec<DenseVector>,
    pub sign_diag: Vec<f64>,
}

impl OrthogonalDecomposition {
    pub fn dim(&self) -> usize {
        self.sign_diag.len()
    }

    /// Applies the factored matrix to `z` without forming it.
    pub fn apply(&self, z: &[f64]) -> Vec<f64> {
        let mut out: Vec<f64> = z.iter().zip(&self.sign_diag).map(|(a, s)| a * s).collect();
        for v in &self.reflectors {
            reflect_in_place(v.as_slice(), v.norm_sq(), &mut out);
        }
        out
    }

    /// Multiplies the factors back into a dense matrix.
    pub fn reconstruct(&self) -> DenseMatrix {
        let n = self.dim();
        let mut out = DenseMatrix::zeros(n, n);
        let mut e = vec![0.0; n];
        for c in 0..n {
            e.iter_mut().for_each(|x| *x = 0.0);
            e[c] = 1.0;
            for (r, value) in self.apply(&e).into_iter().enumerate() {
                out.set(r, c, value);
            }
        }
        out
    }

    /// Basis-kernel form `U = I - Y S Y^T`.
    ///
    /// Negative entries of `sign_diag` are folded in as reflections about the
    /// corresponding unit vectors, so `Y` has one column per reflection and
    /// `S` is upper triangular with `S_kk = 2 / |y_k|^2`.
    pub fn basis_kernel(&self) -> (DenseMatrix, DenseMatrix) {
        let n = self.dim();
        // Product order, leftmost first: U = H_K ... H_1 D.
        let mut columns: Vec<Vec<f64>> = self
            .reflectors
            .iter()
            .rev()
            .map(|v| v.as_slice().to_vec())
            .collect();
        for (i, s) in self.sign_diag.iter().enumerate() {
            if *s < 0.0 {
                let mut e = vec![0.0; n];
                e[i] = 1.0;
                columns.push(e);
            }
        }
        let k = columns.len();
        let mut y = DenseMatrix::zeros(n, k);
        let mut s = DenseMatrix::zeros(k, k);
        for (j, col) in columns.iter().enumerate() {
            for (r, value) in col.iter().enumerate() {
                y.set(r, j, *value);
            }
        }
        // Compact WY recurrence: with Q_j = I - Y_j S_j Y_j^T,
        // Q_j H_{j+1} has kernel [[S_j, -tau S_j Y_j^T y], [0, tau]].
        for j in 0..k {
            let yj = &columns[j];
            let tau = 2.0 / dot(yj, yj);
            let proj: Vec<f64> = columns[..j].iter().map(|c| dot(c, yj)).collect();
            for r in 0..j {
                let acc: f64 = (0..j).map(|c| s.get(r, c) * proj[c]).sum();
                s.set(r, j, -tau * acc);
            }
            s.set(j, j, tau);
        }
        (y, s)
    }
}

/// Factors an orthogonal matrix into Householder reflections by sequential
/// triangularization. Columns that are already triangular contribute no
/// reflector.
pub fn decompose_orthogonal(u: &DenseMatrix) -> Result<OrthogonalDecomposition> {
    if !u.is_square() {
        return Err(Error::Shape(format!(
            "expected a square matrix, got {}x{}",
            u.rows, u.cols
        )));
    }
    let defect = orthogonality_defect(u);
    if defect.is_nan() || defect > ORTHOGONALITY_TOL {
        return Err(Error::NotOrthogonal {
            max_deviation: defect,
        });
    }
    let n = u.rows;
    // Work on columns of R so reflections are contiguous slices.
    let mut cols: Vec<Vec<f64>> = (0..n).map(|c| u.column(c)).collect();
    let mut found = Vec::new();
    for k in 0..n.saturating_sub(1) {
        let x = &cols[k][k..];
        let tail_sq: f64 = x[1..].iter().map(|t| t * t).sum();
        let norm = (x[0] * x[0] + tail_sq).sqrt();
        // Map x onto +|x| e_1; the positive-side head uses the cancellation-free
        // form x0 - |x| = -tail^2 / (x0 + |x|).
        let head = if x[0] <= 0.0 {
            x[0] - norm
        } else {
            -tail_sq / (x[0] + norm)
        };
        let mut v = vec![0.0; n];
        v[k] = head;
        v[k + 1..].copy_from_slice(&x[1..]);
        let v_norm_sq = head * head + tail_sq;
        if v_norm_sq.sqrt() <= NORM_FLOOR {
            continue;
        }
        for col in cols.iter_mut().skip(k) {
            reflect_in_place(&v, v_norm_sq, col);
        }
        found.push(DenseVector::from_raw(v));
    }
    let sign_diag = (0..n)
        .map(|k| if cols[k][k] < 0.0 { -1.0 } else { 1.0 })
        .collect();
    // H_m ... H_1 U = D  =>  U = H_1 ... H_m D, so the reflector applied
    // first after D is the last one found.
    found.reverse();
    Ok(OrthogonalDecomposition {
        reflectors: found,
        sign_diag,
    })
}

/// Determinant by LU with partial pivoting.
pub fn determinant(m: &DenseMatrix) -> Result<f64> {
    if !m.is_square() {
        return Err(Error::Shape("determinant of a non-square matrix".into()));
    }
    let n = m.rows;
    let mut a = m.data.clone();
    let mut det = 1.0;
    for k in 0..n {
        let pivot = (k..n)
            .max_by(|&i, &j| a[i * n + k].abs().total_cmp(&a[j * n + k].abs()))
            .unwrap_or(k);
        if a[pivot * n + k] == 0.0 {
            return Ok(0.0);
        }
        if pivot != k {
            for c in 0..n {
                a.swap(k * n + c, pivot * n + c);
            }
            det = -det;
        }
        let p = a[k * n + k];
        det *= p;
        for i in k + 1..n {
            let f = a[i * n + k] / p;
            if f == 0.0 {
                continue;
            }
            for c in k..n {
                a[i * n + c] -= f * a[k * n + c];
            }
        }
    }
    Ok(det)
}

/// Lower-triangular Cholesky factor `L` with `L L^T = m`.
pub fn cholesky(m: &DenseMatrix) -> Result<DenseMatrix> {
    if !m.is_square() {
        return Err(Error::Shape("cholesky of a non-square matrix".into()));
    }
    let n = m.rows;
    let mut l = DenseMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l.get(i, k) * l.get(j, k)).sum();
            if i == j {
                let d = m.get(i, i) - s;
                if d.is_nan() || d <= 0.0 {
                    return Err(Error::NotPositiveDefinite);
                }
                l.set(i, j, d.sqrt());
            } else {
                l.set(i, j, (m.get(i, j) - s) / l.get(j, j));
            }
        }
    }
    Ok(l)
}

/// Haar-distributed random orthogonal matrix: the Q factor of a Gaussian
/// matrix with the signs of R's diagonal folded into Q.
pub fn random_orthogonal<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DenseMatrix {
    loop {
        let data: Vec<f64> = (0..n * n).map(|_| rng.sample(StandardNormal)).collect();
        let a = DenseMatrix {
            rows: n,
            cols: n,
            data,
        };
        if let Some(q) = householder_q(&a) {
            return q;
        }
    }
}

/// Q factor of the QR decomposition with a positive R diagonal, or `None` if
/// the input is numerically rank deficient.
fn householder_q(a: &DenseMatrix) -> Option<DenseMatrix> {
    let n = a.rows;
    let mut cols: Vec<Vec<f64>> = (0..n).map(|c| a.column(c)).collect();
    let mut reflectors: Vec<(Vec<f64>, f64)> = Vec::new();
    for k in 0..n {
        let x = &cols[k][k..];
        let norm = dot(x, x).sqrt();
        if norm < 1e-10 {
            return None;
        }
        let alpha = if x[0] >= 0.0 { -norm } else { norm };
        let mut v = vec![0.0; n];
        v[k] = x[0] - alpha;
        v[k + 1..].copy_from_slice(&x[1..]);
        let v_norm_sq = dot(&v, &v);
        if v_norm_sq.sqrt() > NORM_FLOOR {
            for col in cols.iter_mut().skip(k) {
                reflect_in_place(&v, v_norm_sq, col);
            }
            reflectors.push((v, v_norm_sq));
        } else {
            reflectors.push((v, 0.0));
        }
    }
    // Q = H_1 ... H_n applied to the identity, then scaled by sign(R_kk).
    let mut q = DenseMatrix::zeros(n, n);
    for c in 0..n {
        let mut e = vec![0.0; n];
        e[c] = if cols[c][c] < 0.0 { -1.0 } else { 1.0 };
        for (v, v_norm_sq) in reflectors.iter().rev() {
            if *v_norm_sq > 0.0 {
                reflect_in_place(v, *v_norm_sq, &mut e);
            }
        }
        for (r, value) in e.into_iter().enumerate() {
            q.set(r, c, value);
        }
    }
    Some(q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn vec(data: &[f64]) -> DenseVector {
        DenseVector::new(data.to_vec()).unwrap()
    }

    #[test]
    fn vector_rejects_nan_and_empty() {
        assert!(matches!(
            DenseVector::new(vec![1.0, f64::NAN]),
            Err(Error::NonFinite { index: 1 })
        ));
        assert!(DenseVector::new(vec![]).is_err());
        assert!(DenseMatrix::new(2, 2, vec![0.0; 3]).is_err());
    }

    #[test]
    fn reflect_about_first_axis() {
        let out = householder_apply(&vec(&[1.0, 0.0]), &vec(&[3.0, 4.0])).unwrap();
        assert_eq!(out.as_slice(), &[-3.0, 4.0]);
    }

    #[test]
    fn reflect_about_diagonal() {
        let out = householder_apply(&vec(&[1.0, 1.0]), &vec(&[3.0, 4.0])).unwrap();
        assert!((out[0] + 4.0).abs() < 1e-15);
        assert!((out[1] + 3.0).abs() < 1e-15);
    }

    #[test]
    fn apply_errors() {
        assert!(matches!(
            householder_apply(&vec(&[1.0, 0.0]), &vec(&[1.0, 2.0, 3.0])),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            householder_apply(&vec(&[1e-9, 0.0]), &vec(&[1.0, 2.0])),
            Err(Error::DegenerateReflector { .. })
        ));
        assert!(householder_matrix(&vec(&[0.0, 0.0])).is_err());
    }

    #[test]
    fn householder_matrix_examples() {
        let h = householder_matrix(&vec(&[1.0, 0.0])).unwrap();
        assert_eq!(h.data(), &[-1.0, 0.0, 0.0, 1.0]);
        let h = householder_matrix(&vec(&[1.0, 1.0])).unwrap();
        assert!(h.max_abs_diff(&DenseMatrix::new(2, 2, vec![0.0, -1.0, -1.0, 0.0]).unwrap()) < 1e-15);
        let h = householder_matrix(&vec(&[2.0, 0.0])).unwrap();
        assert_eq!(h.data(), &[-1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn orthogonality_predicate() {
        assert!(is_orthogonal(&DenseMatrix::identity(4), 1e-12));
        let mut two = DenseMatrix::identity(2);
        two.data_mut().iter_mut().for_each(|x| *x *= 2.0);
        assert!(!is_orthogonal(&two, 1e-6));
        assert!(!is_orthogonal(&DenseMatrix::zeros(2, 3), 1.0));
    }

    #[test]
    fn decompose_identity_needs_no_reflectors() {
        let d = decompose_orthogonal(&DenseMatrix::identity(3)).unwrap();
        assert!(d.reflectors.is_empty());
        assert_eq!(d.sign_diag, vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn decompose_single_reflection() {
        let u = DenseMatrix::new(2, 2, vec![0.0, -1.0, -1.0, 0.0]).unwrap();
        let d = decompose_orthogonal(&u).unwrap();
        assert_eq!(d.reflectors.len(), 1);
        let v = &d.reflectors[0];
        assert!((v[0] - v[1]).abs() < 1e-15 * v.norm().max(1.0));
        assert_eq!(d.sign_diag, vec![1.0, 1.0]);
        assert!(d.reconstruct().max_abs_diff(&u) < 1e-15);
    }

    #[test]
    fn decompose_rejects_non_orthogonal() {
        let m = DenseMatrix::new(2, 2, vec![1.0, 1.0, 0.0, 1.0]).unwrap();
        assert!(matches!(
            decompose_orthogonal(&m),
            Err(Error::NotOrthogonal { .. })
        ));
    }

    #[test]
    fn determinant_and_cholesky() {
        let m = DenseMatrix::new(2, 2, vec![4.0, 2.0, 2.0, 3.0]).unwrap();
        assert!((determinant(&m).unwrap() - 8.0).abs() < 1e-12);
        let l = cholesky(&m).unwrap();
        let back = l.matmul(&l.transpose()).unwrap();
        assert!(back.max_abs_diff(&m) < 1e-12);
        let bad = DenseMatrix::new(2, 2, vec![1.0, 2.0, 2.0, 1.0]).unwrap();
        assert!(matches!(cholesky(&bad), Err(Error::NotPositiveDefinite)));
    }

    #[test]
    fn random_orthogonal_is_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in [1, 2, 5, 16] {
            let q = random_orthogonal(n, &mut rng);
            assert!(is_orthogonal(&q, 1e-12), "n = {n}");
        }
    }

    #[test]
    fn basis_kernel_of_identity_is_empty() {
        let d = decompose_orthogonal(&DenseMatrix::identity(3)).unwrap();
        let (y, s) = d.basis_kernel();
        assert_eq!((y.rows(), y.cols()), (3, 0));
        assert_eq!(s.rows(), 0);
    }
}
