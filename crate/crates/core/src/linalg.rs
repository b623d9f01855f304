//! Dense row-major matrices and the factorizations the closed-form models
//! need. Factorizations and eigensolvers are delegated to `faer`.

use std::fs;
use std::path::Path;

use faer::linalg::solvers::{DenseSolveCore, Solve};
use faer::{Mat, MatRef, Side};
use rayon::prelude::*;

use crate::error::{LareError, Result};
use crate::interactions::InteractionMatrix;

/// Largest item count for which a dense n×n gram is materialized by default.
pub const DEFAULT_DENSE_CAP: usize = 32768;
/// Largest dimension handed to the general (non-symmetric) eigensolver.
pub const GENERAL_EIG_CAP: usize = 512;
/// Symmetry tolerance, relative to the largest entry magnitude.
pub const SYMMETRY_TOL: f64 = 1e-10;

const MAGIC: &[u8; 4] = b"LARE";
const FORMAT_VERSION: u16 = 1;
const HEADER_LEN: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        DenseMatrix { rows, cols, data }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(LareError::Contract(format!(
                "buffer of length {} cannot hold a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(DenseMatrix { rows, cols, data })
    }

    /// Builds from nested rows; panics on ragged input (test convenience).
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let cols = rows.first().map_or(0, |r| r.len());
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        DenseMatrix {
            rows: rows.len(),
            cols,
            data: rows.iter().flat_map(|r| r.iter().copied()).collect(),
        }
    }

    pub fn diagonal_matrix(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut m = Self::zeros(n, n);
        for (i, &d) in diag.iter().enumerate() {
            m.data[i * n + i] = d;
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

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
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

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.rows.min(self.cols)).map(|i| self.get(i, i)).collect()
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn add_to_diagonal(&mut self, v: f64) {
        for i in 0..self.rows.min(self.cols) {
            self.data[i * self.cols + i] += v;
        }
    }

    /// In-place `diag(left) · self · diag(right)`.
    pub fn scale_sandwich(&mut self, left: &[f64], right: &[f64]) {
        assert_eq!(left.len(), self.rows);
        assert_eq!(right.len(), self.cols);
        let cols = self.cols;
        self.data
            .par_chunks_mut(cols)
            .zip(left.par_iter())
            .for_each(|(row, &l)| {
                for (x, &r) in row.iter_mut().zip(right) {
                    *x *= l * r;
                }
            });
    }

    pub fn scale_columns(&mut self, right: &[f64]) {
        let ones = vec![1.0; self.rows];
        self.scale_sandwich(&ones, right);
    }

    pub fn scale_rows(&mut self, left: &[f64]) {
        let ones = vec![1.0; self.cols];
        self.scale_sandwich(left, &ones);
    }

    pub fn matmul(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        if self.cols != other.rows {
            return Err(LareError::Contract(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(from_faer(&(self.to_faer() * other.to_faer())))
    }

    pub fn sub(&self, other: &DenseMatrix) -> DenseMatrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn max_abs_diff(&self, other: &DenseMatrix) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    /// Largest `|a_ij - a_ji|`; infinite for non-square matrices.
    pub fn max_asymmetry(&self) -> f64 {
        if !self.is_square() {
            return f64::INFINITY;
        }
        let n = self.rows;
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn to_faer(&self) -> Mat<f64> {
        Mat::from_fn(self.rows, self.cols, |i, j| self.get(i, j))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let rows = u32::try_from(self.rows)
            .map_err(|_| LareError::Contract("row count exceeds u32".into()))?;
        let cols = u32::try_from(self.cols)
            .map_err(|_| LareError::Contract("column count exceeds u32".into()))?;
        let mut buf = Vec::with_capacity(HEADER_LEN + 8 * self.data.len());
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        buf.extend_from_slice(&0u16.to_le_bytes());
        buf.extend_from_slice(&rows.to_le_bytes());
        buf.extend_from_slice(&cols.to_le_bytes());
        for x in &self.data {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        fs::write(path, buf).map_err(|e| LareError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| LareError::io(path, e))?;
        if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
            return Err(LareError::format(path, "not a dense matrix file"));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != FORMAT_VERSION {
            return Err(LareError::format(
                path,
                format!("unsupported format version {version}"),
            ));
        }
        let word = |k: usize| u32::from_le_bytes(bytes[k..k + 4].try_into().unwrap()) as usize;
        let (rows, cols) = (word(8), word(12));
        let expected = HEADER_LEN + 8 * rows * cols;
        if bytes.len() != expected {
            return Err(LareError::format(
                path,
                format!("expected {expected} bytes for a {rows}x{cols} matrix, found {}", bytes.len()),
            ));
        }
        let data: Vec<f64> = bytes[HEADER_LEN..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if data.iter().any(|x| !x.is_finite()) {
            return Err(LareError::format(path, "non-finite entry"));
        }
        Ok(DenseMatrix { rows, cols, data })
    }
}

pub fn from_faer(m: &Mat<f64>) -> DenseMatrix {
    from_faer_ref(m.as_ref())
}

pub fn from_faer_ref(m: MatRef<'_, f64>) -> DenseMatrix {
    DenseMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

/// Caps the worker count used by gram accumulation and the dense kernels.
/// Must be called before any parallel work; later calls only affect `faer`.
pub fn set_threads(n: usize) {
    let n = n.max(1);
    // fails if the global pool already exists, which is fine
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    faer::set_global_parallelism(if n == 1 {
        faer::Par::Seq
    } else {
        faer::Par::rayon(n)
    });
}

/// `Xᵀ · diag(w) · X` with the default dense cap.
pub fn gram(x: &InteractionMatrix, user_weights: Option<&[f64]>) -> Result<DenseMatrix> {
    gram_with_cap(x, user_weights, DEFAULT_DENSE_CAP)
}

/// `Xᵀ · diag(w) · X`, accumulated one output row at a time from the users
/// of that item. Only the upper triangle is summed; the lower triangle is a
/// copy, so the result is bitwise symmetric. Each entry is summed in
/// ascending user order, so the result does not depend on thread count.
pub fn gram_with_cap(
    x: &InteractionMatrix,
    user_weights: Option<&[f64]>,
    cap: usize,
) -> Result<DenseMatrix> {
    let n = x.n_items();
    if n > cap {
        return Err(LareError::Capacity {
            what: "item",
            n,
            cap,
        });
    }
    if let Some(w) = user_weights {
        if w.len() != x.n_users() {
            return Err(LareError::Contract(format!(
                "{} user weights for {} users",
                w.len(),
                x.n_users()
            )));
        }
    }
    let columns = x.columns();
    let mut out = DenseMatrix::zeros(n, n);
    out.data.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
        for &u in &columns[i] {
            let w = user_weights.map_or(1.0, |w| w[u as usize]);
            let items = x.row(u as usize);
            let start = items.partition_point(|&j| (j as usize) < i);
            for &j in &items[start..] {
                row[j as usize] += w;
            }
        }
    });
    for i in 0..n {
        for j in 0..i {
            out.data[i * n + j] = out.data[j * n + i];
        }
    }
    Ok(out)
}

fn check_symmetric(a: &DenseMatrix) -> Result<()> {
    if !a.is_square() {
        return Err(LareError::Contract(format!(
            "expected a square matrix, got {}x{}",
            a.rows, a.cols
        )));
    }
    let asym = a.max_asymmetry();
    if asym > SYMMETRY_TOL * a.max_abs().max(1.0) {
        return Err(LareError::NotSymmetric { max_asym: asym });
    }
    Ok(())
}

fn cholesky(a: &DenseMatrix) -> Result<faer::linalg::solvers::Llt<f64>> {
    check_symmetric(a)?;
    if !a.all_finite() {
        return Err(LareError::Numerical("matrix has non-finite entries".into()));
    }
    a.to_faer().llt(Side::Lower).map_err(|e| match e {
        faer::linalg::cholesky::llt::factor::LltError::NonPositivePivot { index } => {
            LareError::NotPositiveDefinite { pivot: index }
        }
    })
}

/// `A⁻¹ · rhs` for symmetric positive-definite `A`, via Cholesky.
pub fn solve_spd(a: &DenseMatrix, rhs: &DenseMatrix) -> Result<DenseMatrix> {
    if rhs.rows != a.rows {
        return Err(LareError::Contract(format!(
            "right-hand side has {} rows, matrix has {}",
            rhs.rows, a.rows
        )));
    }
    let llt = cholesky(a)?;
    let x = from_faer(&llt.solve(rhs.to_faer()));
    finite_or_err(x, "SPD solve")
}

/// `A⁻¹` for symmetric positive-definite `A`, returned exactly symmetric.
pub fn spd_inverse(a: &DenseMatrix) -> Result<DenseMatrix> {
    let llt = cholesky(a)?;
    let mut inv = from_faer(&llt.inverse());
    let n = inv.rows;
    for i in 0..n {
        for j in 0..i {
            inv.data[j * n + i] = inv.data[i * n + j];
        }
    }
    finite_or_err(inv, "SPD inverse")
}

/// `A⁻¹ · rhs` for a general square `A`, via partial-pivoting LU.
pub fn solve_general(a: &DenseMatrix, rhs: &DenseMatrix) -> Result<DenseMatrix> {
    if !a.is_square() || rhs.rows != a.rows {
        return Err(LareError::Contract("shape mismatch in general solve".into()));
    }
    let lu = a.to_faer().partial_piv_lu();
    let x = from_faer(&lu.solve(rhs.to_faer()));
    finite_or_err(x, "LU solve")
}

fn finite_or_err(m: DenseMatrix, what: &str) -> Result<DenseMatrix> {
    if m.all_finite() {
        Ok(m)
    } else {
        Err(LareError::Numerical(format!("{what} produced non-finite entries")))
    }
}

/// Sorted spectrum of a symmetric matrix plus a free-form provenance label
/// (e.g. `gram:dan(alpha=0.5,beta=1)`).
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumReport {
    /// Descending.
    pub eigenvalues: Vec<f64>,
    pub source: String,
}

/// Full spectrum of a symmetric matrix, descending.
pub fn eig_sym(a: &DenseMatrix, source: impl Into<String>) -> Result<SpectrumReport> {
    check_symmetric(a)?;
    let mut values = a
        .to_faer()
        .self_adjoint_eigenvalues(Side::Lower)
        .map_err(|e| LareError::Numerical(format!("symmetric eigensolver: {e:?}")))?;
    values.reverse();
    Ok(SpectrumReport {
        eigenvalues: values,
        source: source.into(),
    })
}

/// Eigenvalues (descending) and matching eigenvectors as columns.
pub fn eig_sym_vectors(a: &DenseMatrix) -> Result<(Vec<f64>, DenseMatrix)> {
    check_symmetric(a)?;
    let evd = a
        .to_faer()
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| LareError::Numerical(format!("symmetric eigensolver: {e:?}")))?;
    let n = a.rows;
    let s = evd.S();
    let u = evd.U();
    let values = (0..n).rev().map(|k| s[k]).collect();
    let vectors = DenseMatrix::from_fn(n, n, |i, k| u[(i, n - 1 - k)]);
    Ok((values, vectors))
}

/// Eigenvalues of a general square matrix as (re, im), sorted by descending
/// real part. Restricted to small matrices.
pub fn eigenvalues_general(a: &DenseMatrix) -> Result<Vec<(f64, f64)>> {
    if !a.is_square() {
        return Err(LareError::Contract("eigenvalues of a non-square matrix".into()));
    }
    if a.rows > GENERAL_EIG_CAP {
        return Err(LareError::Capacity {
            what: "general eigensolver",
            n: a.rows,
            cap: GENERAL_EIG_CAP,
        });
    }
    let values = a
        .to_faer()
        .eigenvalues()
        .map_err(|e| LareError::Numerical(format!("general eigensolver: {e:?}")))?;
    let mut out: Vec<(f64, f64)> = values.iter().map(|c| (c.re, c.im)).collect();
    out.sort_by(|x, y| y.0.total_cmp(&x.0).then(y.1.total_cmp(&x.1)));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn naive_gram(x: &InteractionMatrix, w: Option<&[f64]>) -> DenseMatrix {
        let d = x.to_dense();
        let n = x.n_items();
        DenseMatrix::from_fn(n, n, |i, j| {
            (0..x.n_users())
                .map(|u| d[u][i] * d[u][j] * w.map_or(1.0, |w| w[u]))
                .sum()
        })
    }

    fn random_spd(n: usize, seed: u64) -> DenseMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = DenseMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let mut a = g.transpose().matmul(&g).unwrap();
        a.add_to_diagonal(0.5);
        // matmul output may differ from its transpose in the last bit
        DenseMatrix::from_fn(n, n, |i, j| a.get(i.min(j), i.max(j)))
    }

    #[test]
    fn gram_two_by_two() {
        let x = InteractionMatrix::from_dense(&[&[1, 1], &[0, 1]]).unwrap();
        let p = gram(&x, None).unwrap();
        assert_eq!(p, DenseMatrix::from_rows(&[&[1.0, 1.0], &[1.0, 2.0]]));
    }

    #[test]
    fn unit_weights_match_unweighted() {
        let x = InteractionMatrix::from_rows(vec![vec![0, 2, 3], vec![1, 2], vec![0, 3]], 4).unwrap();
        let ones = vec![1.0; 3];
        assert_eq!(gram(&x, None).unwrap(), gram(&x, Some(&ones)).unwrap());
    }

    #[test]
    fn gram_cap() {
        let x = InteractionMatrix::from_dense(&[&[1, 1, 1]]).unwrap();
        assert!(matches!(
            gram_with_cap(&x, None, 2),
            Err(LareError::Capacity { n: 3, cap: 2, .. })
        ));
    }

    #[test]
    fn solve_scalar_matrix() {
        let mut a = DenseMatrix::identity(4);
        a.scale_rows(&[2.0; 4]);
        let x = solve_spd(&a, &DenseMatrix::identity(4)).unwrap();
        let mut half = DenseMatrix::identity(4);
        half.scale_rows(&[0.5; 4]);
        assert!(x.max_abs_diff(&half) < 1e-15);
    }

    #[test]
    fn solve_two_by_two() {
        let a = DenseMatrix::from_rows(&[&[2.0, 1.0], &[1.0, 3.0]]);
        let rhs = DenseMatrix::from_rows(&[&[1.0, 1.0], &[1.0, 2.0]]);
        let x = solve_spd(&a, &rhs).unwrap();
        // closed-form inverse (1/5)[[3,-1],[-1,2]] times rhs
        let want = DenseMatrix::from_rows(&[&[2.0 / 5.0, 1.0 / 5.0], &[1.0 / 5.0, 3.0 / 5.0]]);
        assert!(x.max_abs_diff(&want) < 1e-15);
    }

    #[test]
    fn solve_random_residual() {
        let a = random_spd(50, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let rhs = DenseMatrix::from_fn(50, 7, |_, _| rng.random_range(-1.0..1.0));
        let x = solve_spd(&a, &rhs).unwrap();
        let r = a.matmul(&x).unwrap().sub(&rhs);
        assert!(r.frobenius_norm() / rhs.frobenius_norm() <= 1e-9);
    }

    #[test]
    fn inverse_is_symmetric_and_correct() {
        let a = random_spd(30, 8);
        let inv = spd_inverse(&a).unwrap();
        assert_eq!(inv.max_asymmetry(), 0.0);
        let r = a.matmul(&inv).unwrap().sub(&DenseMatrix::identity(30));
        assert!(r.frobenius_norm() < 1e-9);
    }

    #[test]
    fn not_positive_definite_names_pivot() {
        let a = DenseMatrix::from_rows(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0], &[0.0, 0.0, -1.0]]);
        assert!(matches!(
            solve_spd(&a, &DenseMatrix::identity(3)),
            Err(LareError::NotPositiveDefinite { pivot: 2 })
        ));
    }

    #[test]
    fn asymmetric_input_rejected() {
        let a = DenseMatrix::from_rows(&[&[1.0, 0.5], &[0.0, 1.0]]);
        assert!(matches!(eig_sym(&a, "t"), Err(LareError::NotSymmetric { .. })));
        assert!(matches!(spd_inverse(&a), Err(LareError::NotSymmetric { .. })));
    }

    #[test]
    fn general_solve_matches_spd_solve() {
        let a = random_spd(20, 5);
        let rhs = DenseMatrix::identity(20);
        let x = solve_general(&a, &rhs).unwrap();
        let y = solve_spd(&a, &rhs).unwrap();
        assert!(x.max_abs_diff(&y) < 1e-10);
    }

    #[test]
    fn eig_identity_and_two_by_two() {
        let s = eig_sym(&DenseMatrix::identity(3), "id").unwrap();
        for v in s.eigenvalues {
            assert!((v - 1.0).abs() < 1e-15);
        }
        let a = DenseMatrix::from_rows(&[&[1.0, 1.0], &[1.0, 2.0]]);
        let s = eig_sym(&a, "p").unwrap();
        let r5 = 5f64.sqrt();
        assert!((s.eigenvalues[0] - (3.0 + r5) / 2.0).abs() < 1e-14);
        assert!((s.eigenvalues[1] - (3.0 - r5) / 2.0).abs() < 1e-14);
    }

    #[test]
    fn eig_reconstruction() {
        let a = random_spd(40, 11);
        let (vals, v) = eig_sym_vectors(&a).unwrap();
        let mut vl = v.clone();
        vl.scale_columns(&vals);
        let back = vl.matmul(&v.transpose()).unwrap();
        assert!(back.sub(&a).frobenius_norm() / a.frobenius_norm() <= 1e-8);
        assert!(vals.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn general_eigenvalues_of_similar_matrix() {
        let a = random_spd(12, 2);
        let d: Vec<f64> = (1..=12).map(|k| k as f64).collect();
        let inv: Vec<f64> = d.iter().map(|x| 1.0 / x).collect();
        let mut b = a.clone();
        b.scale_sandwich(&d, &inv);
        let sym = eig_sym(&a, "a").unwrap().eigenvalues;
        let gen = eigenvalues_general(&b).unwrap();
        for (s, (re, im)) in sym.iter().zip(gen) {
            assert!((s - re).abs() < 1e-9 && im.abs() < 1e-9);
        }
    }

    #[test]
    fn binary_round_trip_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.bin");
        let a = random_spd(5, 1);
        a.save(&path).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert_eq!(&bytes[..4], b"LARE");
        assert_eq!(bytes.len(), 16 + 8 * 25);
        assert_eq!(DenseMatrix::load(&path).unwrap(), a);
        fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(DenseMatrix::load(&path), Err(LareError::Format { .. })));
        let mut bad = bytes.clone();
        bad[4] = 9;
        fs::write(&path, bad).unwrap();
        assert!(matches!(DenseMatrix::load(&path), Err(LareError::Format { .. })));
    }

    fn arb_matrix() -> impl Strategy<Value = InteractionMatrix> {
        (1usize..12, 1usize..10).prop_flat_map(|(m, n)| {
            proptest::collection::vec(proptest::collection::vec(0..n as u32, 0..=n), m)
                .prop_map(move |rows| InteractionMatrix::from_rows(rows, n).unwrap())
        })
    }

    proptest! {
        #[test]
        fn gram_matches_triple_loop(x in arb_matrix(), seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let w: Vec<f64> = (0..x.n_users()).map(|_| rng.random_range(0.1..2.0)).collect();
            let p = gram(&x, Some(&w)).unwrap();
            prop_assert!(p.max_abs_diff(&naive_gram(&x, Some(&w))) < 1e-12);
            prop_assert_eq!(p.max_asymmetry(), 0.0);
            let raw = gram(&x, None).unwrap();
            for (i, &d) in x.item_degrees().iter().enumerate() {
                prop_assert_eq!(raw.get(i, i), d as f64);
            }
        }

        #[test]
        fn gram_spectrum_is_nonnegative(x in arb_matrix()) {
            let s = eig_sym(&gram(&x, None).unwrap(), "gram").unwrap();
            let scale = s.eigenvalues.first().copied().unwrap_or(0.0).max(1.0);
            prop_assert!(s.eigenvalues.iter().all(|&v| v >= -1e-10 * scale));
        }
    }
}
