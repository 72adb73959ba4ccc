//! Dense real matrices, the matrix norms used for the lifted coefficients,
//! and eigenvalue routines sized for small mode matrices.
//!
//! Symmetric eigenvalues come from cyclic Jacobi rotations. General
//! eigenvalue magnitudes (for spectral radii of monodromy matrices) come from
//! balancing, Hessenberg reduction and the Francis double-shift QR iteration.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest dimension accepted by the eigenvalue routines.
pub const MAX_EIGEN_DIM: usize = 64;

const JACOBI_THRESHOLD: f64 = 1e-14;
const JACOBI_MAX_SWEEPS: usize = 100;
const CHOLESKY_PIVOT_RATIO: f64 = 1e-12;

/// Row-major dense matrix with finite entries.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Dimension(format!(
                "matrix must be non-empty, got {rows}x{cols}"
            )));
        }
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite entry at ({}, {})",
                pos / cols,
                pos % cols
            )));
        }
        Ok(Mat { rows, cols, data })
    }

    /// Builds a matrix from row slices; every row must have the same length.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let nrows = rows.len();
        let ncols = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(nrows * ncols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != ncols {
                return Err(Error::Dimension(format!(
                    "row {i} has {} entries, expected {ncols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Mat::new(nrows, ncols, data)
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix must be non-empty");
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
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

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn transpose(&self) -> Mat {
        let mut t = Mat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j * self.rows + i] = self.get(i, j);
            }
        }
        t
    }

    pub fn scale(&self, factor: f64) -> Mat {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * factor).collect(),
        }
    }

    pub fn add(&self, other: &Mat) -> Result<Mat> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Mat) -> Result<Mat> {
        self.zip_with(other, |a, b| a - b)
    }

    fn zip_with(&self, other: &Mat, f: impl Fn(f64, f64) -> f64) -> Result<Mat> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::Dimension(format!(
                "{}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(Mat {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    /// Writes `self * rhs` into `out` without allocating. Dimensions are the
    /// caller's responsibility.
    #[inline]
    pub fn mul_into(&self, rhs: &Mat, out: &mut Mat) {
        debug_assert_eq!(self.cols, rhs.rows);
        debug_assert_eq!(out.rows, self.rows);
        debug_assert_eq!(out.cols, rhs.cols);
        let (n, k, m) = (self.rows, self.cols, rhs.cols);
        for i in 0..n {
            let orow = &mut out.data[i * m..(i + 1) * m];
            orow.iter_mut().for_each(|v| *v = 0.0);
            for p in 0..k {
                let a = self.data[i * k + p];
                let brow = &rhs.data[p * m..(p + 1) * m];
                for (o, &b) in orow.iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(self.cols, x.len());
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// True when every entry is exactly zero.
    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0)
    }

    fn max_abs_asymmetry(&self) -> f64 {
        let n = self.rows;
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst
    }
}

impl fmt::Debug for Mat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.to_rows()).finish()
    }
}

impl TryFrom<Vec<Vec<f64>>> for Mat {
    type Error = Error;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        Mat::from_rows(&rows)
    }
}

impl From<Mat> for Vec<Vec<f64>> {
    fn from(m: Mat) -> Self {
        m.to_rows()
    }
}

/// Standard matrix product.
pub fn mat_mul(a: &Mat, b: &Mat) -> Result<Mat> {
    if a.cols != b.rows {
        return Err(Error::Dimension(format!(
            "cannot multiply {}x{} by {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let mut out = Mat::zeros(a.rows, b.cols);
    a.mul_into(b, &mut out);
    Ok(out)
}

/// The matrix norm used to score lifted products.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "NormSpec", into = "NormSpec")]
pub enum NormKind {
    /// Maximum absolute column sum.
    One,
    /// Maximum absolute row sum.
    Infinity,
    /// Largest singular value.
    Spectral,
    Frobenius,
    /// Norm induced by `|x|_P = sqrt(x' P x)`.
    Weighted(WeightedNorm),
}

impl NormKind {
    pub fn weighted(p: Mat) -> Result<Self> {
        Ok(NormKind::Weighted(WeightedNorm::new(p)?))
    }

    pub fn name(&self) -> &'static str {
        match self {
            NormKind::One => "one",
            NormKind::Infinity => "inf",
            NormKind::Spectral => "spectral",
            NormKind::Frobenius => "frobenius",
            NormKind::Weighted(_) => "weighted",
        }
    }

    /// Parses the config names `one`, `inf`, `spectral` and `frobenius`.
    /// The weighted norm needs a matrix and goes through [`NormKind::weighted`].
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "one" => Ok(NormKind::One),
            "inf" => Ok(NormKind::Infinity),
            "spectral" => Ok(NormKind::Spectral),
            "frobenius" => Ok(NormKind::Frobenius),
            "weighted" => Err(Error::InvalidInput(
                "the weighted norm requires a weight matrix".into(),
            )),
            other => Err(Error::InvalidInput(format!("unknown norm '{other}'"))),
        }
    }
}

/// Serialized shape of a [`NormKind`].
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum NormSpec {
    One,
    Inf,
    Spectral,
    Frobenius,
    Weighted { p: Mat },
}

impl TryFrom<NormSpec> for NormKind {
    type Error = Error;

    fn try_from(spec: NormSpec) -> Result<Self> {
        Ok(match spec {
            NormSpec::One => NormKind::One,
            NormSpec::Inf => NormKind::Infinity,
            NormSpec::Spectral => NormKind::Spectral,
            NormSpec::Frobenius => NormKind::Frobenius,
            NormSpec::Weighted { p } => NormKind::weighted(p)?,
        })
    }
}

impl From<NormKind> for NormSpec {
    fn from(k: NormKind) -> Self {
        match k {
            NormKind::One => NormSpec::One,
            NormKind::Infinity => NormSpec::Inf,
            NormKind::Spectral => NormSpec::Spectral,
            NormKind::Frobenius => NormSpec::Frobenius,
            NormKind::Weighted(w) => NormSpec::Weighted { p: w.p },
        }
    }
}

/// SPD weight `P = L L'` with the factors needed to evaluate `|L' M L^-T|_2`.
#[derive(Clone, Debug)]
pub struct WeightedNorm {
    p: Mat,
    l_t: Mat,
    l_inv_t: Mat,
}

impl PartialEq for WeightedNorm {
    fn eq(&self, other: &Self) -> bool {
        self.p == other.p
    }
}

impl WeightedNorm {
    pub fn new(p: Mat) -> Result<Self> {
        if !p.is_square() {
            return Err(Error::Dimension("weight matrix must be square".into()));
        }
        let scale = p.data.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
        if p.max_abs_asymmetry() > 1e-12 * scale {
            return Err(Error::NotPositiveDefinite("weight is not symmetric".into()));
        }
        let l = cholesky(&p)?;
        let l_inv = lower_triangular_inverse(&l);
        Ok(WeightedNorm {
            l_t: l.transpose(),
            l_inv_t: l_inv.transpose(),
            p,
        })
    }

    pub fn p(&self) -> &Mat {
        &self.p
    }

    /// `L' M L^-T`, whose spectral norm is the weighted norm of `m`.
    pub fn transform(&self, m: &Mat) -> Result<Mat> {
        if m.rows != self.p.rows || m.cols != self.p.rows {
            return Err(Error::Dimension(format!(
                "weight is {0}x{0}, matrix is {1}x{2}",
                self.p.rows, m.rows, m.cols
            )));
        }
        let tmp = mat_mul(&self.l_t, m)?;
        mat_mul(&tmp, &self.l_inv_t)
    }
}

/// Lower Cholesky factor of an SPD matrix. A pivot below
/// `1e-12 * max diagonal` rejects the matrix.
pub fn cholesky(p: &Mat) -> Result<Mat> {
    if !p.is_square() {
        return Err(Error::Dimension("cholesky needs a square matrix".into()));
    }
    let n = p.rows;
    let max_diag = (0..n).map(|i| p.get(i, i)).fold(f64::NEG_INFINITY, f64::max);
    if max_diag <= 0.0 {
        return Err(Error::NotPositiveDefinite("non-positive diagonal".into()));
    }
    let floor = CHOLESKY_PIVOT_RATIO * max_diag;
    let mut l = Mat::zeros(n, n);
    for j in 0..n {
        let mut d = p.get(j, j);
        for k in 0..j {
            d -= l.get(j, k) * l.get(j, k);
        }
        if d < floor {
            return Err(Error::NotPositiveDefinite(format!(
                "pivot {j} is {d:e}, below {floor:e}"
            )));
        }
        let djj = d.sqrt();
        l.set(j, j, djj);
        for i in (j + 1)..n {
            let mut s = p.get(i, j);
            for k in 0..j {
                s -= l.get(i, k) * l.get(j, k);
            }
            l.set(i, j, s / djj);
        }
    }
    Ok(l)
}

fn lower_triangular_inverse(l: &Mat) -> Mat {
    let n = l.rows;
    let mut inv = Mat::zeros(n, n);
    for col in 0..n {
        // forward substitution for L x = e_col
        for i in col..n {
            let mut s = if i == col { 1.0 } else { 0.0 };
            for k in col..i {
                s -= l.get(i, k) * inv.get(k, col);
            }
            inv.set(i, col, s / l.get(i, i));
        }
    }
    inv
}

/// Evaluates a matrix norm.
pub fn mat_norm(m: &Mat, kind: &NormKind) -> Result<f64> {
    let mut ev = NormEvaluator::new(kind.clone(), m.rows.max(m.cols));
    ev.norm(m)
}

/// Reusable norm evaluation with scratch space, for hot enumeration loops.
#[derive(Debug, Clone)]
pub struct NormEvaluator {
    kind: NormKind,
    gram: Vec<f64>,
}

impl NormEvaluator {
    pub fn new(kind: NormKind, dim_hint: usize) -> Self {
        NormEvaluator {
            kind,
            gram: Vec::with_capacity(dim_hint * dim_hint),
        }
    }

    pub fn kind(&self) -> &NormKind {
        &self.kind
    }

    pub fn norm(&mut self, m: &Mat) -> Result<f64> {
        match &self.kind {
            NormKind::One => Ok((0..m.cols)
                .map(|j| (0..m.rows).map(|i| m.get(i, j).abs()).sum::<f64>())
                .fold(0.0, f64::max)),
            NormKind::Infinity => Ok((0..m.rows)
                .map(|i| m.row(i).iter().map(|v| v.abs()).sum::<f64>())
                .fold(0.0, f64::max)),
            NormKind::Frobenius => Ok(m.data.iter().map(|v| v * v).sum::<f64>().sqrt()),
            NormKind::Spectral => spectral_norm_with(m, &mut self.gram),
            NormKind::Weighted(w) => {
                let t = w.transform(m)?;
                spectral_norm_with(&t, &mut self.gram)
            }
        }
    }
}

fn spectral_norm_with(m: &Mat, gram: &mut Vec<f64>) -> Result<f64> {
    let n = m.cols;
    if n > MAX_EIGEN_DIM {
        return Err(Error::Dimension(format!(
            "dimension {n} exceeds eigen solver cap {MAX_EIGEN_DIM}"
        )));
    }
    gram.clear();
    gram.resize(n * n, 0.0);
    for i in 0..n {
        for j in i..n {
            let mut s = 0.0;
            for k in 0..m.rows {
                s += m.get(k, i) * m.get(k, j);
            }
            gram[i * n + j] = s;
            gram[j * n + i] = s;
        }
    }
    jacobi_in_place(gram, n);
    let lmax = (0..n).map(|i| gram[i * n + i]).fold(0.0f64, f64::max);
    Ok(lmax.max(0.0).sqrt())
}

/// Eigenvalues of a symmetric matrix, ascending.
pub fn symmetric_eigenvalues(m: &Mat) -> Result<Vec<f64>> {
    if !m.is_square() {
        return Err(Error::Dimension("symmetric eigenvalues need a square matrix".into()));
    }
    if m.rows > MAX_EIGEN_DIM {
        return Err(Error::Dimension(format!(
            "dimension {} exceeds eigen solver cap {MAX_EIGEN_DIM}",
            m.rows
        )));
    }
    let n = m.rows;
    let mut a = m.data.clone();
    // symmetrize to absorb rounding asymmetry
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (a[i * n + j] + a[j * n + i]);
            a[i * n + j] = avg;
            a[j * n + i] = avg;
        }
    }
    jacobi_in_place(&mut a, n);
    let mut eig: Vec<f64> = (0..n).map(|i| a[i * n + i]).collect();
    eig.sort_by(f64::total_cmp);
    Ok(eig)
}

/// Cyclic Jacobi sweeps; on return the diagonal holds the eigenvalues.
fn jacobi_in_place(a: &mut [f64], n: usize) {
    let total: f64 = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    if total == 0.0 {
        return;
    }
    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += a[i * n + j] * a[i * n + j];
            }
        }
        if off.sqrt() <= JACOBI_THRESHOLD * total {
            return;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta.abs() > 1e150 {
                    0.5 / theta
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                let tau = s / (1.0 + c);
                a[p * n + p] = app - t * apq;
                a[q * n + q] = aqq + t * apq;
                a[p * n + q] = 0.0;
                a[q * n + p] = 0.0;
                for r in 0..n {
                    if r == p || r == q {
                        continue;
                    }
                    let g = a[r * n + p];
                    let h = a[r * n + q];
                    let rp = g - s * (h + g * tau);
                    let rq = h + s * (g - h * tau);
                    a[r * n + p] = rp;
                    a[p * n + r] = rp;
                    a[r * n + q] = rq;
                    a[q * n + r] = rq;
                }
            }
        }
    }
}

/// Magnitude of the largest-magnitude eigenvalue.
pub fn spectral_radius(m: &Mat) -> Result<f64> {
    Ok(eigenvalues(m)?
        .into_iter()
        .map(|(re, im)| re.hypot(im))
        .fold(0.0, f64::max))
}

/// All eigenvalues of a general real matrix as `(re, im)` pairs, unordered.
pub fn eigenvalues(m: &Mat) -> Result<Vec<(f64, f64)>> {
    if !m.is_square() {
        return Err(Error::Dimension("eigenvalues need a square matrix".into()));
    }
    let n = m.rows;
    if n > MAX_EIGEN_DIM {
        return Err(Error::Dimension(format!(
            "dimension {n} exceeds eigen solver cap {MAX_EIGEN_DIM}"
        )));
    }
    if n == 1 {
        return Ok(vec![(m.data[0], 0.0)]);
    }
    let mut a: Vec<Vec<f64>> = m.to_rows();
    balance(&mut a);
    reduce_to_hessenberg(&mut a);
    hessenberg_qr(&mut a)
}

fn balance(a: &mut [Vec<f64>]) {
    const RADIX: f64 = 2.0;
    let n = a.len();
    let sqrdx = RADIX * RADIX;
    let mut done = false;
    while !done {
        done = true;
        for i in 0..n {
            let mut r = 0.0;
            let mut c = 0.0;
            for j in 0..n {
                if j != i {
                    c += a[j][i].abs();
                    r += a[i][j].abs();
                }
            }
            if c != 0.0 && r != 0.0 {
                let mut g = r / RADIX;
                let mut f = 1.0;
                let s = c + r;
                while c < g {
                    f *= RADIX;
                    c *= sqrdx;
                }
                g = r * RADIX;
                while c > g {
                    f /= RADIX;
                    c /= sqrdx;
                }
                if (c + r) / f < 0.95 * s {
                    done = false;
                    let ginv = 1.0 / f;
                    for j in 0..n {
                        a[i][j] *= ginv;
                    }
                    for row in a.iter_mut() {
                        row[i] *= f;
                    }
                }
            }
        }
    }
}

/// Gaussian elimination with pivoting to upper Hessenberg form; entries
/// below the subdiagonal are cleared on return.
fn reduce_to_hessenberg(a: &mut [Vec<f64>]) {
    let n = a.len();
    for m in 1..n.saturating_sub(1) {
        let mut x: f64 = 0.0;
        let mut piv = m;
        for j in m..n {
            if a[j][m - 1].abs() > x.abs() {
                x = a[j][m - 1];
                piv = j;
            }
        }
        if piv != m {
            for j in (m - 1)..n {
                let tmp = a[piv][j];
                a[piv][j] = a[m][j];
                a[m][j] = tmp;
            }
            for row in a.iter_mut() {
                row.swap(piv, m);
            }
        }
        if x != 0.0 {
            for i in (m + 1)..n {
                let mut y = a[i][m - 1];
                if y != 0.0 {
                    y /= x;
                    a[i][m - 1] = y;
                    for j in m..n {
                        a[i][j] -= y * a[m][j];
                    }
                    for row in a.iter_mut() {
                        row[m] += y * row[i];
                    }
                }
            }
        }
    }
    for i in 2..n {
        for j in 0..(i - 1) {
            a[i][j] = 0.0;
        }
    }
}

/// Francis double-shift QR on an upper Hessenberg matrix.
fn hessenberg_qr(a: &mut [Vec<f64>]) -> Result<Vec<(f64, f64)>> {
    let n = a.len();
    let eps = f64::EPSILON;
    let mut out = vec![(0.0, 0.0); n];
    let mut anorm = 0.0;
    for i in 0..n {
        for j in i.saturating_sub(1)..n {
            anorm += a[i][j].abs();
        }
    }
    let mut nn = n as isize - 1;
    let mut t = 0.0;
    while nn >= 0 {
        let mut its = 0;
        loop {
            let nu = nn as usize;
            // look for a small subdiagonal element
            let mut l = nu;
            while l > 0 {
                let mut s = a[l - 1][l - 1].abs() + a[l][l].abs();
                if s == 0.0 {
                    s = anorm;
                }
                if a[l][l - 1].abs() <= eps * s {
                    a[l][l - 1] = 0.0;
                    break;
                }
                l -= 1;
            }
            let mut x = a[nu][nu];
            if l == nu {
                out[nu] = (x + t, 0.0);
                nn -= 1;
                break;
            }
            let mut y = a[nu - 1][nu - 1];
            let mut w = a[nu][nu - 1] * a[nu - 1][nu];
            if l == nu - 1 {
                let p = 0.5 * (y - x);
                let q = p * p + w;
                let mut z = q.abs().sqrt();
                x += t;
                if q >= 0.0 {
                    z = p + z.copysign(p);
                    let hi = x + z;
                    let lo = if z != 0.0 { x - w / z } else { hi };
                    out[nu - 1] = (hi, 0.0);
                    out[nu] = (lo, 0.0);
                } else {
                    out[nu] = (x + p, -z);
                    out[nu - 1] = (x + p, z);
                }
                nn -= 2;
                break;
            }
            if its == 60 {
                return Err(Error::NoConvergence);
            }
            if its == 10 || its == 20 || its == 40 {
                // exceptional shift
                t += x;
                for (i, row) in a.iter_mut().enumerate().take(nu + 1) {
                    row[i] -= x;
                }
                let s = a[nu][nu - 1].abs() + a[nu - 1][nu - 2].abs();
                x = 0.75 * s;
                y = x;
                w = -0.4375 * s * s;
            }
            its += 1;
            let mut m = nu - 2;
            let (mut p, mut q, mut r);
            loop {
                let z = a[m][m];
                let rr = x - z;
                let ss = y - z;
                p = (rr * ss - w) / a[m + 1][m] + a[m][m + 1];
                q = a[m + 1][m + 1] - z - rr - ss;
                r = a[m + 2][m + 1];
                let s = p.abs() + q.abs() + r.abs();
                p /= s;
                q /= s;
                r /= s;
                if m == l {
                    break;
                }
                let u = a[m][m - 1].abs() * (q.abs() + r.abs());
                let v = p.abs() * (a[m - 1][m - 1].abs() + z.abs() + a[m + 1][m + 1].abs());
                if u <= eps * v {
                    break;
                }
                m -= 1;
            }
            for i in m..(nu - 1) {
                a[i + 2][i] = 0.0;
                if i != m {
                    a[i + 2][i - 1] = 0.0;
                }
            }
            let mut k = m;
            while k < nu {
                if k != m {
                    p = a[k][k - 1];
                    q = a[k + 1][k - 1];
                    r = if k + 1 != nu { a[k + 2][k - 1] } else { 0.0 };
                    x = p.abs() + q.abs() + r.abs();
                    if x != 0.0 {
                        p /= x;
                        q /= x;
                        r /= x;
                    }
                }
                let s = (p * p + q * q + r * r).sqrt().copysign(p);
                if s != 0.0 {
                    if k == m {
                        if l != m {
                            a[k][k - 1] = -a[k][k - 1];
                        }
                    } else {
                        a[k][k - 1] = -s * x;
                    }
                    p += s;
                    x = p / s;
                    y = q / s;
                    let z = r / s;
                    q /= p;
                    r /= p;
                    for j in k..=nu {
                        let mut pp = a[k][j] + q * a[k + 1][j];
                        if k + 1 != nu {
                            pp += r * a[k + 2][j];
                            a[k + 2][j] -= pp * z;
                        }
                        a[k + 1][j] -= pp * y;
                        a[k][j] -= pp * x;
                    }
                    let mmin = if nu < k + 3 { nu } else { k + 3 };
                    for row in a.iter_mut().take(mmin + 1).skip(l) {
                        let mut pp = x * row[k] + y * row[k + 1];
                        if k + 1 != nu {
                            pp += z * row[k + 2];
                            row[k + 2] -= pp * r;
                        }
                        row[k + 1] -= pp * q;
                        row[k] -= pp;
                    }
                }
                k += 1;
            }
        }
    }
    Ok(out)
}

/// Gaussian elimination with partial pivoting; the solution overwrites `b`.
pub(crate) fn solve_dense(a: &mut [f64], b: &mut [f64], n: usize) -> Result<()> {
    for c in 0..n {
        let p = (c..n)
            .max_by(|&i, &j| a[i * n + c].abs().total_cmp(&a[j * n + c].abs()))
            .unwrap();
        if a[p * n + c].abs() < 1e-14 {
            return Err(Error::Inconsistent("linear system is singular".into()));
        }
        if p != c {
            for k in 0..n {
                a.swap(p * n + k, c * n + k);
            }
            b.swap(p, c);
        }
        let piv = a[c * n + c];
        for i in (c + 1)..n {
            let f = a[i * n + c] / piv;
            if f == 0.0 {
                continue;
            }
            for k in c..n {
                a[i * n + k] -= f * a[c * n + k];
            }
            b[i] -= f * b[c];
        }
    }
    for c in (0..n).rev() {
        let mut s = b[c];
        for k in (c + 1)..n {
            s -= a[c * n + k] * b[k];
        }
        b[c] = s / a[c * n + c];
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn m(rows: &[&[f64]]) -> Mat {
        Mat::from_rows(rows).unwrap()
    }

    #[test]
    fn identity_product() {
        let a = m(&[&[0.3, -1.0], &[2.0, 5.5]]);
        assert_eq!(mat_mul(&Mat::identity(2), &a).unwrap(), a);
    }

    #[test]
    fn hand_products() {
        let a1 = m(&[&[0.0, 1.0], &[0.0, 0.0]]);
        let a2 = m(&[&[0.0, 1.0], &[2.0, 1.0]]);
        assert_eq!(mat_mul(&a1, &a2).unwrap(), m(&[&[2.0, 1.0], &[0.0, 0.0]]));
        assert_eq!(mat_mul(&a2, &a2).unwrap(), m(&[&[2.0, 1.0], &[2.0, 3.0]]));
    }

    #[test]
    fn mul_rejects_mismatch() {
        let a = Mat::zeros(2, 3);
        assert!(matches!(mat_mul(&a, &a), Err(Error::Dimension(_))));
    }

    #[test]
    fn construction_rejects_nan_and_bad_counts() {
        assert!(Mat::new(2, 2, vec![1.0, f64::NAN, 0.0, 0.0]).is_err());
        assert!(Mat::new(2, 2, vec![1.0]).is_err());
        assert!(Mat::from_rows(&[vec![1.0, 2.0], vec![3.0]]).is_err());
    }

    #[test]
    fn norm_values() {
        let eye = Mat::identity(3);
        assert!((mat_norm(&eye, &NormKind::Spectral).unwrap() - 1.0).abs() < 1e-15);
        let g21 = m(&[&[2.0, 1.0], &[0.0, 0.0]]);
        let s = mat_norm(&g21, &NormKind::Spectral).unwrap();
        assert!((s - 5f64.sqrt()).abs() < 1e-14);
        assert!((s.ln() - 0.8047).abs() < 1e-4);
        let g22 = m(&[&[2.0, 1.0], &[2.0, 3.0]]);
        assert!((mat_norm(&g22, &NormKind::Frobenius).unwrap() - 18f64.sqrt()).abs() < 1e-14);
        let expected = ((18.0 + 260f64.sqrt()) / 2.0).sqrt();
        assert!((mat_norm(&g22, &NormKind::Spectral).unwrap() - expected).abs() < 1e-13);
        assert!((expected - 4.13065).abs() < 1e-5);
        assert_eq!(mat_norm(&g22, &NormKind::One).unwrap(), 4.0);
        assert_eq!(mat_norm(&g22, &NormKind::Infinity).unwrap(), 5.0);
    }

    #[test]
    fn weighted_identity_matches_spectral() {
        let w = NormKind::weighted(Mat::identity(2)).unwrap();
        let a = m(&[&[1.0, 0.1], &[-0.5, 1.1]]);
        let lhs = mat_norm(&a, &w).unwrap();
        let rhs = mat_norm(&a, &NormKind::Spectral).unwrap();
        assert!((lhs - rhs).abs() < 1e-14);
    }

    #[test]
    fn weighted_norm_is_induced_by_p_norm() {
        // For every x, |Ax|_P <= |A|_P |x|_P, with equality approached on a grid.
        let p = m(&[&[2.0, 0.3], &[0.3, 0.5]]);
        let w = NormKind::weighted(p.clone()).unwrap();
        let a = m(&[&[1.0, 0.1], &[-0.5, 1.1]]);
        let na = mat_norm(&a, &w).unwrap();
        let pnorm = |x: &[f64]| {
            let px = p.mul_vec(x);
            (x[0] * px[0] + x[1] * px[1]).sqrt()
        };
        let mut best: f64 = 0.0;
        for k in 0..20000 {
            let th = k as f64 * std::f64::consts::PI / 20000.0;
            let x = [th.cos(), th.sin()];
            let ratio = pnorm(&a.mul_vec(&x)) / pnorm(&x);
            assert!(ratio <= na * (1.0 + 1e-12));
            best = best.max(ratio);
        }
        assert!((best - na).abs() < 1e-6);
    }

    #[test]
    fn weighted_rejects_non_spd() {
        assert!(matches!(
            NormKind::weighted(m(&[&[1.0, 2.0], &[2.0, 1.0]])),
            Err(Error::NotPositiveDefinite(_))
        ));
        assert!(NormKind::weighted(m(&[&[1.0, 0.5], &[0.0, 1.0]])).is_err());
        let w = NormKind::weighted(Mat::identity(3)).unwrap();
        assert!(mat_norm(&Mat::identity(2), &w).is_err());
    }

    #[test]
    fn spectral_radius_examples() {
        let a2 = m(&[&[0.0, 1.0], &[2.0, 1.0]]);
        assert!((spectral_radius(&a2).unwrap() - 2.0).abs() < 1e-12);
        assert_eq!(spectral_radius(&Mat::zeros(3, 3)).unwrap(), 0.0);
        let half = Mat::identity(3).scale(0.5);
        assert!((spectral_radius(&half).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn spectral_radius_of_rotation_and_companion() {
        // rotation by 0.3 rad scaled by 0.9: complex pair of modulus 0.9
        let (c, s) = (0.3f64.cos(), 0.3f64.sin());
        let r = m(&[&[0.9 * c, -0.9 * s], &[0.9 * s, 0.9 * c]]);
        assert!((spectral_radius(&r).unwrap() - 0.9).abs() < 1e-12);
        // companion matrix of (x-1)(x+3)(x-0.5)(x+0.25)
        // = x^4 + 1.75x^3 - 3.125x^2 + 0.625x... computed via roots
        let roots = [1.0, -3.0, 0.5, -0.25];
        let mut poly = vec![1.0];
        for r in roots {
            let mut next = vec![0.0; poly.len() + 1];
            for (i, c) in poly.iter().enumerate() {
                next[i] += c;
                next[i + 1] -= c * r;
            }
            poly = next;
        }
        let n = 4;
        let mut comp = Mat::zeros(n, n);
        for j in 0..n {
            comp.set(0, j, -poly[j + 1]);
        }
        for i in 1..n {
            comp.set(i, i - 1, 1.0);
        }
        let rad = spectral_radius(&comp).unwrap();
        assert!((rad - 3.0).abs() < 1e-9 * 3.0);
    }

    #[test]
    fn spectral_radius_similarity_oracle() {
        // M = S D S^-1 with known diagonal D
        let s = m(&[&[1.0, 2.0, 0.0], &[0.0, 1.0, -1.0], &[1.0, 0.0, 1.0]]);
        // inverse computed by hand: det = 1*(1) - 2*(0+1) + 0 = -1
        let s_inv = m(&[&[-1.0, 2.0, 2.0], &[1.0, -1.0, -1.0], &[1.0, -2.0, -1.0]]);
        assert!(mat_mul(&s, &s_inv)
            .unwrap()
            .sub(&Mat::identity(3))
            .unwrap()
            .data()
            .iter()
            .all(|v| v.abs() < 1e-14));
        let d = m(&[&[0.7, 0.0, 0.0], &[0.0, -1.3, 0.0], &[0.0, 0.0, 0.2]]);
        let mm = mat_mul(&mat_mul(&s, &d).unwrap(), &s_inv).unwrap();
        assert!((spectral_radius(&mm).unwrap() - 1.3).abs() < 1e-12);
    }

    #[test]
    fn zero_test_is_exact() {
        assert!(Mat::zeros(2, 2).is_zero());
        assert!(!m(&[&[0.0, 1e-300], &[0.0, 0.0]]).is_zero());
    }

    fn arb_square() -> impl Strategy<Value = Mat> {
        (2usize..=6).prop_flat_map(|n| {
            proptest::collection::vec(-3.0f64..3.0, n * n)
                .prop_map(move |d| Mat::new(n, n, d).unwrap())
        })
    }

    fn all_kinds() -> Vec<NormKind> {
        vec![
            NormKind::One,
            NormKind::Infinity,
            NormKind::Spectral,
            NormKind::Frobenius,
        ]
    }

    proptest! {
        #[test]
        fn submultiplicative(a in arb_square(), seed in proptest::collection::vec(-3.0f64..3.0, 36)) {
            let n = a.rows();
            let b = Mat::new(n, n, seed[..n * n].to_vec()).unwrap();
            let ab = mat_mul(&a, &b).unwrap();
            let mut p = Mat::identity(n).scale(2.0);
            p.set(0, n - 1, 0.4);
            p.set(n - 1, 0, 0.4);
            let mut kinds = all_kinds();
            kinds.push(NormKind::weighted(p).unwrap());
            for k in kinds {
                let (na, nb, nab) = (mat_norm(&a, &k).unwrap(), mat_norm(&b, &k).unwrap(), mat_norm(&ab, &k).unwrap());
                prop_assert!(nab <= na * nb + 1e-9 * na * nb);
            }
        }

        #[test]
        fn radius_below_every_norm(a in arb_square()) {
            let rad = spectral_radius(&a).unwrap();
            for k in all_kinds() {
                let nk = mat_norm(&a, &k).unwrap();
                prop_assert!(rad <= nk * (1.0 + 1e-9) + 1e-12, "{} > {} for {:?}", rad, nk, k);
            }
        }

        #[test]
        fn radius_matches_symmetric_solver(a in arb_square()) {
            let sym = a.add(&a.transpose()).unwrap();
            let eig = symmetric_eigenvalues(&sym).unwrap();
            let expected = eig.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let rad = spectral_radius(&sym).unwrap();
            prop_assert!((rad - expected).abs() <= 1e-9 * expected.max(1e-300));
        }

        #[test]
        fn norm_positivity(a in arb_square()) {
            for k in all_kinds() {
                let v = mat_norm(&a, &k).unwrap();
                prop_assert_eq!(v == 0.0, a.is_zero());
            }
        }
    }
}
