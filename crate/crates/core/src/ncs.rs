//! Networked control loops under jamming, expressed as switched systems.
//!
//! A plant `x(t+1) = A x(t) + B u(t)` receives state feedback over channels
//! whose transmissions may fail. With one delay-free channel the loop switches
//! between `A + BK` (delivered) and `A` (lost). With an extra one-step-delayed
//! channel the augmented state `[x(t+1); x(t)]` switches among three modes.

use serde::{Deserialize, Serialize};

use crate::certify::{certify, Verdict};
use crate::error::{Error, Result};
use crate::matlib::{cholesky, mat_mul, mat_norm, solve_dense, symmetric_eigenvalues, Mat, NormKind};
use crate::model::{ActivationBounds, SwitchedSystem};

/// Slack on minimum eigenvalues in the semidefinite checks.
pub const PSD_SLACK: f64 = 1e-9;
/// Relative inflation of `|A+BK|_P^2` when choosing `beta`, so the
/// semidefinite check is not decided by rounding.
pub const BETA_INFLATION: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPlant", into = "RawPlant")]
pub struct Plant {
    a: Mat,
    b: Mat,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawPlant {
    pub a: Mat,
    pub b: Mat,
}

impl Plant {
    pub fn new(a: Mat, b: Mat) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::Dimension(format!("A is {}x{}", a.rows(), a.cols())));
        }
        if b.rows() != a.rows() {
            return Err(Error::Dimension(format!(
                "B has {} rows, A has {}",
                b.rows(),
                a.rows()
            )));
        }
        Ok(Plant { a, b })
    }

    pub fn a(&self) -> &Mat {
        &self.a
    }

    pub fn b(&self) -> &Mat {
        &self.b
    }

    pub fn state_dim(&self) -> usize {
        self.a.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.cols()
    }

    /// `A + B K` after checking that `K` is `m x n`.
    pub fn closed_loop(&self, k: &Mat) -> Result<Mat> {
        self.bk(k)?.add(&self.a)
    }

    fn bk(&self, k: &Mat) -> Result<Mat> {
        if k.rows() != self.input_dim() || k.cols() != self.state_dim() {
            return Err(Error::Dimension(format!(
                "gain is {}x{}, expected {}x{}",
                k.rows(),
                k.cols(),
                self.input_dim(),
                self.state_dim()
            )));
        }
        mat_mul(&self.b, k)
    }
}

impl TryFrom<RawPlant> for Plant {
    type Error = Error;

    fn try_from(r: RawPlant) -> Result<Self> {
        Plant::new(r.a, r.b)
    }
}

impl From<Plant> for RawPlant {
    fn from(p: Plant) -> Self {
        RawPlant { a: p.a, b: p.b }
    }
}

/// Bounds `lower <= liminf` and `limsup <= upper` on the average of a 0/1 signal.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BinaryBounds {
    lower: f64,
    upper: f64,
}

impl BinaryBounds {
    pub fn new(lower: f64, upper: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&lower) || !(0.0..=1.0).contains(&upper) || lower > upper {
            return Err(Error::InvalidInput(format!(
                "binary bounds [{lower}, {upper}] violate 0 <= lower <= upper <= 1"
            )));
        }
        Ok(BinaryBounds { lower, upper })
    }

    pub fn lower(&self) -> f64 {
        self.lower
    }

    pub fn upper(&self) -> f64 {
        self.upper
    }

    /// Bounds on the complement signal `1 - l(t)`.
    pub fn complement(&self) -> BinaryBounds {
        BinaryBounds {
            lower: 1.0 - self.upper,
            upper: 1.0 - self.lower,
        }
    }
}

/// Bounds on the product `l1(t) l2(t)` of two 0/1 signals.
pub fn combine_binary_bounds(b1: BinaryBounds, b2: BinaryBounds) -> BinaryBounds {
    BinaryBounds {
        lower: (b1.lower + b2.lower - 1.0).max(0.0),
        upper: b1.upper.min(b2.upper),
    }
}

/// Failure-rate bounds on the delay-free (`n`) and one-step-delayed (`d`) channels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelBounds {
    pub sigma_n: f64,
    pub rho_n: f64,
    pub sigma_d: f64,
    pub rho_d: f64,
}

impl ChannelBounds {
    pub fn new(sigma_n: f64, rho_n: f64, sigma_d: f64, rho_d: f64) -> Result<Self> {
        BinaryBounds::new(sigma_n, rho_n)?;
        BinaryBounds::new(sigma_d, rho_d)?;
        Ok(ChannelBounds {
            sigma_n,
            rho_n,
            sigma_d,
            rho_d,
        })
    }
}

/// Activation bounds of the three two-channel modes. Mode 1 is `1 - l_n`,
/// mode 2 is `l_n (1 - l_d)`, mode 3 is `l_n l_d`.
pub fn two_channel_bounds(c: ChannelBounds) -> Result<ActivationBounds> {
    let n = BinaryBounds::new(c.sigma_n, c.rho_n)?;
    let d = BinaryBounds::new(c.sigma_d, c.rho_d)?;
    let m1 = n.complement();
    let m2 = combine_binary_bounds(n, d.complement());
    let m3 = combine_binary_bounds(n, d);
    ActivationBounds::new(
        vec![m1.lower, m2.lower, m3.lower],
        vec![m1.upper, m2.upper, m3.upper],
    )
}

/// Mode signal of the two-channel loop from per-step failure indicators.
pub fn two_channel_mode_signal(l_n: &[bool], l_d: &[bool]) -> Result<Vec<usize>> {
    if l_n.len() != l_d.len() {
        return Err(Error::Dimension("channel failure signals differ in length".into()));
    }
    Ok(l_n
        .iter()
        .zip(l_d)
        .map(|(&n, &d)| match (n, d) {
            (false, _) => 1,
            (true, false) => 2,
            (true, true) => 3,
        })
        .collect())
}

/// Delay-free loop: mode 1 is `A + BK`, mode 2 is `A`, and at most a
/// fraction `rho` of attempts fail in the long run.
pub fn build_delay_free(plant: &Plant, k: &Mat, rho: f64) -> Result<(SwitchedSystem, ActivationBounds)> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::InvalidInput(format!("failure ratio {rho} outside [0, 1]")));
    }
    let system = SwitchedSystem::new(vec![plant.closed_loop(k)?, plant.a.clone()])?;
    let bounds = ActivationBounds::new(vec![1.0 - rho, 0.0], vec![1.0, rho])?;
    Ok((system, bounds))
}

/// Two-channel loop on the augmented state `[x(t+1); x(t)]`, with `u(0) = 0`.
pub fn build_two_channel(
    plant: &Plant,
    k_n: &Mat,
    k_d: &Mat,
    channels: ChannelBounds,
) -> Result<(SwitchedSystem, ActivationBounds)> {
    let n = plant.state_dim();
    let zero = Mat::zeros(n, n);
    let a1 = block_companion(&plant.closed_loop(k_n)?, &zero);
    let a2 = block_companion(&plant.a, &plant.bk(k_d)?);
    let a3 = block_companion(&plant.a, &zero);
    let system = SwitchedSystem::new(vec![a1, a2, a3])?;
    Ok((system, two_channel_bounds(channels)?))
}

/// `[[top_left, top_right], [I, 0]]`.
fn block_companion(top_left: &Mat, top_right: &Mat) -> Mat {
    let n = top_left.rows();
    let mut out = Mat::zeros(2 * n, 2 * n);
    for i in 0..n {
        for j in 0..n {
            out.set(i, j, top_left.get(i, j));
            out.set(i, n + j, top_right.get(i, j));
        }
        out.set(n + i, i, 1.0);
    }
    out
}

/// Quadratic Lyapunov data for the delay-free loop: `V(x) = x'Px` contracts
/// by `beta` when the input arrives and grows by at most `phi` otherwise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawLyapunov", into = "RawLyapunov")]
pub struct LyapunovCertificate {
    p: Mat,
    beta: f64,
    phi: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawLyapunov {
    pub p: Mat,
    pub beta: f64,
    pub phi: f64,
}

impl LyapunovCertificate {
    pub fn new(p: Mat, beta: f64, phi: f64) -> Result<Self> {
        if !(beta > 0.0 && beta < 1.0) {
            return Err(Error::InvalidInput(format!("beta = {beta} outside (0, 1)")));
        }
        if !(phi >= 1.0 && phi.is_finite()) {
            return Err(Error::InvalidInput(format!("phi = {phi} below 1")));
        }
        // validates symmetry and definiteness together
        NormKind::weighted(p.clone())?;
        Ok(LyapunovCertificate { p, beta, phi })
    }

    pub fn p(&self) -> &Mat {
        &self.p
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn phi(&self) -> f64 {
        self.phi
    }

    /// Largest failure ratio for which `(1-rho) ln beta + rho ln phi < 0`;
    /// the inequality holds exactly for ratios strictly below it.
    pub fn threshold(&self) -> f64 {
        let lb = self.beta.ln();
        let lp = self.phi.ln();
        -lb / (lp - lb)
    }
}

impl TryFrom<RawLyapunov> for LyapunovCertificate {
    type Error = Error;

    fn try_from(r: RawLyapunov) -> Result<Self> {
        LyapunovCertificate::new(r.p, r.beta, r.phi)
    }
}

impl From<LyapunovCertificate> for RawLyapunov {
    fn from(c: LyapunovCertificate) -> Self {
        RawLyapunov {
            p: c.p,
            beta: c.beta,
            phi: c.phi,
        }
    }
}

fn min_eigenvalue_of_gap(scale: f64, p: &Mat, m: &Mat) -> Result<f64> {
    // scale P - M'PM, symmetrized against rounding
    let mpm = mat_mul(&mat_mul(&m.transpose(), p)?, m)?;
    let g = p.scale(scale).sub(&mpm)?;
    let sym = g.add(&g.transpose())?.scale(0.5);
    Ok(symmetric_eigenvalues(&sym)?[0])
}

/// Both matrix inequalities (minimum eigenvalue at least `-PSD_SLACK`) and
/// the scalar inequality at failure ratio `rho`.
pub fn check_lyapunov(cert: &LyapunovCertificate, plant: &Plant, k: &Mat, rho: f64) -> Result<bool> {
    if cert.p.rows() != plant.state_dim() {
        return Err(Error::Dimension("P does not match the plant".into()));
    }
    let a1 = plant.closed_loop(k)?;
    let contract = min_eigenvalue_of_gap(cert.beta, &cert.p, &a1)? >= -PSD_SLACK;
    let growth = min_eigenvalue_of_gap(cert.phi, &cert.p, &plant.a)? >= -PSD_SLACK;
    let scalar = (1.0 - rho) * cert.beta.ln() + rho * cert.phi.ln() < 0.0;
    Ok(contract && growth && scalar)
}

/// Certifies the delay-free loop at `h = 1` under the `P`-weighted norm with
/// `epsilon = sqrt(beta)`. A certificate that fails [`check_lyapunov`] is an
/// error because it makes no claim.
pub fn lyapunov_implies_lp(cert: &LyapunovCertificate, plant: &Plant, k: &Mat, rho: f64) -> Result<bool> {
    if !check_lyapunov(cert, plant, k, rho)? {
        return Err(Error::InvalidInput(format!(
            "Lyapunov conditions do not hold at failure ratio {rho}"
        )));
    }
    let (system, bounds) = build_delay_free(plant, k, rho)?;
    let norm = NormKind::weighted(cert.p.clone())?;
    let c = certify(&system, &bounds, 1, &norm, cert.beta.sqrt())?;
    Ok(c.verdict == Verdict::CertifiedStable)
}

/// Tightest `beta` and `phi` for a given `P`, or `None` when the closed
/// loop does not contract in the `P`-norm.
pub fn certificate_for_weight(plant: &Plant, k: &Mat, p: Mat) -> Result<Option<LyapunovCertificate>> {
    let norm = NormKind::weighted(p.clone())?;
    let a1 = mat_norm(&plant.closed_loop(k)?, &norm)?;
    let a = mat_norm(&plant.a, &norm)?;
    let beta = a1 * a1 * (1.0 + BETA_INFLATION);
    if !(beta > 0.0 && beta < 1.0) {
        return Ok(None);
    }
    let phi = (a * a).max(1.0);
    Ok(Some(LyapunovCertificate::new(p, beta, phi)?))
}

/// Result of [`find_lyapunov_certificate`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LyapunovSearch {
    pub certificate: LyapunovCertificate,
    pub threshold: f64,
    pub evaluations: usize,
}

/// Searches `P = L L'` (log-diagonal Cholesky parameters) for the largest
/// failure-ratio threshold, starting from the identity and from the
/// discrete Lyapunov solution of the closed loop, with Nelder-Mead restarts.
pub fn find_lyapunov_certificate(plant: &Plant, k: &Mat) -> Result<LyapunovSearch> {
    let n = plant.state_dim();
    let a1 = plant.closed_loop(k)?;
    let mut evaluations = 0usize;
    let mut objective = |theta: &[f64]| -> f64 {
        evaluations += 1;
        let p = weight_from_params(theta, n);
        match certificate_for_weight(plant, k, p) {
            Ok(Some(c)) => -c.threshold(),
            _ => f64::INFINITY,
        }
    };
    let mut starts = vec![params_from_weight(&Mat::identity(n))?];
    if let Ok(p) = discrete_lyapunov(&a1) {
        if let Ok(t) = params_from_weight(&p) {
            starts.push(t);
        }
    }
    let mut best: Option<(Vec<f64>, f64)> = None;
    for start in starts {
        let mut x = start;
        let mut fx = objective(&x);
        for _ in 0..20 {
            let (nx, nf) = nelder_mead(&mut objective, &x, 0.5, 4000, 1e-15);
            let improved = fx - nf;
            x = nx;
            fx = nf;
            if improved <= 1e-13 {
                break;
            }
        }
        if best.as_ref().map_or(true, |(_, bf)| fx < *bf) {
            best = Some((x, fx));
        }
    }
    let (theta, f) = best.expect("at least one start");
    if !f.is_finite() {
        return Err(Error::NoConvergence);
    }
    let certificate = certificate_for_weight(plant, k, weight_from_params(&theta, n))?
        .ok_or(Error::NoConvergence)?;
    Ok(LyapunovSearch {
        threshold: certificate.threshold(),
        certificate,
        evaluations,
    })
}

fn weight_from_params(theta: &[f64], n: usize) -> Mat {
    let mut l = Mat::zeros(n, n);
    let mut it = theta.iter();
    for i in 0..n {
        for j in 0..=i {
            let v = *it.next().unwrap();
            l.set(i, j, if i == j { v.exp() } else { v });
        }
    }
    let p = mat_mul(&l, &l.transpose()).expect("square");
    p.add(&p.transpose()).expect("square").scale(0.5)
}

fn params_from_weight(p: &Mat) -> Result<Vec<f64>> {
    let l = cholesky(p)?;
    let n = p.rows();
    let mut out = Vec::with_capacity(n * (n + 1) / 2);
    for i in 0..n {
        for j in 0..=i {
            let v = l.get(i, j);
            out.push(if i == j { v.ln() } else { v });
        }
    }
    Ok(out)
}

/// Solves `P - A'PA = I`.
fn discrete_lyapunov(a: &Mat) -> Result<Mat> {
    let n = a.rows();
    let nn = n * n;
    // unknown vec(P) in row-major order: P[i][j] at i*n + j
    let mut sys = vec![0.0; nn * nn];
    for i in 0..n {
        for j in 0..n {
            let row = i * n + j;
            sys[row * nn + row] += 1.0;
            for k in 0..n {
                for l in 0..n {
                    sys[row * nn + k * n + l] -= a.get(k, i) * a.get(l, j);
                }
            }
        }
    }
    let mut rhs = vec![0.0; nn];
    for i in 0..n {
        rhs[i * n + i] = 1.0;
    }
    solve_dense(&mut sys, &mut rhs, nn)?;
    let p = Mat::new(n, n, rhs)?;
    Ok(p.add(&p.transpose())?.scale(0.5))
}

/// Standard Nelder-Mead (reflection 1, expansion 2, contraction 1/2,
/// shrink 1/2) from an axis-aligned simplex of edge `step`.
fn nelder_mead(
    f: &mut impl FnMut(&[f64]) -> f64,
    x0: &[f64],
    step: f64,
    max_iter: usize,
    ftol: f64,
) -> (Vec<f64>, f64) {
    let dim = x0.len();
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(dim + 1);
    simplex.push((x0.to_vec(), f(x0)));
    for i in 0..dim {
        let mut x = x0.to_vec();
        x[i] += step;
        let fx = f(&x);
        simplex.push((x, fx));
    }
    let point = |c: &[f64], w: &[f64], t: f64| -> Vec<f64> {
        c.iter().zip(w).map(|(a, b)| a + t * (b - a)).collect()
    };
    for _ in 0..max_iter {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let (lo, hi) = (simplex[0].1, simplex[dim].1);
        if hi.is_finite() && (hi - lo).abs() <= ftol * (1.0 + lo.abs()) {
            break;
        }
        let mut centroid = vec![0.0; dim];
        for (x, _) in &simplex[..dim] {
            for (c, v) in centroid.iter_mut().zip(x) {
                *c += v / dim as f64;
            }
        }
        let worst = simplex[dim].0.clone();
        let xr = point(&centroid, &worst, -1.0);
        let fr = f(&xr);
        if fr < simplex[0].1 {
            let xe = point(&centroid, &worst, -2.0);
            let fe = f(&xe);
            simplex[dim] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[dim - 1].1 {
            simplex[dim] = (xr, fr);
        } else {
            let (xc, fc) = if fr < simplex[dim].1 {
                let xc = point(&centroid, &xr, 0.5);
                let fc = f(&xc);
                (xc, fc)
            } else {
                let xc = point(&centroid, &worst, 0.5);
                let fc = f(&xc);
                (xc, fc)
            };
            if fc < fr.min(simplex[dim].1) {
                simplex[dim] = (xc, fc);
            } else {
                let best = simplex[0].0.clone();
                for (x, fx) in simplex.iter_mut().skip(1) {
                    *x = point(&best, x, 0.5);
                    *fx = f(x);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    simplex.swap_remove(0)
}
