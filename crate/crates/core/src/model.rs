//! The switched system and the activation-ratio bounds on its mode signal.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matlib::{mat_mul, Mat};

const BOUND_TOL: f64 = 1e-12;

/// `M` square mode matrices of a common dimension `n`. Modes are 1-based in
/// every public interface.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Mat>", into = "Vec<Mat>")]
pub struct SwitchedSystem {
    matrices: Vec<Mat>,
}

impl SwitchedSystem {
    pub fn new(matrices: Vec<Mat>) -> Result<Self> {
        let first = matrices
            .first()
            .ok_or_else(|| Error::InvalidInput("a switched system needs at least one mode".into()))?;
        let n = first.rows();
        for (i, m) in matrices.iter().enumerate() {
            if !m.is_square() || m.rows() != n {
                return Err(Error::Dimension(format!(
                    "mode {} is {}x{}, expected {n}x{n}",
                    i + 1,
                    m.rows(),
                    m.cols()
                )));
            }
        }
        Ok(SwitchedSystem { matrices })
    }

    pub fn modes(&self) -> usize {
        self.matrices.len()
    }

    pub fn dim(&self) -> usize {
        self.matrices[0].rows()
    }

    /// Matrix of the 1-based mode `s`.
    pub fn mode(&self, s: usize) -> Result<&Mat> {
        if s == 0 || s > self.matrices.len() {
            return Err(Error::InvalidInput(format!(
                "mode {s} outside 1..={}",
                self.matrices.len()
            )));
        }
        Ok(&self.matrices[s - 1])
    }

    pub fn matrices(&self) -> &[Mat] {
        &self.matrices
    }

    /// Runs `x(t+1) = A_{r(t)} x(t)` and returns the Euclidean norm of the
    /// state after each step (`T + 1` entries including `x(0)`).
    pub fn simulate_norms(&self, x0: &[f64], signal: &[usize]) -> Result<Vec<f64>> {
        if x0.len() != self.dim() {
            return Err(Error::Dimension(format!(
                "initial state has length {}, system dimension is {}",
                x0.len(),
                self.dim()
            )));
        }
        let mut x = x0.to_vec();
        let mut out = Vec::with_capacity(signal.len() + 1);
        out.push(euclid(&x));
        for &s in signal {
            x = self.mode(s)?.mul_vec(&x);
            out.push(euclid(&x));
        }
        Ok(out)
    }

    /// Final state after running the signal.
    pub fn simulate(&self, x0: &[f64], signal: &[usize]) -> Result<Vec<f64>> {
        if x0.len() != self.dim() {
            return Err(Error::Dimension("initial state length".into()));
        }
        let mut x = x0.to_vec();
        for &s in signal {
            x = self.mode(s)?.mul_vec(&x);
        }
        Ok(x)
    }

    /// Ordered product over a schedule; the last entry is the leftmost factor.
    pub fn schedule_product(&self, schedule: &[usize]) -> Result<Mat> {
        let mut acc = Mat::identity(self.dim());
        for &s in schedule {
            acc = mat_mul(self.mode(s)?, &acc)?;
        }
        Ok(acc)
    }
}

impl TryFrom<Vec<Mat>> for SwitchedSystem {
    type Error = Error;

    fn try_from(m: Vec<Mat>) -> Result<Self> {
        SwitchedSystem::new(m)
    }
}

impl From<SwitchedSystem> for Vec<Mat> {
    fn from(s: SwitchedSystem) -> Self {
        s.matrices
    }
}

pub(crate) fn euclid(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Lower and upper bounds on the long-run fraction of time each mode is active.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBounds", into = "RawBounds")]
pub struct ActivationBounds {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawBounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl ActivationBounds {
    /// Validates `0 <= lo <= hi <= 1` per mode and `sum lo <= 1 <= sum hi`,
    /// each to within `1e-12`.
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() || lower.len() != upper.len() {
            return Err(Error::Dimension(format!(
                "bounds need equal nonzero lengths, got {} and {}",
                lower.len(),
                upper.len()
            )));
        }
        for (s, (&lo, &hi)) in lower.iter().zip(&upper).enumerate() {
            if !lo.is_finite() || !hi.is_finite() {
                return Err(Error::InvalidInput(format!("mode {} has non-finite bounds", s + 1)));
            }
            if lo < -BOUND_TOL || hi > 1.0 + BOUND_TOL || lo > hi + BOUND_TOL {
                return Err(Error::InvalidInput(format!(
                    "mode {} bounds [{lo}, {hi}] violate 0 <= lo <= hi <= 1",
                    s + 1
                )));
            }
        }
        let sum_lo: f64 = lower.iter().sum();
        let sum_hi: f64 = upper.iter().sum();
        if sum_lo > 1.0 + BOUND_TOL || sum_hi < 1.0 - BOUND_TOL {
            return Err(Error::InvalidInput(format!(
                "bounds admit no occupancy: sum of lower = {sum_lo}, sum of upper = {sum_hi}"
            )));
        }
        Ok(ActivationBounds { lower, upper })
    }

    /// No information about the signal: every ratio in `[0, 1]`.
    pub fn vacuous(modes: usize) -> Self {
        ActivationBounds {
            lower: vec![0.0; modes],
            upper: vec![1.0; modes],
        }
    }

    pub fn modes(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    /// True when every per-mode value lies within the bounds widened by `tol`.
    pub fn admits(&self, freqs: &[f64], tol: f64) -> bool {
        freqs.len() == self.modes()
            && freqs
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(&f, (&lo, &hi))| f >= lo - tol && f <= hi + tol)
    }
}

impl TryFrom<RawBounds> for ActivationBounds {
    type Error = Error;

    fn try_from(r: RawBounds) -> Result<Self> {
        ActivationBounds::new(r.lower, r.upper)
    }
}

impl From<ActivationBounds> for RawBounds {
    fn from(b: ActivationBounds) -> Self {
        RawBounds {
            lower: b.lower,
            upper: b.upper,
        }
    }
}
