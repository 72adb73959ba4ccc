//! Mode sequences, their count vectors, lifted products and the coefficient
//! tables that feed both occupancy LPs.
//!
//! A sequence `q = (q_1, ..., q_h)` lifts to `Gamma_q = A_{q_h} ... A_{q_1}`
//! and scores `gamma_q = ln max(|Gamma_q|, eps)`. The reduced tables keep, per
//! count vector `z`, the largest score over all sequences with that count
//! vector together with the lexicographically smallest sequence attaining it.
//!
//! Sequences are indexed in base `M` with `q_1` as the most significant digit,
//! so index order is lexicographic order.

use std::fmt;

use num_bigint::BigUint;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matlib::{Mat, NormEvaluator, NormKind};
use crate::model::SwitchedSystem;

/// Largest `M^h` for which per-sequence scores may be materialized.
pub const MATERIALIZE_LIMIT: u128 = 1 << 24;
/// Largest `M^h` the enumerator accepts at all.
pub const ENUMERATION_LIMIT: u128 = 1 << 32;
/// Default depth at which the sequence tree is split into parallel subtrees.
pub const SPLIT_DEPTH: usize = 4;

const RANK_TABLE_LIMIT: u128 = 1 << 22;

/// A length-`h` sequence of 1-based mode ids.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ModeSequence(Vec<usize>);

impl ModeSequence {
    pub fn new(modes: Vec<usize>, m: usize) -> Result<Self> {
        if modes.is_empty() {
            return Err(Error::InvalidInput("mode sequence must be non-empty".into()));
        }
        if let Some(bad) = modes.iter().find(|&&s| s == 0 || s > m) {
            return Err(Error::InvalidInput(format!("mode {bad} outside 1..={m}")));
        }
        Ok(ModeSequence(modes))
    }

    /// Constant sequence `(s, s, ..., s)`.
    pub fn constant(s: usize, h: usize) -> Self {
        ModeSequence(vec![s; h])
    }

    pub fn modes(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Base-`M` index with `q_1` most significant.
    pub fn index(&self, m: usize) -> u64 {
        self.0.iter().fold(0u64, |acc, &s| acc * m as u64 + (s - 1) as u64)
    }

    /// Inverse of [`ModeSequence::index`].
    pub fn from_index(mut idx: u64, h: usize, m: usize) -> Self {
        let mut modes = vec![0; h];
        for slot in modes.iter_mut().rev() {
            *slot = (idx % m as u64) as usize + 1;
            idx /= m as u64;
        }
        ModeSequence(modes)
    }
}

impl fmt::Debug for ModeSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

impl fmt::Display for ModeSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, s) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{s}")?;
        }
        write!(f, ")")
    }
}

/// Count vector `z`: `counts[s-1]` is how often mode `s` occurs; sums to `h`.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Composition(Vec<u32>);

impl Composition {
    pub fn new(counts: Vec<u32>) -> Result<Self> {
        if counts.is_empty() || counts.iter().sum::<u32>() == 0 {
            return Err(Error::InvalidInput("composition must have positive total".into()));
        }
        Ok(Composition(counts))
    }

    pub fn counts(&self) -> &[u32] {
        &self.0
    }

    pub fn h(&self) -> u32 {
        self.0.iter().sum()
    }

    /// Per-mode fraction `z_s / h`.
    pub fn fractions(&self) -> Vec<f64> {
        let h = self.h() as f64;
        self.0.iter().map(|&c| c as f64 / h).collect()
    }
}

impl fmt::Debug for Composition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

impl fmt::Display for Composition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (i, c) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, "]")
    }
}

/// `Gamma_q = A_{q_h} ... A_{q_1}`.
pub fn lifted_product(system: &SwitchedSystem, q: &ModeSequence) -> Result<Mat> {
    system.schedule_product(q.modes())
}

/// `ln max(|Gamma_q|, eps)`.
pub fn gamma_of(
    system: &SwitchedSystem,
    q: &ModeSequence,
    norm: &NormKind,
    epsilon: f64,
) -> Result<f64> {
    check_epsilon(epsilon)?;
    let g = lifted_product(system, q)?;
    let value = if g.is_zero() {
        0.0
    } else {
        crate::matlib::mat_norm(&g, norm)?
    };
    Ok(value.max(epsilon).ln())
}

pub(crate) fn check_epsilon(epsilon: f64) -> Result<()> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::InvalidInput(format!("epsilon {epsilon} outside (0, 1)")));
    }
    Ok(())
}

pub fn count_vector(q: &ModeSequence, m: usize) -> Composition {
    let mut counts = vec![0u32; m];
    for &s in q.modes() {
        counts[s - 1] += 1;
    }
    Composition(counts)
}

/// All compositions of `h` into `m` parts in ascending lexicographic order.
pub fn enumerate_compositions(h: usize, m: usize) -> Vec<Composition> {
    assert!(h >= 1 && m >= 1);
    let mut out = Vec::new();
    let mut cur = vec![0u32; m];
    fn rec(pos: usize, remaining: u32, cur: &mut Vec<u32>, out: &mut Vec<Composition>) {
        if pos + 1 == cur.len() {
            cur[pos] = remaining;
            out.push(Composition(cur.clone()));
            return;
        }
        for v in 0..=remaining {
            cur[pos] = v;
            rec(pos + 1, remaining - v, cur, out);
        }
    }
    rec(0, h as u32, &mut cur, &mut out);
    out
}

/// `(M^h, binomial(h + M - 1, M - 1))` in exact arithmetic.
pub fn variable_counts(h: usize, m: usize) -> (BigUint, BigUint) {
    let f = BigUint::from(m).pow(h as u32);
    (f, binomial(h + m - 1, m - 1))
}

fn binomial(n: usize, k: usize) -> BigUint {
    let k = k.min(n - k);
    let mut acc = BigUint::from(1u32);
    for i in 0..k {
        // acc * (n - i) is divisible by (i + 1) at every step
        acc = acc * BigUint::from(n - i) / BigUint::from(i + 1);
    }
    acc
}

fn sequence_count(h: usize, m: usize) -> Result<u128> {
    let mut total: u128 = 1;
    for _ in 0..h {
        total = total.saturating_mul(m as u128);
        if total > ENUMERATION_LIMIT {
            return Err(Error::ResourceGuard {
                what: "M^h",
                count: total,
                limit: ENUMERATION_LIMIT,
            });
        }
    }
    Ok(total)
}

/// Maps a count vector to its position in [`enumerate_compositions`] order.
#[derive(Debug, Clone)]
struct CompositionRanker {
    h: usize,
    m: usize,
    /// `ways[r][k]`: compositions of `r` into `k` parts.
    ways: Vec<Vec<u64>>,
    /// Mixed-radix lookup keyed by the first `m - 1` counts, if small enough.
    table: Option<Vec<u32>>,
    strides: Vec<u64>,
}

impl CompositionRanker {
    fn new(h: usize, m: usize, comps: &[Composition]) -> Self {
        let mut ways = vec![vec![0u64; m + 1]; h + 1];
        for (r, row) in ways.iter_mut().enumerate() {
            for (k, w) in row.iter_mut().enumerate().skip(1) {
                *w = binomial(r + k - 1, k - 1).try_into().unwrap_or(u64::MAX);
            }
        }
        let mut strides = vec![0u64; m];
        let mut stride = 1u128;
        let mut fits = true;
        for s in strides.iter_mut().take(m - 1) {
            *s = stride as u64;
            stride *= (h + 1) as u128;
            if stride > RANK_TABLE_LIMIT {
                fits = false;
                break;
            }
        }
        let mut ranker = CompositionRanker {
            h,
            m,
            ways,
            table: None,
            strides,
        };
        if fits {
            let mut table = vec![u32::MAX; stride as usize];
            for (i, c) in comps.iter().enumerate() {
                table[ranker.key(c.counts()) as usize] = i as u32;
            }
            ranker.table = Some(table);
        } else {
            ranker.strides = vec![0; m];
        }
        ranker
    }

    fn key(&self, counts: &[u32]) -> u64 {
        counts
            .iter()
            .zip(&self.strides)
            .map(|(&c, &s)| c as u64 * s)
            .sum()
    }

    fn rank_direct(&self, counts: &[u32]) -> usize {
        let mut rank = 0u64;
        let mut rem = self.h;
        for (i, &c) in counts.iter().enumerate().take(self.m - 1) {
            let parts_after = self.m - 1 - i;
            for v in 0..c as usize {
                rank += self.ways[rem - v][parts_after];
            }
            rem -= c as usize;
        }
        rank as usize
    }

    #[inline]
    fn rank(&self, key: u64, counts: &[u32]) -> usize {
        match &self.table {
            Some(t) => t[key as usize] as usize,
            None => self.rank_direct(counts),
        }
    }
}

/// Coefficient tables for one `(system, h, norm, eps)`.
#[derive(Clone, Debug)]
pub struct GammaTables {
    h: usize,
    modes: usize,
    norm: NormKind,
    epsilon: f64,
    per_sequence: Option<Vec<f64>>,
    compositions: Vec<Composition>,
    gamma_prime: Vec<f64>,
    witnesses: Vec<u64>,
}

impl GammaTables {
    /// Tables from explicitly supplied reduced scores. Witnesses are the
    /// lexicographically smallest sequence of each composition; useful for
    /// exercising the LPs on synthetic coefficients.
    pub fn from_reduced(h: usize, modes: usize, gamma_prime: Vec<f64>) -> Result<Self> {
        let compositions = enumerate_compositions(h, modes);
        if gamma_prime.len() != compositions.len() {
            return Err(Error::Dimension(format!(
                "expected {} reduced scores, got {}",
                compositions.len(),
                gamma_prime.len()
            )));
        }
        if gamma_prime.iter().any(|g| !g.is_finite()) {
            return Err(Error::InvalidInput("reduced scores must be finite".into()));
        }
        let witnesses = compositions
            .iter()
            .map(|c| {
                let modes_vec: Vec<usize> = c
                    .counts()
                    .iter()
                    .enumerate()
                    .flat_map(|(s, &k)| std::iter::repeat(s + 1).take(k as usize))
                    .collect();
                ModeSequence(modes_vec).index(modes)
            })
            .collect();
        Ok(GammaTables {
            h,
            modes,
            norm: NormKind::Spectral,
            epsilon: 0.5,
            per_sequence: None,
            compositions,
            gamma_prime,
            witnesses,
        })
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    pub fn norm(&self) -> &NormKind {
        &self.norm
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn compositions(&self) -> &[Composition] {
        &self.compositions
    }

    pub fn gamma_prime(&self) -> &[f64] {
        &self.gamma_prime
    }

    /// Per-sequence scores in index order, if materialized.
    pub fn per_sequence(&self) -> Option<&[f64]> {
        self.per_sequence.as_deref()
    }

    pub fn witness_index(&self, i: usize) -> u64 {
        self.witnesses[i]
    }

    pub fn witness(&self, i: usize) -> ModeSequence {
        ModeSequence::from_index(self.witnesses[i], self.h, self.modes)
    }

    pub fn position_of(&self, z: &Composition) -> Option<usize> {
        self.compositions.binary_search(z).ok()
    }
}

/// Builds the tables by depth-first traversal of the sequence tree, carrying
/// the running prefix product. Subtrees below [`SPLIT_DEPTH`] run in parallel
/// on the current rayon pool and are merged in index order.
pub fn build_gamma_tables(
    system: &SwitchedSystem,
    h: usize,
    norm: &NormKind,
    epsilon: f64,
    materialize_sequences: bool,
) -> Result<GammaTables> {
    build_gamma_tables_split(system, h, norm, epsilon, materialize_sequences, SPLIT_DEPTH)
}

/// As [`build_gamma_tables`] on a dedicated pool of `workers` threads.
pub fn build_gamma_tables_with_workers(
    system: &SwitchedSystem,
    h: usize,
    norm: &NormKind,
    epsilon: f64,
    materialize_sequences: bool,
    workers: usize,
) -> Result<GammaTables> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidInput(format!("cannot build worker pool: {e}")))?;
    pool.install(|| build_gamma_tables(system, h, norm, epsilon, materialize_sequences))
}

/// As [`build_gamma_tables`] with an explicit split depth.
pub fn build_gamma_tables_split(
    system: &SwitchedSystem,
    h: usize,
    norm: &NormKind,
    epsilon: f64,
    materialize_sequences: bool,
    split_depth: usize,
) -> Result<GammaTables> {
    if h == 0 {
        return Err(Error::InvalidInput("h must be at least 1".into()));
    }
    check_epsilon(epsilon)?;
    let m = system.modes();
    let total = sequence_count(h, m)?;
    if materialize_sequences && total > MATERIALIZE_LIMIT {
        return Err(Error::ResourceGuard {
            what: "materialized M^h",
            count: total,
            limit: MATERIALIZE_LIMIT,
        });
    }
    if let NormKind::Weighted(w) = norm {
        if w.p().rows() != system.dim() {
            return Err(Error::Dimension("weight does not match system dimension".into()));
        }
    }

    let compositions = enumerate_compositions(h, m);
    let ranker = CompositionRanker::new(h, m, &compositions);
    let d0 = split_depth.clamp(1, h);
    let subtrees = (m as u64).pow(d0 as u32);
    let ctx = Shared {
        mats: system.matrices(),
        h,
        m,
        d0,
        norm,
        ln_eps: epsilon.ln(),
        epsilon,
        ncomp: compositions.len(),
        ranker: &ranker,
        materialize: materialize_sequences,
    };

    let partials: Vec<Partial> = (0..subtrees)
        .into_par_iter()
        .map(|k| ctx.run_subtree(k))
        .collect::<Result<Vec<_>>>()?;

    let mut gamma_prime = vec![f64::NEG_INFINITY; compositions.len()];
    let mut witnesses = vec![u64::MAX; compositions.len()];
    let mut per_sequence = materialize_sequences.then(|| Vec::with_capacity(total as usize));
    for p in partials {
        for i in 0..compositions.len() {
            // strict comparison keeps the earlier, lexicographically smaller witness
            if p.witness[i] != u64::MAX && p.best[i] > gamma_prime[i] {
                gamma_prime[i] = p.best[i];
                witnesses[i] = p.witness[i];
            }
        }
        if let (Some(all), Some(part)) = (per_sequence.as_mut(), p.per_sequence) {
            all.extend_from_slice(&part);
        }
    }
    if witnesses.iter().any(|&w| w == u64::MAX) {
        return Err(Error::Inconsistent("a composition received no sequence".into()));
    }
    Ok(GammaTables {
        h,
        modes: m,
        norm: norm.clone(),
        epsilon,
        per_sequence,
        compositions,
        gamma_prime,
        witnesses,
    })
}

struct Shared<'a> {
    mats: &'a [Mat],
    h: usize,
    m: usize,
    d0: usize,
    norm: &'a NormKind,
    ln_eps: f64,
    epsilon: f64,
    ncomp: usize,
    ranker: &'a CompositionRanker,
    materialize: bool,
}

struct Partial {
    best: Vec<f64>,
    witness: Vec<u64>,
    per_sequence: Option<Vec<f64>>,
}

struct Walker<'a, 'b> {
    shared: &'b Shared<'a>,
    prods: Vec<Mat>,
    counts: Vec<u32>,
    eval: NormEvaluator,
    out: Partial,
    error: Option<Error>,
}

impl Shared<'_> {
    fn run_subtree(&self, k: u64) -> Result<Partial> {
        let n = self.mats[0].rows();
        let mut prods = vec![Mat::identity(n); self.h + 1];
        let mut counts = vec![0u32; self.m];
        let mut key = 0u64;
        let prefix = ModeSequence::from_index(k, self.d0, self.m);
        for (depth, &s) in prefix.modes().iter().enumerate() {
            let (lo, hi) = prods.split_at_mut(depth + 1);
            self.mats[s - 1].mul_into(&lo[depth], &mut hi[0]);
            counts[s - 1] += 1;
            key += self.ranker.strides[s - 1];
        }
        let leaves = (self.m as u64).pow((self.h - self.d0) as u32);
        let mut w = Walker {
            shared: self,
            prods,
            counts,
            eval: NormEvaluator::new(self.norm.clone(), n),
            out: Partial {
                best: vec![f64::NEG_INFINITY; self.ncomp],
                witness: vec![u64::MAX; self.ncomp],
                per_sequence: self.materialize.then(|| Vec::with_capacity(leaves as usize)),
            },
            error: None,
        };
        w.descend(self.d0, key, k);
        match w.error {
            Some(e) => Err(e),
            None => Ok(w.out),
        }
    }
}

impl Walker<'_, '_> {
    fn descend(&mut self, depth: usize, key: u64, index: u64) {
        if self.error.is_some() {
            return;
        }
        let sh = self.shared;
        if depth == sh.h {
            self.leaf(key, index);
            return;
        }
        for s in 0..sh.m {
            {
                let (lo, hi) = self.prods.split_at_mut(depth + 1);
                sh.mats[s].mul_into(&lo[depth], &mut hi[0]);
            }
            self.counts[s] += 1;
            self.descend(depth + 1, key + sh.ranker.strides[s], index * sh.m as u64 + s as u64);
            self.counts[s] -= 1;
        }
    }

    fn leaf(&mut self, key: u64, index: u64) {
        let sh = self.shared;
        let g = &self.prods[sh.h];
        let gamma = if g.is_zero() {
            sh.ln_eps
        } else {
            match self.eval.norm(g) {
                Ok(v) if v.is_finite() => v.max(sh.epsilon).ln(),
                Ok(_) => {
                    self.error = Some(Error::Inconsistent(format!(
                        "lifted product of sequence index {index} overflowed"
                    )));
                    return;
                }
                Err(e) => {
                    self.error = Some(e);
                    return;
                }
            }
        };
        let r = sh.ranker.rank(key, &self.counts);
        if gamma > self.out.best[r] || self.out.witness[r] == u64::MAX {
            self.out.best[r] = gamma;
            self.out.witness[r] = index;
        }
        if let Some(ps) = self.out.per_sequence.as_mut() {
            ps.push(gamma);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matlib::mat_norm;
    use proptest::prelude::*;
    use std::collections::BTreeMap;

    pub(crate) fn example3() -> SwitchedSystem {
        SwitchedSystem::new(vec![
            Mat::from_rows(&[[0.0, 1.0], [0.0, 0.0]]).unwrap(),
            Mat::from_rows(&[[0.0, 1.0], [2.0, 1.0]]).unwrap(),
        ])
        .unwrap()
    }

    fn seq(v: &[usize]) -> ModeSequence {
        ModeSequence(v.to_vec())
    }

    fn comp(v: &[u32]) -> Composition {
        Composition(v.to_vec())
    }

    #[test]
    fn lifted_product_order() {
        let sys = example3();
        assert!(lifted_product(&sys, &seq(&[1, 1])).unwrap().is_zero());
        assert_eq!(
            lifted_product(&sys, &seq(&[2, 1])).unwrap(),
            Mat::from_rows(&[[2.0, 1.0], [0.0, 0.0]]).unwrap()
        );
        assert_eq!(lifted_product(&sys, &seq(&[2])).unwrap(), *sys.mode(2).unwrap());
    }

    #[test]
    fn gamma_values() {
        let sys = example3();
        let g = gamma_of(&sys, &seq(&[1, 1]), &NormKind::Spectral, 1e-16).unwrap();
        assert!((g - (-36.8414)).abs() < 1e-4);
        let g = gamma_of(&sys, &seq(&[2, 1]), &NormKind::Spectral, 1e-16).unwrap();
        assert!((g - 0.80472).abs() < 1e-5);
        let id = SwitchedSystem::new(vec![Mat::identity(3)]).unwrap();
        assert_eq!(gamma_of(&id, &seq(&[1, 1, 1]), &NormKind::Spectral, 0.1).unwrap(), 0.0);
        assert!(gamma_of(&sys, &seq(&[1]), &NormKind::Spectral, 1.0).is_err());
        assert!(gamma_of(&sys, &seq(&[1]), &NormKind::Spectral, 0.0).is_err());
    }

    #[test]
    fn count_vectors() {
        assert_eq!(count_vector(&seq(&[1, 2, 2, 1]), 2), comp(&[2, 2]));
        assert_eq!(count_vector(&seq(&[3, 3, 3]), 3), comp(&[0, 0, 3]));
        assert_eq!(count_vector(&seq(&[1]), 5), comp(&[1, 0, 0, 0, 0]));
    }

    #[test]
    fn composition_order() {
        assert_eq!(
            enumerate_compositions(2, 2),
            vec![comp(&[0, 2]), comp(&[1, 1]), comp(&[2, 0])]
        );
        assert_eq!(
            enumerate_compositions(1, 3),
            vec![comp(&[0, 0, 1]), comp(&[0, 1, 0]), comp(&[1, 0, 0])]
        );
        assert_eq!(enumerate_compositions(15, 3).len(), 136);
        assert_eq!(enumerate_compositions(4, 1), vec![comp(&[4])]);
    }

    #[test]
    fn counts_table() {
        let (f, fp) = variable_counts(15, 3);
        assert_eq!(f, BigUint::from(14_348_907u32));
        assert_eq!(fp, BigUint::from(136u32));
        for m in 1..=6 {
            let (f, fp) = variable_counts(1, m);
            assert_eq!((f, fp), (BigUint::from(m), BigUint::from(m)));
        }
        for h in 1..=20 {
            let (f, fp) = variable_counts(h, 1);
            assert_eq!((f, fp), (BigUint::from(1u32), BigUint::from(1u32)));
        }
        // no overflow far beyond 64 bits
        let (f, _) = variable_counts(100, 5);
        assert_eq!(f.bits(), 233);
    }

    #[test]
    fn ranker_agrees_with_enumeration() {
        for (h, m) in [(1, 1), (3, 1), (5, 2), (6, 3), (4, 5)] {
            let comps = enumerate_compositions(h, m);
            let r = CompositionRanker::new(h, m, &comps);
            for (i, c) in comps.iter().enumerate() {
                assert_eq!(r.rank_direct(c.counts()), i);
                assert_eq!(r.rank(r.key(c.counts()), c.counts()), i);
            }
        }
    }

    #[test]
    fn sequence_index_round_trip() {
        for idx in 0..81u64 {
            let q = ModeSequence::from_index(idx, 4, 3);
            assert_eq!(q.index(3), idx);
        }
        assert_eq!(ModeSequence::from_index(0, 3, 2), seq(&[1, 1, 1]));
        assert_eq!(ModeSequence::from_index(1, 3, 2), seq(&[1, 1, 2]));
    }

    #[test]
    fn example3_table() {
        let sys = example3();
        let t = build_gamma_tables(&sys, 2, &NormKind::Spectral, 1e-16, true).unwrap();
        assert_eq!(t.compositions(), &[comp(&[0, 2]), comp(&[1, 1]), comp(&[2, 0])][..]);
        let a22 = ((18.0 + 260f64.sqrt()) / 2.0).sqrt().ln();
        assert!((t.gamma_prime()[0] - a22).abs() < 1e-13);
        assert!((t.gamma_prime()[1] - 5f64.sqrt().ln()).abs() < 1e-13);
        assert_eq!(t.gamma_prime()[2], 1e-16f64.ln());
        assert_eq!(t.witness(1), seq(&[2, 1]));
        // (1,2) has product A2 A1 = [[0,0],[0,2]]
        let ps = t.per_sequence().unwrap();
        assert!((ps[1] - 2f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn materialize_guard() {
        let sys = example3();
        let r = build_gamma_tables(&sys, 25, &NormKind::Spectral, 1e-16, true);
        assert!(matches!(r, Err(Error::ResourceGuard { .. })));
        let r = build_gamma_tables(&sys, 33, &NormKind::Spectral, 1e-16, false);
        assert!(matches!(r, Err(Error::ResourceGuard { .. })));
    }

    #[test]
    fn single_step_tables_are_mode_norms() {
        let sys = example3();
        let t = build_gamma_tables(&sys, 1, &NormKind::One, 1e-3, false).unwrap();
        // compositions (0,1) -> mode 2, (1,0) -> mode 1
        assert_eq!(t.witness(0), seq(&[2]));
        assert_eq!(t.witness(1), seq(&[1]));
        assert_eq!(t.gamma_prime()[0], mat_norm(sys.mode(2).unwrap(), &NormKind::One).unwrap().ln());
        assert_eq!(t.gamma_prime()[1], 0.0);
    }

    /// Brute force: every sequence, product built from scratch.
    fn brute_force(
        sys: &SwitchedSystem,
        h: usize,
        norm: &NormKind,
        eps: f64,
    ) -> BTreeMap<Composition, (f64, ModeSequence)> {
        let m = sys.modes();
        let mut best: BTreeMap<Composition, (f64, ModeSequence)> = BTreeMap::new();
        for idx in 0..(m as u64).pow(h as u32) {
            let q = ModeSequence::from_index(idx, h, m);
            let g = gamma_of(sys, &q, norm, eps).unwrap();
            let z = count_vector(&q, m);
            match best.get(&z) {
                Some((b, _)) if *b >= g => {}
                _ => {
                    best.insert(z, (g, q));
                }
            }
        }
        best
    }

    fn arb_system(max_m: usize) -> impl Strategy<Value = SwitchedSystem> {
        (1usize..=max_m, 1usize..=3).prop_flat_map(|(m, n)| {
            proptest::collection::vec(
                proptest::collection::vec(-1.5f64..1.5, n * n),
                m,
            )
            .prop_map(move |ms| {
                SwitchedSystem::new(ms.into_iter().map(|d| Mat::new(n, n, d).unwrap()).collect())
                    .unwrap()
            })
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn tables_match_brute_force(sys in arb_system(3), h in 1usize..=7, kind in 0usize..4) {
            let h = if sys.modes() == 3 { h.min(6) } else { h };
            let norm = [NormKind::One, NormKind::Infinity, NormKind::Spectral, NormKind::Frobenius][kind].clone();
            let t = build_gamma_tables(&sys, h, &norm, 1e-12, true).unwrap();
            let bf = brute_force(&sys, h, &norm, 1e-12);
            prop_assert_eq!(bf.len(), t.compositions().len());
            for (i, z) in t.compositions().iter().enumerate() {
                let (g, q) = &bf[z];
                let w = t.witness(i);
                prop_assert_eq!(&count_vector(&w, sys.modes()), z);
                // both routes multiply left onto an identity start, so results are bit-equal
                prop_assert_eq!(t.gamma_prime()[i].to_bits(), g.to_bits());
                prop_assert_eq!(&w, q);
            }
            let ps = t.per_sequence().unwrap();
            for (i, z) in t.compositions().iter().enumerate() {
                let max = (0..ps.len())
                    .filter(|&j| &count_vector(&ModeSequence::from_index(j as u64, h, sys.modes()), sys.modes()) == z)
                    .map(|j| ps[j])
                    .fold(f64::NEG_INFINITY, f64::max);
                prop_assert_eq!(max, t.gamma_prime()[i]);
            }
        }

        #[test]
        fn deterministic_across_workers_and_splits(sys in arb_system(3), h in 1usize..=6) {
            let a = build_gamma_tables_with_workers(&sys, h, &NormKind::Spectral, 1e-12, true, 1).unwrap();
            let b = build_gamma_tables_with_workers(&sys, h, &NormKind::Spectral, 1e-12, true, 4).unwrap();
            let c = build_gamma_tables_split(&sys, h, &NormKind::Spectral, 1e-12, true, 1).unwrap();
            for t in [&b, &c] {
                prop_assert_eq!(
                    a.gamma_prime().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                    t.gamma_prime().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
                );
                prop_assert_eq!(&a.witnesses, &t.witnesses);
                prop_assert_eq!(
                    a.per_sequence().unwrap().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                    t.per_sequence().unwrap().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
                );
            }
        }

        #[test]
        fn relabeling_symmetry(sys in arb_system(2), h in 1usize..=8) {
            prop_assume!(sys.modes() == 2);
            let swapped = SwitchedSystem::new(vec![sys.matrices()[1].clone(), sys.matrices()[0].clone()]).unwrap();
            let a = build_gamma_tables(&sys, h, &NormKind::Frobenius, 1e-12, false).unwrap();
            let b = build_gamma_tables(&swapped, h, &NormKind::Frobenius, 1e-12, false).unwrap();
            let n = a.compositions().len();
            for i in 0..n {
                // (k, h-k) in one labeling is (h-k, k) in the other: reversed order
                let g1 = a.gamma_prime()[i];
                let g2 = b.gamma_prime()[n - 1 - i];
                prop_assert!((g1 - g2).abs() <= 1e-9 * (1.0 + g1.abs()));
            }
        }
    }

    #[test]
    fn ties_pick_smallest_witness() {
        // identical modes: every sequence ties, the witness must be all-ones first
        let sys = SwitchedSystem::new(vec![Mat::identity(2), Mat::identity(2), Mat::identity(2)]).unwrap();
        let t = build_gamma_tables(&sys, 5, &NormKind::Spectral, 1e-3, false).unwrap();
        for (i, z) in t.compositions().iter().enumerate() {
            let mut expect = Vec::new();
            for (s, &c) in z.counts().iter().enumerate() {
                expect.extend(std::iter::repeat(s + 1).take(c as usize));
            }
            assert_eq!(t.witness(i), seq(&expect));
        }
    }

    #[test]
    fn reduced_tables_constructor() {
        let t = GammaTables::from_reduced(2, 2, vec![0.1, 0.2, 0.3]).unwrap();
        assert_eq!(t.witness(1), seq(&[1, 2]));
        assert!(GammaTables::from_reduced(2, 2, vec![0.1]).is_err());
    }
}
