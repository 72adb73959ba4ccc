//! Mode signals: generators, exact long-run block frequencies and empirical
//! statistics.
//!
//! A hidden-Markov signal is the image of an irreducible finite Markov chain
//! under a partition of its states into modes. Its length-`h` block
//! frequencies converge, and [`limit_oracle`] computes the limits exactly by
//! passing to the chain of `d`-step paths, `d = tau * h`, started in the
//! cyclic class of the initial state.

use std::collections::{BTreeMap, HashMap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matlib::solve_dense;
use crate::lifting::{count_vector, ModeSequence};
use crate::model::ActivationBounds;

/// Largest lifted path space [`limit_oracle`] will build.
pub const LIFTED_STATE_LIMIT: usize = 200_000;
/// Above this many lifted states the stationary law is assembled from the
/// `d`-step chain instead of a dense solve over paths.
pub const DENSE_LIFTED_LIMIT: usize = 1024;

const STOCHASTIC_TOL: f64 = 1e-12;

/// Irreducible chain over states `0..S` with a state-to-mode partition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawHiddenMarkov", into = "RawHiddenMarkov")]
pub struct HiddenMarkovSpec {
    transition: Vec<Vec<f64>>,
    initial_state: usize,
    partition: Vec<Vec<usize>>,
    mode_of: Vec<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawHiddenMarkov {
    pub transition: Vec<Vec<f64>>,
    pub initial_state: usize,
    /// `partition[s-1]` lists the states that emit mode `s`.
    pub partition: Vec<Vec<usize>>,
}

impl HiddenMarkovSpec {
    pub fn new(
        transition: Vec<Vec<f64>>,
        initial_state: usize,
        partition: Vec<Vec<usize>>,
    ) -> Result<Self> {
        let n = transition.len();
        if n == 0 {
            return Err(Error::InvalidInput("chain needs at least one state".into()));
        }
        for (i, row) in transition.iter().enumerate() {
            if row.len() != n {
                return Err(Error::Dimension(format!("transition row {i} has {} entries", row.len())));
            }
            if row.iter().any(|&p| !p.is_finite() || p < 0.0) {
                return Err(Error::InvalidInput(format!("row {i} has a negative or non-finite entry")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > STOCHASTIC_TOL {
                return Err(Error::InvalidInput(format!("row {i} sums to {sum}")));
            }
        }
        if initial_state >= n {
            return Err(Error::InvalidInput(format!("initial state {initial_state} out of range")));
        }
        if partition.is_empty() {
            return Err(Error::InvalidInput("partition needs at least one mode".into()));
        }
        let mut mode_of = vec![0usize; n];
        for (s, set) in partition.iter().enumerate() {
            for &g in set {
                if g >= n {
                    return Err(Error::InvalidInput(format!("partition names unknown state {g}")));
                }
                if mode_of[g] != 0 {
                    return Err(Error::InvalidInput(format!("state {g} appears in two modes")));
                }
                mode_of[g] = s + 1;
            }
        }
        if let Some(g) = mode_of.iter().position(|&s| s == 0) {
            return Err(Error::InvalidInput(format!("state {g} belongs to no mode")));
        }
        Ok(HiddenMarkovSpec {
            transition,
            initial_state,
            partition,
            mode_of,
        })
    }

    /// Two-state burst channel with per-attempt outcomes, as a 4-state chain:
    /// 0 good/delivered, 1 bad/delivered, 2 good/lost, 3 bad/lost. Mode 1 is
    /// delivery, mode 2 is loss. `p` is the good-to-bad probability, `q` the
    /// bad-to-good probability, `e` and `f` the loss probabilities in the good
    /// and bad states.
    pub fn gilbert_elliott(p: f64, q: f64, e: f64, f: f64) -> Result<Self> {
        for (name, v) in [("p", p), ("q", q), ("e", e), ("f", f)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidInput(format!("{name} = {v} is not a probability")));
            }
        }
        let from_good = [(1.0 - p) * (1.0 - e), p * (1.0 - f), (1.0 - p) * e, p * f];
        let from_bad = [q * (1.0 - e), (1.0 - q) * (1.0 - f), q * e, (1.0 - q) * f];
        let transition = vec![
            from_good.to_vec(),
            from_bad.to_vec(),
            from_good.to_vec(),
            from_bad.to_vec(),
        ];
        HiddenMarkovSpec::new(transition, 0, vec![vec![0, 1], vec![2, 3]])
    }

    /// Deterministic cycle emitting `pattern` forever.
    pub fn periodic(pattern: &[usize], modes: usize) -> Result<Self> {
        if pattern.is_empty() {
            return Err(Error::InvalidInput("pattern must be non-empty".into()));
        }
        let n = pattern.len();
        let mut transition = vec![vec![0.0; n]; n];
        for (i, row) in transition.iter_mut().enumerate() {
            row[(i + 1) % n] = 1.0;
        }
        let mut partition = vec![Vec::new(); modes];
        for (i, &s) in pattern.iter().enumerate() {
            if s == 0 || s > modes {
                return Err(Error::InvalidInput(format!("mode {s} outside 1..={modes}")));
            }
            partition[s - 1].push(i);
        }
        HiddenMarkovSpec::new(transition, 0, partition)
    }

    pub fn states(&self) -> usize {
        self.transition.len()
    }

    pub fn modes(&self) -> usize {
        self.partition.len()
    }

    pub fn transition(&self) -> &[Vec<f64>] {
        &self.transition
    }

    pub fn initial_state(&self) -> usize {
        self.initial_state
    }

    pub fn partition(&self) -> &[Vec<usize>] {
        &self.partition
    }

    /// 1-based mode emitted by state `g`.
    pub fn mode_of(&self, g: usize) -> usize {
        self.mode_of[g]
    }

    fn successors(&self, g: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.transition[g]
            .iter()
            .enumerate()
            .filter(|(_, &p)| p > 0.0)
            .map(|(v, &p)| (v, p))
    }
}

impl TryFrom<RawHiddenMarkov> for HiddenMarkovSpec {
    type Error = Error;

    fn try_from(r: RawHiddenMarkov) -> Result<Self> {
        HiddenMarkovSpec::new(r.transition, r.initial_state, r.partition)
    }
}

impl From<HiddenMarkovSpec> for RawHiddenMarkov {
    fn from(s: HiddenMarkovSpec) -> Self {
        RawHiddenMarkov {
            transition: s.transition,
            initial_state: s.initial_state,
            partition: s.partition,
        }
    }
}

/// Where a mode signal comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SignalSource {
    HiddenMarkov { spec: HiddenMarkovSpec },
    Periodic { pattern: Vec<usize> },
    Explicit { schedule: Vec<usize> },
}

/// Draws `t` modes. Hidden-Markov sampling inverts each row's CDF against a
/// ChaCha8 stream seeded with `seed`; the other sources ignore the seed.
pub fn sample_signal(source: &SignalSource, t: usize, seed: u64) -> Result<Vec<usize>> {
    if t == 0 {
        return Err(Error::InvalidInput("signal length must be positive".into()));
    }
    match source {
        SignalSource::Periodic { pattern } => {
            if pattern.is_empty() || pattern.contains(&0) {
                return Err(Error::InvalidInput("pattern needs positive mode ids".into()));
            }
            Ok((0..t).map(|i| pattern[i % pattern.len()]).collect())
        }
        SignalSource::Explicit { schedule } => {
            if schedule.len() < t {
                return Err(Error::InvalidInput(format!(
                    "explicit schedule has {} entries, {t} requested",
                    schedule.len()
                )));
            }
            Ok(schedule[..t].to_vec())
        }
        SignalSource::HiddenMarkov { spec } => Ok(sample_hidden_markov(spec, t, seed)),
    }
}

fn sample_hidden_markov(spec: &HiddenMarkovSpec, t: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cdf: Vec<Vec<f64>> = spec
        .transition
        .iter()
        .map(|row| {
            let mut acc = 0.0;
            row.iter()
                .map(|&p| {
                    acc += p;
                    acc
                })
                .collect()
        })
        .collect();
    let mut g = spec.initial_state;
    let mut out = Vec::with_capacity(t);
    for _ in 0..t {
        out.push(spec.mode_of[g]);
        let u: f64 = rng.gen();
        let row = &cdf[g];
        let next = row.iter().position(|&c| u < c).unwrap_or_else(|| {
            // rounding left the last cumulative sum below u: take the last reachable state
            spec.transition[g].iter().rposition(|&p| p > 0.0).unwrap_or(g)
        });
        g = next;
    }
    out
}

fn bfs_layers(spec: &HiddenMarkovSpec) -> Vec<Option<usize>> {
    let n = spec.states();
    let mut layer = vec![None; n];
    let mut queue = VecDeque::new();
    layer[spec.initial_state] = Some(0);
    queue.push_back(spec.initial_state);
    while let Some(u) = queue.pop_front() {
        let lu = layer[u].unwrap();
        for (v, _) in spec.successors(u) {
            if layer[v].is_none() {
                layer[v] = Some(lu + 1);
                queue.push_back(v);
            }
        }
    }
    layer
}

fn check_irreducible(spec: &HiddenMarkovSpec) -> Result<Vec<usize>> {
    let layer = bfs_layers(spec);
    if let Some(g) = layer.iter().position(|l| l.is_none()) {
        return Err(Error::Reducible(format!(
            "state {g} is unreachable from state {}",
            spec.initial_state
        )));
    }
    // every state must reach the initial state as well
    let n = spec.states();
    let mut back = vec![false; n];
    back[spec.initial_state] = true;
    let mut stack = vec![spec.initial_state];
    while let Some(v) = stack.pop() {
        for (u, row) in spec.transition.iter().enumerate() {
            if row[v] > 0.0 && !back[u] {
                back[u] = true;
                stack.push(u);
            }
        }
    }
    if let Some(g) = back.iter().position(|&b| !b) {
        return Err(Error::Reducible(format!(
            "state {} is unreachable from state {g}",
            spec.initial_state
        )));
    }
    Ok(layer.into_iter().map(|l| l.unwrap()).collect())
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Common period of all states: gcd over edges `u -> v` of
/// `layer(u) + 1 - layer(v)` for BFS layers from the initial state.
pub fn chain_period(spec: &HiddenMarkovSpec) -> Result<usize> {
    let layer = check_irreducible(spec)?;
    Ok(period_from_layers(spec, &layer))
}

fn period_from_layers(spec: &HiddenMarkovSpec, layer: &[usize]) -> usize {
    let mut g = 0usize;
    for u in 0..spec.states() {
        for (v, _) in spec.successors(u) {
            let diff = (layer[u] + 1).abs_diff(layer[v]);
            g = gcd(g, diff);
        }
    }
    g
}

/// Exact long-run frequencies of disjoint length-`h` blocks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LimitTable {
    pub h: usize,
    pub tau: usize,
    pub d: usize,
    pub lifted_state_count: usize,
    /// Sequences with positive limit; absent sequences have limit zero.
    pub entries: BTreeMap<ModeSequence, f64>,
}

impl LimitTable {
    pub fn get(&self, q: &ModeSequence) -> f64 {
        self.entries.get(q).copied().unwrap_or(0.0)
    }

    /// Per-mode frequencies implied by the block limits.
    pub fn mode_frequencies(&self, modes: usize) -> Vec<f64> {
        let mut out = vec![0.0; modes];
        for (q, &w) in &self.entries {
            for (o, f) in out.iter_mut().zip(count_vector(q, modes).fractions()) {
                *o += w * f;
            }
        }
        out
    }
}

/// How [`limit_oracle_with`] obtains the stationary law of the path chain.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StationaryMethod {
    /// Dense solve over paths when small enough, factored otherwise.
    Auto,
    /// Dense solve of `pi (P - I) = 0`, `sum pi = 1` over all paths.
    Dense,
    /// `pi(path) = nu(first state) * path probability`, with `nu` stationary
    /// for the `d`-step chain on the initial cyclic class.
    Factored,
}

pub fn limit_oracle(spec: &HiddenMarkovSpec, h: usize) -> Result<LimitTable> {
    limit_oracle_with(spec, h, StationaryMethod::Auto)
}

pub fn limit_oracle_with(
    spec: &HiddenMarkovSpec,
    h: usize,
    method: StationaryMethod,
) -> Result<LimitTable> {
    if h == 0 {
        return Err(Error::InvalidInput("h must be at least 1".into()));
    }
    let layer = check_irreducible(spec)?;
    let tau = period_from_layers(spec, &layer);
    let d = tau * h;
    let start: Vec<usize> = (0..spec.states()).filter(|&g| layer[g] % tau == 0).collect();

    let paths = enumerate_paths(spec, &start, d)?;
    let count = paths.len();
    let use_dense = match method {
        StationaryMethod::Dense => true,
        StationaryMethod::Factored => false,
        StationaryMethod::Auto => count <= DENSE_LIFTED_LIMIT,
    };
    let pi = if use_dense {
        dense_path_stationary(spec, &paths)?
    } else {
        factored_path_stationary(spec, &start, d, &paths)?
    };

    let mut acc: HashMap<Vec<usize>, f64> = HashMap::new();
    for (path, &w) in paths.iter().zip(&pi) {
        for block in path.states.chunks(h) {
            let key: Vec<usize> = block.iter().map(|&g| spec.mode_of[g]).collect();
            *acc.entry(key).or_insert(0.0) += w / tau as f64;
        }
    }
    let entries = acc
        .into_iter()
        .filter(|(_, w)| *w > 0.0)
        .map(|(k, w)| (ModeSequence::new(k, spec.modes()).expect("modes come from the partition"), w))
        .collect();
    Ok(LimitTable {
        h,
        tau,
        d,
        lifted_state_count: count,
        entries,
    })
}

struct Path {
    states: Vec<usize>,
    prob: f64,
}

fn enumerate_paths(spec: &HiddenMarkovSpec, start: &[usize], d: usize) -> Result<Vec<Path>> {
    let mut frontier: Vec<Path> = start
        .iter()
        .map(|&g| Path {
            states: vec![g],
            prob: 1.0,
        })
        .collect();
    for _ in 1..d {
        let mut next = Vec::new();
        for p in &frontier {
            let last = *p.states.last().unwrap();
            for (v, pr) in spec.successors(last) {
                let mut states = p.states.clone();
                states.push(v);
                next.push(Path {
                    states,
                    prob: p.prob * pr,
                });
                if next.len() > LIFTED_STATE_LIMIT {
                    return Err(Error::ResourceGuard {
                        what: "lifted path states",
                        count: next.len() as u128,
                        limit: LIFTED_STATE_LIMIT as u128,
                    });
                }
            }
        }
        frontier = next;
    }
    Ok(frontier)
}

fn dense_path_stationary(spec: &HiddenMarkovSpec, paths: &[Path]) -> Result<Vec<f64>> {
    let n = paths.len();
    // (P' - I) pi = 0 with the last equation replaced by sum pi = 1
    let mut a = vec![0.0; n * n];
    for (i, from) in paths.iter().enumerate() {
        let last = *from.states.last().unwrap();
        for (j, to) in paths.iter().enumerate() {
            let p = spec.transition[last][to.states[0]] * to.prob;
            a[j * n + i] += p;
        }
        a[i * n + i] -= 1.0;
    }
    for i in 0..n {
        a[(n - 1) * n + i] = 1.0;
    }
    let mut b = vec![0.0; n];
    b[n - 1] = 1.0;
    solve_dense(&mut a, &mut b, n)?;
    Ok(b)
}

fn factored_path_stationary(
    spec: &HiddenMarkovSpec,
    start: &[usize],
    d: usize,
    paths: &[Path],
) -> Result<Vec<f64>> {
    let s = spec.states();
    // P^d by repeated squaring would reorder sums; plain repeated products suffice here
    let mut pd = vec![0.0; s * s];
    for i in 0..s {
        pd[i * s + i] = 1.0;
    }
    for _ in 0..d {
        let mut next = vec![0.0; s * s];
        for i in 0..s {
            for k in 0..s {
                let v = pd[i * s + k];
                if v == 0.0 {
                    continue;
                }
                for (j, &p) in spec.transition[k].iter().enumerate() {
                    next[i * s + j] += v * p;
                }
            }
        }
        pd = next;
    }
    let n = start.len();
    let mut a = vec![0.0; n * n];
    for (ii, &i) in start.iter().enumerate() {
        for (jj, &j) in start.iter().enumerate() {
            a[jj * n + ii] += pd[i * s + j];
        }
        a[ii * n + ii] -= 1.0;
    }
    for i in 0..n {
        a[(n - 1) * n + i] = 1.0;
    }
    let mut nu = vec![0.0; n];
    nu[n - 1] = 1.0;
    solve_dense(&mut a, &mut nu, n)?;
    let mut weight = vec![0.0; s];
    for (ii, &i) in start.iter().enumerate() {
        weight[i] = nu[ii];
    }
    Ok(paths.iter().map(|p| weight[p.states[0]] * p.prob).collect())
}

/// Empirical mode and block statistics of a finite signal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrequencyStats {
    pub steps: usize,
    pub h: usize,
    pub modes: usize,
    pub per_mode: Vec<f64>,
    /// Averages over the `floor(T / h)` disjoint blocks starting at index 0.
    pub per_sequence: BTreeMap<ModeSequence, f64>,
    /// Min and max of the running per-mode averages over the last 10% of
    /// steps; heuristic liminf/limsup evidence only.
    pub tail_min: Vec<f64>,
    pub tail_max: Vec<f64>,
}

impl FrequencyStats {
    pub fn get(&self, q: &ModeSequence) -> f64 {
        self.per_sequence.get(q).copied().unwrap_or(0.0)
    }

    /// `sum_q (c_s(q) / h) * freq(q)` per mode.
    pub fn aggregated_mode_frequencies(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.modes];
        for (q, &w) in &self.per_sequence {
            for (o, f) in out.iter_mut().zip(count_vector(q, self.modes).fractions()) {
                *o += w * f;
            }
        }
        out
    }
}

pub fn empirical_frequencies(signal: &[usize], h: usize, modes: usize) -> Result<FrequencyStats> {
    if h == 0 || signal.len() < h {
        return Err(Error::InvalidInput(format!(
            "signal of length {} is shorter than h = {h}",
            signal.len()
        )));
    }
    if let Some(bad) = signal.iter().find(|&&s| s == 0 || s > modes) {
        return Err(Error::InvalidInput(format!("mode {bad} outside 1..={modes}")));
    }
    let t = signal.len();
    let tail_start = t - t / 10;
    let mut counts = vec![0usize; modes];
    let mut tail_min = vec![f64::INFINITY; modes];
    let mut tail_max = vec![f64::NEG_INFINITY; modes];
    for (i, &s) in signal.iter().enumerate() {
        counts[s - 1] += 1;
        if i + 1 > tail_start || i + 1 == t {
            let k = (i + 1) as f64;
            for (m, &c) in counts.iter().enumerate() {
                let avg = c as f64 / k;
                tail_min[m] = tail_min[m].min(avg);
                tail_max[m] = tail_max[m].max(avg);
            }
        }
    }
    let blocks = t / h;
    let mut by_index: HashMap<u64, usize> = HashMap::new();
    for b in signal.chunks_exact(h) {
        let idx = b.iter().fold(0u64, |acc, &s| acc * modes as u64 + (s - 1) as u64);
        *by_index.entry(idx).or_insert(0) += 1;
    }
    let per_sequence = by_index
        .into_iter()
        .map(|(idx, c)| (ModeSequence::from_index(idx, h, modes), c as f64 / blocks as f64))
        .collect();
    Ok(FrequencyStats {
        steps: t,
        h,
        modes,
        per_mode: counts.iter().map(|&c| c as f64 / t as f64).collect(),
        per_sequence,
        tail_min,
        tail_max,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrequencyBoundsReport {
    pub pass: bool,
    pub per_mode: Vec<f64>,
    pub aggregated: Vec<f64>,
    /// 1-based modes whose empirical average leaves the widened bounds.
    pub mode_violations: Vec<usize>,
    /// 1-based modes whose block aggregate leaves the widened bounds.
    pub aggregate_violations: Vec<usize>,
}

/// Checks per-mode averages and block aggregates against the bounds widened by `tol`.
pub fn check_frequency_bounds(
    stats: &FrequencyStats,
    bounds: &ActivationBounds,
    tol: f64,
) -> Result<FrequencyBoundsReport> {
    if bounds.modes() != stats.modes {
        return Err(Error::Dimension("bounds and statistics disagree on the mode count".into()));
    }
    let aggregated = stats.aggregated_mode_frequencies();
    let outside = |v: &[f64]| -> Vec<usize> {
        v.iter()
            .enumerate()
            .filter(|(s, &f)| f < bounds.lower()[*s] - tol || f > bounds.upper()[*s] + tol)
            .map(|(s, _)| s + 1)
            .collect()
    };
    let mode_violations = outside(&stats.per_mode);
    let aggregate_violations = outside(&aggregated);
    Ok(FrequencyBoundsReport {
        pass: mode_violations.is_empty() && aggregate_violations.is_empty(),
        per_mode: stats.per_mode.clone(),
        aggregated,
        mode_violations,
        aggregate_violations,
    })
}
