//! Feature ordering for exchangeable features.
//!
//! Columns of a saliency mask are compared by Euclidean distance and the
//! features are arranged so that neighbours in the order have similar
//! importance over time: a shortest Hamiltonian path (or tour) through the
//! distance matrix, found by simulated annealing with swap moves.

use std::fmt;

use itertools::Itertools;
use rand::Rng;
use rand::seq::SliceRandom;

use crate::config::{parse, parse_bool, Section};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, stream_rng};
use crate::tensor::Tensor;

const MAX_BRUTE_FORCE: usize = 9;

/// Which masks the distances are computed from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Aggregate {
    /// Element-wise mean of every available mask.
    #[default]
    Mean,
    /// A single sample's mask.
    Sample(usize),
}

impl fmt::Display for Aggregate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Aggregate::Mean => f.write_str("mean"),
            Aggregate::Sample(id) => write!(f, "sample:{id}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PermuteConfig {
    pub seed: u64,
    /// Close the path into a tour.
    pub cycle: bool,
    pub aggregate: Aggregate,
    /// Independent annealing runs; the best one is kept.
    pub restarts: usize,
    /// `None` picks the data-dependent default (see [`Schedule::for_distances`]).
    pub psi0: Option<f64>,
    pub psi_min: Option<f64>,
    pub alpha: f64,
    pub iters_per_temp: Option<usize>,
}

impl Default for PermuteConfig {
    fn default() -> Self {
        PermuteConfig {
            seed: 0,
            cycle: false,
            aggregate: Aggregate::Mean,
            restarts: 4,
            psi0: None,
            psi_min: None,
            alpha: 0.95,
            iters_per_temp: None,
        }
    }
}

fn parse_auto<T: std::str::FromStr>(key: &str, value: &str) -> Result<Option<T>> {
    if value == "auto" {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

fn show_auto<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(|| "auto".to_string(), T::to_string)
}

impl PermuteConfig {
    pub fn validate(&self) -> Result<()> {
        if self.restarts == 0 {
            return Err(Error::Config("permute.restarts must be >= 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Schedule(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if let (Some(a), Some(b)) = (self.psi0, self.psi_min) {
            if !(b > 0.0 && a > b) {
                return Err(Error::Schedule(format!("need psi0 > psi_min > 0, got {a} and {b}")));
            }
        }
        if self.iters_per_temp == Some(0) {
            return Err(Error::Schedule("iters_per_temp must be >= 1".into()));
        }
        Ok(())
    }

    /// The annealing schedule for `dist`, filling in defaults.
    pub fn schedule(&self, dist: &DistanceMatrix) -> Schedule {
        let auto = Schedule::for_distances(dist);
        let psi0 = self.psi0.unwrap_or(auto.psi0);
        Schedule {
            psi0,
            psi_min: self.psi_min.unwrap_or(1e-3 * psi0),
            alpha: self.alpha,
            iters_per_temp: self.iters_per_temp.unwrap_or(auto.iters_per_temp),
        }
    }
}

impl Section for PermuteConfig {
    fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "seed" => self.seed = parse(key, value)?,
            "cycle" => self.cycle = parse_bool(key, value)?,
            "aggregate" => self.aggregate = value.parse()?,
            "restarts" => self.restarts = parse(key, value)?,
            "psi0" => self.psi0 = parse_auto(key, value)?,
            "psi_min" => self.psi_min = parse_auto(key, value)?,
            "alpha" => self.alpha = parse(key, value)?,
            "iters_per_temp" => self.iters_per_temp = parse_auto(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("seed", self.seed.to_string()),
            ("cycle", self.cycle.to_string()),
            ("aggregate", self.aggregate.to_string()),
            ("restarts", self.restarts.to_string()),
            ("psi0", show_auto(&self.psi0)),
            ("psi_min", show_auto(&self.psi_min)),
            ("alpha", self.alpha.to_string()),
            ("iters_per_temp", show_auto(&self.iters_per_temp)),
        ]
    }
}

/// `√Σ_t (m[t,a] − m[t,b])²` for a `[w, D]` mask.
pub fn feature_distance(mask: &Tensor, a: usize, b: usize) -> Result<f64> {
    if mask.rank() != 2 {
        return Err(Error::shape("feature_distance", format!("mask shape {:?}", mask.shape())));
    }
    let (w, d) = mask.dims2();
    for i in [a, b] {
        if i >= d {
            return Err(Error::IndexOutOfRange { index: i, len: d });
        }
    }
    Ok((0..w)
        .map(|t| (mask.get2(t, a) - mask.get2(t, b)).powi(2))
        .sum::<f64>()
        .sqrt())
}

/// Symmetric, non-negative, zero-diagonal `D × D` matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    data: Vec<f64>,
}

impl DistanceMatrix {
    pub fn new(n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::shape("distance_matrix", format!("{} entries for n = {n}", data.len())));
        }
        for a in 0..n {
            if data[a * n + a] != 0.0 {
                return Err(Error::Invalid(format!("distance diagonal ({a},{a}) is not zero")));
            }
            for b in 0..n {
                let v = data[a * n + b];
                if !(v >= 0.0 && v.is_finite()) || v != data[b * n + a] {
                    return Err(Error::Invalid(format!(
                        "distance ({a},{b}) = {v} must be finite, non-negative and symmetric"
                    )));
                }
            }
        }
        Ok(DistanceMatrix { n, data })
    }

    /// Pairwise column distances of a `[w, D]` mask.
    pub fn from_mask(mask: &Tensor) -> Result<Self> {
        if mask.rank() != 2 {
            return Err(Error::shape("distance_matrix", format!("mask shape {:?}", mask.shape())));
        }
        let n = mask.shape()[1];
        let mut data = vec![0.0; n * n];
        for a in 0..n {
            for b in a + 1..n {
                let v = feature_distance(mask, a, b)?;
                data[a * n + b] = v;
                data[b * n + a] = v;
            }
        }
        DistanceMatrix::new(n, data)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.data[a * self.n + b]
    }

    /// Mean over off-diagonal entries (0 when `n < 2`).
    pub fn mean_off_diagonal(&self) -> f64 {
        if self.n < 2 {
            return 0.0;
        }
        self.data.iter().sum::<f64>() / (self.n * (self.n - 1)) as f64
    }
}

fn check_bijection(perm: &[usize], n: usize) -> Result<()> {
    if perm.len() != n {
        return Err(Error::InvalidPermutation(format!("length {} for {n} features", perm.len())));
    }
    let mut seen = vec![false; n];
    for &p in perm {
        if p >= n || std::mem::replace(&mut seen[p], true) {
            return Err(Error::InvalidPermutation(format!("{perm:?} is not a bijection on 0..{n}")));
        }
    }
    Ok(())
}

fn path_length(perm: &[usize], dist: &DistanceMatrix, cycle: bool) -> f64 {
    let open: f64 = perm.windows(2).map(|p| dist.get(p[0], p[1])).sum();
    match (cycle, perm.first(), perm.last()) {
        (true, Some(&a), Some(&b)) if perm.len() > 2 => open + dist.get(b, a),
        _ => open,
    }
}

/// Sum of distances between consecutive features in `perm`, plus the
/// closing edge when `cycle` is set.
pub fn permutation_objective(perm: &[usize], dist: &DistanceMatrix, cycle: bool) -> Result<f64> {
    check_bijection(perm, dist.len())?;
    Ok(path_length(perm, dist, cycle))
}

/// Geometric cooling: `ψ ← α·ψ` from `psi0` until `ψ ≤ psi_min`, with
/// `iters_per_temp` proposals at each temperature.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Schedule {
    pub psi0: f64,
    pub psi_min: f64,
    pub alpha: f64,
    pub iters_per_temp: usize,
}

impl Schedule {
    /// `ψ0` = mean off-diagonal distance, `ψ_min = 1e-3·ψ0`, `α = 0.95`,
    /// `20·D` proposals per temperature.
    pub fn for_distances(dist: &DistanceMatrix) -> Self {
        let psi0 = dist.mean_off_diagonal();
        Schedule {
            psi0,
            psi_min: 1e-3 * psi0,
            alpha: 0.95,
            iters_per_temp: 20 * dist.len(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Schedule(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if !(self.psi_min > 0.0 && self.psi0 > self.psi_min && self.psi0.is_finite()) {
            return Err(Error::Schedule(format!(
                "need psi0 > psi_min > 0, got {} and {}",
                self.psi0, self.psi_min
            )));
        }
        if self.iters_per_temp == 0 {
            return Err(Error::Schedule("iters_per_temp must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Annealed {
    pub permutation: Vec<usize>,
    pub objective: f64,
    /// Best objective seen so far, after each temperature level.
    pub record: Vec<f64>,
}

/// Simulated annealing from a seeded random start. Swaps two positions per
/// proposal and accepts uphill moves with probability `exp(−Δ/ψ)`.
pub fn simulated_annealing(
    dist: &DistanceMatrix,
    schedule: &Schedule,
    seed: u64,
    cycle: bool,
) -> Result<Annealed> {
    let n = dist.len();
    if n < 2 {
        return Err(Error::Invalid(format!("annealing needs at least 2 features, got {n}")));
    }
    schedule.validate()?;
    let mut rng = stream_rng(seed, 0);
    let mut state: Vec<usize> = (0..n).collect();
    state.shuffle(&mut rng);
    let mut current = path_length(&state, dist, cycle);
    let mut best = (state.clone(), current);
    let mut record = Vec::new();
    let mut psi = schedule.psi0;
    while psi > schedule.psi_min {
        for _ in 0..schedule.iters_per_temp {
            let i = rng.random_range(0..n);
            let j = (i + rng.random_range(1..n)) % n;
            state.swap(i, j);
            let proposed = path_length(&state, dist, cycle);
            let delta = proposed - current;
            if delta <= 0.0 || rng.random::<f64>() < (-delta / psi).exp() {
                current = proposed;
                if current < best.1 {
                    best = (state.clone(), current);
                }
            } else {
                state.swap(i, j);
            }
        }
        record.push(best.1);
        psi *= schedule.alpha;
    }
    Ok(Annealed {
        permutation: best.0,
        objective: best.1,
        record,
    })
}

/// Best ordering for `dist` under `cfg`: several seeded annealing
/// restarts, ties resolved towards the lower restart index. Degenerate
/// inputs (fewer than two features, or all distances zero) return the
/// identity.
pub fn solve(dist: &DistanceMatrix, cfg: &PermuteConfig) -> Result<Annealed> {
    cfg.validate()?;
    let n = dist.len();
    if n < 2 || dist.mean_off_diagonal() == 0.0 {
        let permutation: Vec<usize> = (0..n).collect();
        let objective = path_length(&permutation, dist, cfg.cycle);
        return Ok(Annealed {
            permutation,
            objective,
            record: vec![objective],
        });
    }
    let schedule = cfg.schedule(dist);
    let runs: Vec<Annealed> = (0..cfg.restarts as u64)
        .map(|r| simulated_annealing(dist, &schedule, derive_seed(cfg.seed, r), cfg.cycle))
        .collect::<Result<_>>()?;
    Ok(runs
        .into_iter()
        .reduce(|a, b| if b.objective < a.objective { b } else { a })
        .expect("at least one restart"))
}

/// Exhaustive minimum over all orderings, first in lexicographic order on
/// ties. Limited to 9 features.
pub fn brute_force_permutation(dist: &DistanceMatrix, cycle: bool) -> Result<(Vec<usize>, f64)> {
    let n = dist.len();
    if n > MAX_BRUTE_FORCE {
        return Err(Error::Invalid(format!(
            "brute force is limited to {MAX_BRUTE_FORCE} features, got {n}"
        )));
    }
    let mut best: Option<(Vec<usize>, f64)> = None;
    for perm in (0..n).permutations(n) {
        let v = path_length(&perm, dist, cycle);
        if best.as_ref().is_none_or(|(_, b)| v < *b) {
            best = Some((perm, v));
        }
    }
    Ok(best.unwrap_or((Vec::new(), 0.0)))
}

/// Element-wise mean of equally shaped masks.
pub fn mean_mask(masks: &[Tensor]) -> Result<Tensor> {
    let first = masks
        .first()
        .ok_or_else(|| Error::Invalid("no masks to aggregate".into()))?;
    let mut out = Tensor::zeros(first.shape());
    for m in masks {
        if m.shape() != first.shape() {
            return Err(Error::shape("mean_mask", format!("{:?} vs {:?}", m.shape(), first.shape())));
        }
        for (o, v) in out.data_mut().iter_mut().zip(m.data()) {
            *o += v;
        }
    }
    let k = masks.len() as f64;
    Ok(out.map(|v| v / k))
}
