//! Set functions over bus subsets.
//!
//! All five objectives are evaluated on the sampling matrix Θ(M):
//!
//! * `Pc`: percent of covered (l, t) cells.
//! * `Psc`: percent of locations covered at least once.
//! * `Fls`: mean over (l, t) of the best similarity to a location sampled at t.
//! * `Flst`: the space-time variant, maximizing `S[l][m] * rho^(t-j)` over
//!   every sampled (m, j) with j <= t. Quadratic in T; kept as the oracle.
//! * `Rfl`: the same value through `pi_t = max(spatial_t, rho * pi_{t-1})`.
//!
//! A slot with nothing sampled has no spatial term: it adds 0 to FLS and
//! lets RFL carry `rho * pi_{t-1}`.
//!
//! Each location's row is summed in slot order into its own accumulator and
//! the row totals are then added in location order. Every path uses this
//! order, so a gain computed incrementally and one computed from scratch are
//! bit-identical.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::occupancy::{sampling_matrix, OccupancyTensor, SamplingMatrix};
use crate::similarity::{causal_kernel, SimilarityMatrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectiveKind {
    Pc,
    Psc,
    Fls,
    Flst,
    Rfl,
}

impl ObjectiveKind {
    pub fn name(self) -> &'static str {
        match self {
            ObjectiveKind::Pc => "pc",
            ObjectiveKind::Psc => "psc",
            ObjectiveKind::Fls => "fls",
            ObjectiveKind::Flst => "flst",
            ObjectiveKind::Rfl => "rfl",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        [Self::Pc, Self::Psc, Self::Fls, Self::Flst, Self::Rfl]
            .into_iter()
            .find(|k| k.name() == name)
    }
}

/// An objective with its parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Objective {
    Pc,
    Psc,
    Fls,
    Flst { rho: f64 },
    Rfl { rho: f64 },
}

impl Objective {
    pub fn kind(&self) -> ObjectiveKind {
        match self {
            Objective::Pc => ObjectiveKind::Pc,
            Objective::Psc => ObjectiveKind::Psc,
            Objective::Fls => ObjectiveKind::Fls,
            Objective::Flst { .. } => ObjectiveKind::Flst,
            Objective::Rfl { .. } => ObjectiveKind::Rfl,
        }
    }

    pub fn rho(&self) -> Option<f64> {
        match self {
            Objective::Flst { rho } | Objective::Rfl { rho } => Some(*rho),
            _ => None,
        }
    }

    pub fn needs_similarity(&self) -> bool {
        !matches!(self, Objective::Pc | Objective::Psc)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(rho) = self.rho() {
            if !(0.0..=1.0).contains(&rho) {
                return Err(Error::arg(format!("rho must lie in [0, 1], got {rho}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GainValue {
    pub value: f64,
    pub kind: ObjectiveKind,
}

fn check_similarity(theta: &SamplingMatrix, s: &SimilarityMatrix) -> Result<()> {
    if s.len() != theta.n_locations() {
        return Err(Error::arg(format!(
            "similarity matrix is {}x{}, tensor has {} locations",
            s.len(),
            s.len(),
            theta.n_locations()
        )));
    }
    Ok(())
}

fn cells(theta: &SamplingMatrix) -> f64 {
    (theta.n_locations() * theta.n_slots()) as f64
}

pub fn pc_of(theta: &SamplingMatrix) -> f64 {
    100.0 * theta.count_ones() as f64 / cells(theta)
}

pub fn psc_of(theta: &SamplingMatrix) -> f64 {
    let covered = (0..theta.n_locations()).filter(|&l| theta.row_count(l) > 0).count();
    100.0 * covered as f64 / theta.n_locations() as f64
}

/// Spatial terms, slot-major: `sp[t * L + l] = max over m in θ_t of S[l][m]`,
/// or `-inf` when θ_t is empty.
fn spatial_terms(theta: &SamplingMatrix, s: &SimilarityMatrix) -> Vec<f64> {
    let (l_n, t_n) = (theta.n_locations(), theta.n_slots());
    let mut sp = vec![f64::NEG_INFINITY; l_n * t_n];
    for t in 0..t_n {
        let col = &mut sp[t * l_n..(t + 1) * l_n];
        for m in theta.column(t) {
            max_into(col, s_column(s, m));
        }
    }
    sp
}

#[inline]
fn s_column(s: &SimilarityMatrix, m: usize) -> &[f64] {
    let n = s.len();
    &s.matrix().as_slice()[m * n..(m + 1) * n]
}

#[inline]
fn max_into(acc: &mut [f64], col: &[f64]) {
    for (a, &v) in acc.iter_mut().zip(col) {
        if v > *a {
            *a = v;
        }
    }
}

pub fn fls_of(theta: &SamplingMatrix, s: &SimilarityMatrix) -> Result<f64> {
    check_similarity(theta, s)?;
    let (l_n, t_n) = (theta.n_locations(), theta.n_slots());
    let sp = spatial_terms(theta, s);
    let mut rows = vec![0.0; l_n];
    for t in 0..t_n {
        for (acc, &v) in rows.iter_mut().zip(&sp[t * l_n..(t + 1) * l_n]) {
            *acc += if v == f64::NEG_INFINITY { 0.0 } else { v };
        }
    }
    Ok(total(&rows) / cells(theta))
}

/// Row totals added in location order.
fn total(rows: &[f64]) -> f64 {
    let mut sum = 0.0;
    for &r in rows {
        sum += r;
    }
    sum
}

/// RFL recursion over a full spatial table, slot by slot. Returns the
/// unnormalized sum and fills `pi` (location-major) when given.
fn rfl_table(sp: &[f64], l_n: usize, t_n: usize, rho: f64, mut pi: Option<&mut [f64]>) -> f64 {
    let mut prev = vec![0.0; l_n];
    let mut rows = vec![0.0; l_n];
    for t in 0..t_n {
        let col = &sp[t * l_n..(t + 1) * l_n];
        for l in 0..l_n {
            let v = col[l].max(rho * prev[l]);
            prev[l] = v;
            rows[l] += v;
            if let Some(pi) = pi.as_deref_mut() {
                pi[l * t_n + t] = v;
            }
        }
    }
    total(&rows)
}

pub fn rfl_of(theta: &SamplingMatrix, s: &SimilarityMatrix, rho: f64) -> Result<f64> {
    check_similarity(theta, s)?;
    let (l_n, t_n) = (theta.n_locations(), theta.n_slots());
    let sp = spatial_terms(theta, s);
    Ok(rfl_table(&sp, l_n, t_n, rho, None) / cells(theta))
}

/// Direct double maximization. Cost grows with |Θ| · L · T.
pub fn flst_of(theta: &SamplingMatrix, s: &SimilarityMatrix, rho: f64) -> Result<f64> {
    check_similarity(theta, s)?;
    let (l_n, t_n) = (theta.n_locations(), theta.n_slots());
    let mut sampled: Vec<(usize, usize)> = theta.cells().map(|(m, j)| (j, m)).collect();
    sampled.sort_unstable();
    let mut sum = 0.0;
    for l in 0..l_n {
        for t in 0..t_n {
            let mut best = 0.0f64;
            for &(j, m) in sampled.iter().take_while(|&&(j, _)| j <= t) {
                let v = s.get(l, m) * causal_kernel(rho, t, j);
                if v > best {
                    best = v;
                }
            }
            sum += best;
        }
    }
    Ok(sum / cells(theta))
}

pub fn pc_gain(tensor: &OccupancyTensor, m: &[usize]) -> Result<GainValue> {
    let theta = sampling_matrix(tensor, m)?;
    Ok(GainValue {
        value: pc_of(&theta),
        kind: ObjectiveKind::Pc,
    })
}

pub fn psc_gain(tensor: &OccupancyTensor, m: &[usize]) -> Result<GainValue> {
    let theta = sampling_matrix(tensor, m)?;
    Ok(GainValue {
        value: psc_of(&theta),
        kind: ObjectiveKind::Psc,
    })
}

pub fn fls_gain(tensor: &OccupancyTensor, m: &[usize], s: &SimilarityMatrix) -> Result<GainValue> {
    let theta = sampling_matrix(tensor, m)?;
    Ok(GainValue {
        value: fls_of(&theta, s)?,
        kind: ObjectiveKind::Fls,
    })
}

pub fn flst_gain_reference(tensor: &OccupancyTensor, m: &[usize], s: &SimilarityMatrix, rho: f64) -> Result<GainValue> {
    Objective::Flst { rho }.validate()?;
    let theta = sampling_matrix(tensor, m)?;
    Ok(GainValue {
        value: flst_of(&theta, s, rho)?,
        kind: ObjectiveKind::Flst,
    })
}

pub fn rfl_gain(tensor: &OccupancyTensor, m: &[usize], s: &SimilarityMatrix, rho: f64) -> Result<GainValue> {
    Objective::Rfl { rho }.validate()?;
    let theta = sampling_matrix(tensor, m)?;
    Ok(GainValue {
        value: rfl_of(&theta, s, rho)?,
        kind: ObjectiveKind::Rfl,
    })
}

/// A set function over `0..n_elements()`.
pub trait SetFunction: Sync {
    fn n_elements(&self) -> usize;
    fn value(&self, set: &[usize]) -> f64;
}

/// An objective bound to a tensor and, where needed, a similarity matrix.
#[derive(Clone, Copy, Debug)]
pub struct Evaluator<'a> {
    tensor: &'a OccupancyTensor,
    similarity: Option<&'a SimilarityMatrix>,
    objective: Objective,
}

impl<'a> Evaluator<'a> {
    pub fn new(
        tensor: &'a OccupancyTensor,
        objective: Objective,
        similarity: Option<&'a SimilarityMatrix>,
    ) -> Result<Self> {
        objective.validate()?;
        if objective.needs_similarity() {
            let s = similarity.ok_or_else(|| {
                Error::arg(format!(
                    "objective {} needs a similarity matrix",
                    objective.kind().name()
                ))
            })?;
            if s.len() != tensor.n_locations() {
                return Err(Error::arg(format!(
                    "similarity matrix has {} locations, tensor has {}",
                    s.len(),
                    tensor.n_locations()
                )));
            }
        }
        Ok(Evaluator {
            tensor,
            similarity,
            objective,
        })
    }

    pub fn tensor(&self) -> &'a OccupancyTensor {
        self.tensor
    }

    pub fn objective(&self) -> Objective {
        self.objective
    }

    fn s(&self) -> &'a SimilarityMatrix {
        self.similarity.expect("checked in Evaluator::new")
    }

    pub fn value_of(&self, theta: &SamplingMatrix) -> f64 {
        match self.objective {
            Objective::Pc => pc_of(theta),
            Objective::Psc => psc_of(theta),
            Objective::Fls => fls_of(theta, self.s()).expect("dimensions checked"),
            Objective::Flst { rho } => flst_of(theta, self.s(), rho).expect("dimensions checked"),
            Objective::Rfl { rho } => rfl_of(theta, self.s(), rho).expect("dimensions checked"),
        }
    }

    /// From-scratch gain of `set`. Panics on an out-of-range bus id.
    pub fn gain(&self, set: &[usize]) -> f64 {
        let theta = sampling_matrix(self.tensor, set).expect("bus id out of range");
        self.value_of(&theta)
    }

    pub fn state(&self) -> GainState<'a> {
        GainState::new(*self)
    }
}

impl SetFunction for Evaluator<'_> {
    fn n_elements(&self) -> usize {
        self.tensor.n_buses()
    }

    fn value(&self, set: &[usize]) -> f64 {
        self.gain(set)
    }
}

/// Running state for a committed subset M.
///
/// For FLS and RFL it keeps the spatial table and the π table so a
/// candidate's gain only recomputes slots from its first new cell onward.
#[derive(Clone, Debug)]
pub struct GainState<'a> {
    eval: Evaluator<'a>,
    members: Vec<usize>,
    theta: SamplingMatrix,
    covered_locations: usize,
    /// Slot-major, `-inf` where θ_t is empty.
    spatial: Vec<f64>,
    /// Location-major.
    pi: Vec<f64>,
    gain_sum: f64,
    value: f64,
}

impl<'a> GainState<'a> {
    fn new(eval: Evaluator<'a>) -> Self {
        let (l_n, t_n) = (eval.tensor.n_locations(), eval.tensor.n_slots());
        let theta = SamplingMatrix::zeros(l_n, t_n);
        let tracks_pi = matches!(eval.objective, Objective::Fls | Objective::Rfl { .. });
        let (spatial, pi) = if tracks_pi {
            (vec![f64::NEG_INFINITY; l_n * t_n], vec![0.0; l_n * t_n])
        } else {
            (Vec::new(), Vec::new())
        };
        GainState {
            eval,
            members: Vec::new(),
            theta,
            covered_locations: 0,
            spatial,
            pi,
            gain_sum: 0.0,
            value: 0.0,
        }
    }

    pub fn members(&self) -> &[usize] {
        &self.members
    }

    pub fn theta(&self) -> &SamplingMatrix {
        &self.theta
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    /// π values for RFL and FLS, location-major `pi[l * T + t]`.
    pub fn pi(&self) -> &[f64] {
        &self.pi
    }

    pub fn rho(&self) -> f64 {
        match self.eval.objective {
            Objective::Rfl { rho } => rho,
            _ => 0.0,
        }
    }

    fn new_cells(&self, e: usize) -> Vec<(usize, usize)> {
        self.eval
            .tensor
            .bus_cells(e)
            .iter()
            .copied()
            .filter(|&(t, l)| !self.theta.get(l, t))
            .collect()
    }

    /// Gain of M ∪ {e} without mutating the state.
    pub fn value_with(&self, e: usize) -> f64 {
        let fresh = self.new_cells(e);
        let (l_n, t_n) = (self.theta.n_locations(), self.theta.n_slots());
        let cells = (l_n * t_n) as f64;
        match self.eval.objective {
            Objective::Pc => 100.0 * (self.theta.count_ones() + fresh.len()) as f64 / cells,
            Objective::Psc => {
                let mut seen: Vec<usize> = fresh
                    .iter()
                    .map(|&(_, l)| l)
                    .filter(|&l| self.theta.row_count(l) == 0)
                    .collect();
                seen.sort_unstable();
                seen.dedup();
                100.0 * (self.covered_locations + seen.len()) as f64 / l_n as f64
            }
            Objective::Flst { .. } => {
                let mut set = self.members.clone();
                set.push(e);
                self.eval.gain(&set)
            }
            Objective::Fls | Objective::Rfl { .. } => {
                if fresh.is_empty() {
                    return self.value;
                }
                self.rfl_sum_with(&fresh).0 / cells
            }
        }
    }

    /// `gain(M ∪ {e}) − gain(M)`, exact with respect to from-scratch evaluation.
    pub fn incremental_gain(&self, e: usize) -> f64 {
        self.value_with(e) - self.value
    }

    /// Recomputes π from the first slot touched by `fresh` (sorted by slot).
    /// Returns the new sum and, per touched slot, the updated spatial column.
    fn rfl_sum_with(&self, fresh: &[(usize, usize)]) -> (f64, Vec<(usize, Vec<f64>)>) {
        let s = self.eval.s();
        let (l_n, t_n) = (self.theta.n_locations(), self.theta.n_slots());
        let rho = self.rho();
        let mut cols: Vec<(usize, Vec<f64>)> = Vec::new();
        for &(t, m) in fresh {
            if cols.last().map(|c| c.0) != Some(t) {
                cols.push((t, self.spatial[t * l_n..(t + 1) * l_n].to_vec()));
            }
            max_into(&mut cols.last_mut().expect("pushed above").1, s_column(s, m));
        }
        let t0 = cols[0].0;
        let mut sum = 0.0;
        for l in 0..l_n {
            let row = &self.pi[l * t_n..(l + 1) * t_n];
            let mut acc = 0.0;
            for &v in &row[..t0] {
                acc += v;
            }
            let mut prev = if t0 == 0 { 0.0 } else { row[t0 - 1] };
            let mut next_col = 0;
            for t in t0..t_n {
                let sp = if next_col < cols.len() && cols[next_col].0 == t {
                    next_col += 1;
                    cols[next_col - 1].1[l]
                } else {
                    self.spatial[t * l_n + l]
                };
                let v = sp.max(rho * prev);
                acc += v;
                prev = v;
            }
            sum += acc;
        }
        (sum, cols)
    }

    /// Adds bus `e` to M.
    pub fn commit(&mut self, e: usize) {
        assert!(e < self.eval.tensor.n_buses(), "bus id {e} out of range");
        if self.members.contains(&e) {
            return;
        }
        let fresh = self.new_cells(e);
        self.members.push(e);
        let (l_n, t_n) = (self.theta.n_locations(), self.theta.n_slots());
        if matches!(self.eval.objective, Objective::Fls | Objective::Rfl { .. }) && !fresh.is_empty() {
            let (_, cols) = self.rfl_sum_with(&fresh);
            for (t, col) in cols {
                self.spatial[t * l_n..(t + 1) * l_n].copy_from_slice(&col);
            }
            self.gain_sum = rfl_table(&self.spatial, l_n, t_n, self.rho(), Some(&mut self.pi));
        }
        for &(t, l) in &fresh {
            if self.theta.row_count(l) == 0 {
                self.covered_locations += 1;
            }
            self.theta.set(l, t);
        }
        self.value = match self.eval.objective {
            Objective::Fls | Objective::Rfl { .. } => self.gain_sum / (l_n * t_n) as f64,
            _ => self.eval.value_of(&self.theta),
        };
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use proptest::prelude::*;

    fn sim(l_n: usize, vals: &[f64]) -> SimilarityMatrix {
        SimilarityMatrix::from_matrix(DMatrix::from_row_slice(l_n, l_n, vals)).unwrap()
    }

    fn tensor(l: usize, t: usize, b: usize, entries: &[(usize, usize, usize)]) -> OccupancyTensor {
        OccupancyTensor::new(l, t, b, entries.to_vec()).unwrap()
    }

    /// Random tensor and similarity from a seed; S built from points on a line.
    fn instance(seed: u64, l_n: usize, t_n: usize, b_n: usize) -> (OccupancyTensor, SimilarityMatrix) {
        use rand::Rng;
        let mut rng = crate::rng::seeded(seed, 99);
        let mut entries = Vec::new();
        for b in 0..b_n {
            for l in 0..l_n {
                for t in 0..t_n {
                    if rng.random::<f64>() < 0.15 {
                        entries.push((l, t, b));
                    }
                }
            }
        }
        let xs: Vec<f64> = (0..l_n).map(|_| rng.random::<f64>()).collect();
        let d = DMatrix::from_fn(l_n, l_n, |i, j| (xs[i] - xs[j]).abs());
        let max = d.max().max(1e-9);
        let s = SimilarityMatrix::from_matrix(d.map(|v| 1.0 - v / max)).unwrap();
        (tensor(l_n, t_n, b_n, &entries), s)
    }

    #[test]
    fn pc_counts_cells() {
        // 5 entries in a 4x3 grid
        let y = tensor(4, 3, 1, &[(0, 0, 0), (1, 1, 0), (2, 2, 0), (3, 0, 0), (3, 2, 0)]);
        let g = pc_gain(&y, &[0]).unwrap().value;
        assert!((g - 41.666_666_666_666_67).abs() < 1e-9);
        assert_eq!(pc_gain(&y, &[]).unwrap().value, 0.0);
    }

    #[test]
    fn psc_counts_locations() {
        let y = tensor(5, 2, 2, &[(0, 0, 0), (0, 1, 1), (3, 1, 1)]);
        assert_eq!(psc_gain(&y, &[0, 1]).unwrap().value, 40.0);
        assert_eq!(psc_gain(&y, &[]).unwrap().value, 0.0);
    }

    #[test]
    fn fls_two_locations_one_sampled() {
        let y = tensor(2, 1, 1, &[(0, 0, 0)]);
        let s = sim(2, &[1.0, 0.5, 0.5, 1.0]);
        assert_eq!(fls_gain(&y, &[0], &s).unwrap().value, 0.75);
        assert_eq!(fls_gain(&y, &[], &s).unwrap().value, 0.0);
    }

    #[test]
    fn fls_full_coverage_is_one() {
        let entries: Vec<_> = (0..3).flat_map(|l| (0..2).map(move |t| (l, t, 0))).collect();
        let y = tensor(3, 2, 1, &entries);
        let s = sim(3, &[1.0, 0.2, 0.0, 0.2, 1.0, 0.3, 0.0, 0.3, 1.0]);
        assert_eq!(fls_gain(&y, &[0], &s).unwrap().value, 1.0);
    }

    #[test]
    fn space_time_hand_example() {
        // location 0 sampled only at t=0: pi = [1, .5; .5, .25]
        let y = tensor(2, 2, 1, &[(0, 0, 0)]);
        let s = sim(2, &[1.0, 0.5, 0.5, 1.0]);
        assert_eq!(flst_gain_reference(&y, &[0], &s, 0.5).unwrap().value, 0.5625);
        assert_eq!(rfl_gain(&y, &[0], &s, 0.5).unwrap().value, 0.5625);
        assert_eq!(flst_gain_reference(&y, &[], &s, 0.5).unwrap().value, 0.0);
    }

    #[test]
    fn rho_one_holds_peak() {
        let y = tensor(1, 5, 1, &[(0, 1, 0)]);
        let s = SimilarityMatrix::identity(1);
        let ev = Evaluator::new(&y, Objective::Rfl { rho: 1.0 }, Some(&s)).unwrap();
        let mut st = ev.state();
        st.commit(0);
        assert_eq!(st.pi(), &[0.0, 1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn rejects_bad_rho_and_missing_similarity() {
        let y = tensor(2, 2, 1, &[(0, 0, 0)]);
        let s = SimilarityMatrix::identity(2);
        assert!(rfl_gain(&y, &[0], &s, 1.5).is_err());
        assert!(Evaluator::new(&y, Objective::Fls, None).is_err());
        let s3 = SimilarityMatrix::identity(3);
        assert!(Evaluator::new(&y, Objective::Fls, Some(&s3)).is_err());
    }

    #[test]
    fn saturated_candidate_adds_nothing() {
        let y = tensor(2, 2, 2, &[(0, 0, 0), (1, 0, 0), (0, 1, 0), (1, 1, 0), (0, 0, 1)]);
        let s = sim(2, &[1.0, 0.5, 0.5, 1.0]);
        let ev = Evaluator::new(&y, Objective::Rfl { rho: 0.0 }, Some(&s)).unwrap();
        let mut st = ev.state();
        st.commit(0);
        assert_eq!(st.incremental_gain(1), 0.0);
    }

    /// Recomputing from scratch is the oracle for every incremental step.
    #[test]
    fn incremental_matches_recompute_exactly() {
        let (y, s) = instance(3, 7, 5, 6);
        for obj in [
            Objective::Pc,
            Objective::Psc,
            Objective::Fls,
            Objective::Rfl { rho: 0.98 },
            Objective::Rfl { rho: 0.5 },
            Objective::Flst { rho: 0.9 },
        ] {
            let ev = Evaluator::new(&y, obj, Some(&s)).unwrap();
            let mut st = ev.state();
            for &committed in &[2usize, 0, 5] {
                for e in 0..6 {
                    let mut with = st.members().to_vec();
                    with.push(e);
                    let expected = ev.gain(&with) - ev.gain(st.members());
                    assert_eq!(st.incremental_gain(e), expected, "{obj:?} e={e}");
                }
                st.commit(committed);
                assert_eq!(st.value(), ev.gain(st.members()));
            }
        }
    }

    #[test]
    fn singleton_gain_from_empty_set() {
        let (y, s) = instance(11, 6, 4, 5);
        let ev = Evaluator::new(&y, Objective::Rfl { rho: 0.98 }, Some(&s)).unwrap();
        let st = ev.state();
        for e in 0..5 {
            assert_eq!(st.incremental_gain(e), rfl_gain(&y, &[e], &s, 0.98).unwrap().value);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn rfl_equals_reference(seed in any::<u64>(), l_n in 1usize..12, t_n in 1usize..8, b_n in 1usize..6,
                                rho in prop_oneof![Just(0.0), Just(0.5), Just(0.98), Just(1.0), 0.0f64..=1.0]) {
            let (y, s) = instance(seed, l_n, t_n, b_n);
            let all: Vec<usize> = (0..b_n).collect();
            let fast = rfl_gain(&y, &all, &s, rho).unwrap().value;
            let slow = flst_gain_reference(&y, &all, &s, rho).unwrap().value;
            prop_assert!((fast - slow).abs() <= 1e-10, "{fast} vs {slow}");
        }

        #[test]
        fn rho_zero_is_fls(seed in any::<u64>(), l_n in 1usize..12, t_n in 1usize..8, b_n in 1usize..6) {
            let (y, s) = instance(seed, l_n, t_n, b_n);
            let all: Vec<usize> = (0..b_n).collect();
            prop_assert_eq!(rfl_gain(&y, &all, &s, 0.0).unwrap().value, fls_gain(&y, &all, &s).unwrap().value);
        }

        #[test]
        fn gains_are_monotone_and_bounded(seed in any::<u64>(), mask in 0u32..64, extra in 0usize..6) {
            let (y, s) = instance(seed, 8, 5, 6);
            let small: Vec<usize> = (0..6).filter(|b| mask & (1 << b) != 0).collect();
            let mut big = small.clone();
            if !big.contains(&extra) { big.push(extra); }
            for obj in [Objective::Pc, Objective::Psc, Objective::Fls, Objective::Flst { rho: 0.7 }, Objective::Rfl { rho: 0.98 }] {
                let ev = Evaluator::new(&y, obj, Some(&s)).unwrap();
                let (a, b) = (ev.gain(&small), ev.gain(&big));
                prop_assert!(a <= b + 1e-12, "{:?}: {} > {}", obj, a, b);
                let hi = if matches!(obj, Objective::Pc | Objective::Psc) { 100.0 } else { 1.0 };
                prop_assert!((0.0..=hi).contains(&b));
            }
            let ev = Evaluator::new(&y, Objective::Rfl { rho: 0.98 }, Some(&s)).unwrap();
            let mut st = ev.state();
            for &e in &big { st.commit(e); }
            for l in 0..8 {
                for t in 0..5 {
                    let p = st.pi()[l * 5 + t];
                    prop_assert!((0.0..=1.0).contains(&p));
                    if t > 0 { prop_assert!(p >= 0.98 * st.pi()[l * 5 + t - 1]); }
                }
            }
        }
    }
}
