//! Greedy maximization of monotone submodular gains.
//!
//! Ties between equal marginal gains go to the lowest bus id. Gains are
//! compared exactly: every candidate is scored by the same code path in the
//! same summation order.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::path::Path;

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objectives::{Evaluator, ObjectiveKind, SetFunction};
use crate::rng;

/// Largest number of subsets `brute_force_select` will enumerate.
pub const BRUTE_FORCE_BUDGET: u128 = 1_000_000;

/// Property checks pass when every slack is at least this.
pub const PROPERTY_TOLERANCE: f64 = -1e-12;

/// Relative band around the lazy-greedy leader that is always re-scored.
pub const LAZY_SLACK: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    /// Bus ids in pick order.
    pub chosen: Vec<usize>,
    /// Gain after each pick.
    pub gain_trajectory: Vec<f64>,
    pub objective: Option<ObjectiveKind>,
    pub rho: Option<f64>,
    pub k: usize,
    /// Number of gain evaluations spent.
    pub evaluations: usize,
}

impl SelectionResult {
    pub fn final_gain(&self) -> f64 {
        self.gain_trajectory.last().copied().unwrap_or(0.0)
    }

    /// `id,gain` lines under a `# objective=... rho=... k=...` header.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "# objective={} rho={} k={} evaluations={}\nround,bus,gain\n",
            self.objective.map_or("none", |k| k.name()),
            self.rho.map_or("none".to_string(), |r| r.to_string()),
            self.k,
            self.evaluations
        );
        for (i, (b, g)) in self.chosen.iter().zip(&self.gain_trajectory).enumerate() {
            out.push_str(&format!("{},{},{}\n", i + 1, b, g));
        }
        out
    }

    /// Inverse of [`SelectionResult::to_text`].
    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |msg: &str| Error::Format(format!("selection file: {msg}"));
        let mut lines = text.lines();
        let header = lines
            .next()
            .and_then(|h| h.strip_prefix("# "))
            .ok_or_else(|| bad("missing header"))?;
        let mut res = SelectionResult {
            chosen: Vec::new(),
            gain_trajectory: Vec::new(),
            objective: None,
            rho: None,
            k: 0,
            evaluations: 0,
        };
        for field in header.split_whitespace() {
            let (key, value) = field.split_once('=').ok_or_else(|| bad("malformed header"))?;
            let num_err = || bad(&format!("bad {key} `{value}`"));
            match (key, value) {
                ("objective", "none") | ("rho", "none") => {}
                ("objective", v) => res.objective = Some(ObjectiveKind::from_name(v).ok_or_else(num_err)?),
                ("rho", v) => res.rho = Some(v.parse().map_err(|_| num_err())?),
                ("k", v) => res.k = v.parse().map_err(|_| num_err())?,
                ("evaluations", v) => res.evaluations = v.parse().map_err(|_| num_err())?,
                _ => return Err(bad(&format!("unknown header field `{key}`"))),
            }
        }
        if lines.next() != Some("round,bus,gain") {
            return Err(bad("missing column header"));
        }
        for (i, line) in lines.enumerate() {
            let f: Vec<&str> = line.split(',').collect();
            let parsed = match f.as_slice() {
                [r, b, g] => r
                    .parse::<usize>()
                    .ok()
                    .zip(b.parse::<usize>().ok())
                    .zip(g.parse::<f64>().ok()),
                _ => None,
            };
            match parsed {
                Some(((r, b), g)) if r == i + 1 => {
                    res.chosen.push(b);
                    res.gain_trajectory.push(g);
                }
                _ => return Err(bad(&format!("bad row `{line}`"))),
            }
        }
        if res.chosen.len() != res.k {
            return Err(bad(&format!("{} rows for k = {}", res.chosen.len(), res.k)));
        }
        Ok(res)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

fn check_k(k: usize, b: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::arg("k must be at least 1"));
    }
    if k > b {
        return Err(Error::arg(format!("k = {k} exceeds the fleet size B = {b}")));
    }
    Ok(())
}

fn result(
    eval: &Evaluator<'_>,
    chosen: Vec<usize>,
    trajectory: Vec<f64>,
    k: usize,
    evaluations: usize,
) -> SelectionResult {
    SelectionResult {
        chosen,
        gain_trajectory: trajectory,
        objective: Some(eval.objective().kind()),
        rho: eval.objective().rho(),
        k,
        evaluations,
    }
}

/// Returns the first candidate with the largest gain.
fn argmax(scored: &[(usize, f64)]) -> (usize, f64) {
    let mut best = scored[0];
    for &(e, g) in &scored[1..] {
        if g > best.1 {
            best = (e, g);
        }
    }
    best
}

/// Plain greedy: each round scores every unselected bus.
pub fn greedy_select(eval: &Evaluator<'_>, k: usize) -> Result<SelectionResult> {
    let b_n = eval.tensor().n_buses();
    check_k(k, b_n)?;
    let mut state = eval.state();
    let mut selected = vec![false; b_n];
    let mut trajectory = Vec::with_capacity(k);
    let mut evaluations = 0;
    for _ in 0..k {
        let candidates: Vec<usize> = (0..b_n).filter(|&e| !selected[e]).collect();
        let scored: Vec<(usize, f64)> = candidates.par_iter().map(|&e| (e, state.incremental_gain(e))).collect();
        evaluations += scored.len();
        let (e, _) = argmax(&scored);
        state.commit(e);
        selected[e] = true;
        trajectory.push(state.value());
    }
    Ok(result(eval, state.members().to_vec(), trajectory, k, evaluations))
}

/// Heap entry ordered by bound descending, then id ascending.
#[derive(Clone, Copy, Debug)]
struct Bound {
    gain: f64,
    id: usize,
    round: usize,
}

impl PartialEq for Bound {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Bound {}

impl PartialOrd for Bound {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Bound {
    fn cmp(&self, other: &Self) -> Ordering {
        self.gain.total_cmp(&other.gain).then_with(|| other.id.cmp(&self.id))
    }
}

/// Accelerated greedy. Stale marginal gains are upper bounds by
/// submodularity, up to rounding: marginals scored against different
/// subsets can differ from exact arithmetic by a few ulps. So once a fresh
/// entry reaches the top, every entry whose bound lies within
/// [`LAZY_SLACK`] of it is re-scored too and the round's winner is picked by
/// the same rule as [`greedy_select`].
pub fn lazy_greedy_select(eval: &Evaluator<'_>, k: usize) -> Result<SelectionResult> {
    let b_n = eval.tensor().n_buses();
    check_k(k, b_n)?;
    let mut state = eval.state();
    let initial: Vec<Bound> = (0..b_n)
        .into_par_iter()
        .map(|id| Bound {
            gain: state.incremental_gain(id),
            id,
            round: 0,
        })
        .collect();
    let mut evaluations = b_n;
    let mut heap: BinaryHeap<Bound> = initial.into_iter().collect();
    let mut trajectory = Vec::with_capacity(k);
    for round in 0..k {
        let top = loop {
            let top = heap.pop().expect("k <= B leaves candidates");
            if top.round == round {
                break top;
            }
            evaluations += 1;
            heap.push(Bound {
                gain: state.incremental_gain(top.id),
                id: top.id,
                round,
            });
        };
        let floor = top.gain - LAZY_SLACK * top.gain.abs().max(1.0);
        let mut contenders = vec![top];
        while heap.peek().is_some_and(|b| b.gain >= floor) {
            let mut b = heap.pop().expect("peeked");
            if b.round != round {
                evaluations += 1;
                b = Bound {
                    gain: state.incremental_gain(b.id),
                    id: b.id,
                    round,
                };
            }
            contenders.push(b);
        }
        let winner = *contenders.iter().max().expect("non-empty");
        for b in contenders {
            if b.id != winner.id {
                heap.push(b);
            }
        }
        state.commit(winner.id);
        trajectory.push(state.value());
    }
    Ok(result(eval, state.members().to_vec(), trajectory, k, evaluations))
}

/// `C(n, k)`, saturating.
pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut c: u128 = 1;
    for i in 0..k {
        c = c.saturating_mul((n - i) as u128) / (i as u128 + 1);
    }
    c
}

/// Exhaustive optimum over all k-subsets, first in lexicographic order on ties.
pub fn brute_force_select(eval: &Evaluator<'_>, k: usize) -> Result<SelectionResult> {
    let b_n = eval.tensor().n_buses();
    check_k(k, b_n)?;
    let subsets = binomial(b_n, k);
    if subsets > BRUTE_FORCE_BUDGET {
        return Err(Error::Budget {
            subsets,
            budget: BRUTE_FORCE_BUDGET,
        });
    }
    let mut combo: Vec<usize> = (0..k).collect();
    let mut best = (f64::NEG_INFINITY, combo.clone());
    let mut evaluations = 0;
    loop {
        let v = eval.gain(&combo);
        evaluations += 1;
        if v > best.0 {
            best = (v, combo.clone());
        }
        // advance to the next combination in lexicographic order
        let mut i = k;
        while i > 0 && combo[i - 1] == b_n - k + i - 1 {
            i -= 1;
        }
        if i == 0 {
            break;
        }
        combo[i - 1] += 1;
        for j in i..k {
            combo[j] = combo[j - 1] + 1;
        }
    }
    let chosen = best.1;
    let trajectory = (1..=k).map(|n| eval.gain(&chosen[..n])).collect();
    Ok(result(eval, chosen, trajectory, k, evaluations))
}

/// Uniform k-subset from `seed`; the trajectory scores each prefix.
pub fn random_select(eval: &Evaluator<'_>, k: usize, seed: u64) -> Result<SelectionResult> {
    let b_n = eval.tensor().n_buses();
    check_k(k, b_n)?;
    let mut r = rng::seeded(seed, rng::stream::RANDOM_SELECT);
    let chosen = index::sample(&mut r, b_n, k).into_vec();
    let trajectory = (1..=k).map(|n| eval.gain(&chosen[..n])).collect();
    Ok(result(eval, chosen, trajectory, k, k))
}

/// Worst-case sample from a property check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub c: Vec<usize>,
    pub d: Vec<usize>,
    pub b: usize,
    pub slack: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PropertyReport {
    pub trials: usize,
    /// Minimum of `f(D) − f(C)` and `f(C ∪ b) − f(C)`.
    pub worst_monotonicity_slack: f64,
    /// Minimum of `[f(C ∪ b) − f(C)] − [f(D ∪ b) − f(D)]`.
    pub worst_submodularity_slack: f64,
    pub monotonicity_witness: Option<Witness>,
    pub submodularity_witness: Option<Witness>,
}

impl PropertyReport {
    pub fn passed(&self) -> bool {
        self.worst_monotonicity_slack >= PROPERTY_TOLERANCE && self.worst_submodularity_slack >= PROPERTY_TOLERANCE
    }
}

/// Samples chains C ⊆ D ⊂ ground set and an outsider b ∉ D.
pub fn check_monotone_submodular<F: SetFunction + ?Sized>(f: &F, trials: usize, seed: u64) -> Result<PropertyReport> {
    if trials == 0 {
        return Err(Error::arg("trials must be at least 1"));
    }
    let n = f.n_elements();
    if n < 2 {
        return Err(Error::arg("property check needs at least two elements"));
    }
    let mut r = rng::seeded(seed, rng::stream::PROPERTY_CHECK);
    let mut report = PropertyReport {
        trials,
        worst_monotonicity_slack: f64::INFINITY,
        worst_submodularity_slack: f64::INFINITY,
        monotonicity_witness: None,
        submodularity_witness: None,
    };
    for _ in 0..trials {
        let b = r.random_range(0..n);
        let p_d: f64 = r.random();
        let d: Vec<usize> = (0..n).filter(|&e| e != b && r.random::<f64>() < p_d).collect();
        let c: Vec<usize> = d.iter().copied().filter(|_| r.random::<bool>()).collect();
        let with = |set: &[usize]| {
            let mut v = set.to_vec();
            v.push(b);
            v
        };
        let (fc, fd) = (f.value(&c), f.value(&d));
        let (fcb, fdb) = (f.value(&with(&c)), f.value(&with(&d)));
        let witness = |slack| Witness {
            c: c.clone(),
            d: d.clone(),
            b,
            slack,
        };
        let mono = (fd - fc).min(fcb - fc);
        if mono < report.worst_monotonicity_slack {
            report.worst_monotonicity_slack = mono;
            report.monotonicity_witness = Some(witness(mono));
        }
        let sub = (fcb - fc) - (fdb - fd);
        if sub < report.worst_submodularity_slack {
            report.worst_submodularity_slack = sub;
            report.submodularity_witness = Some(witness(sub));
        }
    }
    Ok(report)
}
