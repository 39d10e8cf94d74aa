//! Dense-map reconstruction from partial observations.
//!
//! The model factorizes the observed entries as `Y ≈ A Bᵀ` and couples the
//! spatial factor to a side-information similarity through `G ≈ A Cᵀ`, so a
//! location that is never observed still gets a factor row from its
//! similarity to observed ones. Each factor row carries a Gaussian
//! posterior (mean and covariance Ξ) and the updates are the mean-field
//! coordinate steps:
//!
//! ```text
//! Ξᴬᵢ = (γI + β Σ_{τ∈Ωᵢ} E[b_τ b_τᵀ] + β₁ E[CᵀC])⁻¹
//! aᵢ  = Ξᴬᵢ (β Σ_{τ∈Ωᵢ} b_τ y_iτ + β₁ Cᵀ gᵢ)
//! Ξᶜ  = (β₁ E[AᵀA] + γI)⁻¹,  C = β₁ G A Ξᶜ
//! Ξᴮ_τ = (γI + β Σ_{i∈Ω_τ} E[aᵢ aᵢᵀ])⁻¹,  b_τ = Ξᴮ_τ β Σ aᵢ y_iτ
//! ```
//!
//! where `E[CᵀC] = CᵀC + L Ξᶜ` since every row of C shares Ξᶜ.
//!
//! The temporal variant replaces the independent B columns by a chain
//! prior `b_t ~ N(F b_{t-1}, η⁻¹ I)` starting from `b_{-1} = 0`. The joint
//! posterior over all columns then has a block-tridiagonal precision, solved
//! by a forward elimination and backward substitution that also yields the
//! marginal and lag-one covariances. F and η are re-estimated from those
//! expectations.
//!
//! Precisions β and β₁ are re-estimated from expected residuals, i.e.
//! including the posterior-covariance trace terms. During the first
//! `warmup_iters` iterations observed rows ignore the side term; otherwise
//! the random start settles into a compromise between `Y` and `G`.

use std::path::Path;

use log::{debug, warn};
use nalgebra::DMatrix;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::occupancy::SamplingMatrix;
use crate::rng::{self, stream};
use crate::similarity::SimilarityMatrix;

/// Observed entries of an `L x T` matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationSet {
    locations: usize,
    slots: usize,
    /// Sorted by `(l, t)`, no duplicates.
    entries: Vec<(usize, usize, f64)>,
}

impl ObservationSet {
    pub fn new(locations: usize, slots: usize, mut entries: Vec<(usize, usize, f64)>) -> Result<Self> {
        if locations == 0 || slots == 0 {
            return Err(Error::arg("observation grid must be non-empty"));
        }
        for &(l, t, v) in &entries {
            if l >= locations || t >= slots {
                return Err(Error::arg(format!("observation ({l},{t}) outside {locations}x{slots}")));
            }
            if !v.is_finite() {
                return Err(Error::Data(format!("observation ({l},{t}) is not finite")));
            }
        }
        entries.sort_by_key(|e| (e.0, e.1));
        if let Some(w) = entries.windows(2).find(|w| (w[0].0, w[0].1) == (w[1].0, w[1].1)) {
            return Err(Error::Data(format!("duplicate observation at ({},{})", w[0].0, w[0].1)));
        }
        Ok(ObservationSet {
            locations,
            slots,
            entries,
        })
    }

    /// Entries of `truth` where `theta` is set.
    pub fn from_mask(truth: &DMatrix<f64>, theta: &SamplingMatrix) -> Result<Self> {
        if truth.shape() != (theta.n_locations(), theta.n_slots()) {
            return Err(Error::arg(format!(
                "truth is {}x{}, sampling matrix is {}x{}",
                truth.nrows(),
                truth.ncols(),
                theta.n_locations(),
                theta.n_slots()
            )));
        }
        let entries = theta.cells().map(|(l, t)| (l, t, truth[(l, t)])).collect();
        Self::new(truth.nrows(), truth.ncols(), entries)
    }

    pub fn n_locations(&self) -> usize {
        self.locations
    }

    pub fn n_slots(&self) -> usize {
        self.slots
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[(usize, usize, f64)] {
        &self.entries
    }

    /// Locations with no observation at all.
    pub fn cold_start_rows(&self) -> Vec<usize> {
        let mut seen = vec![false; self.locations];
        for &(l, _, _) in &self.entries {
            seen[l] = true;
        }
        (0..self.locations).filter(|&l| !seen[l]).collect()
    }

    /// Header `L,T`, then one `l,t,value` line per observation.
    pub fn to_text(&self) -> String {
        let mut out = format!("{},{}\n", self.locations, self.slots);
        for &(l, t, v) in &self.entries {
            out.push_str(&format!("{l},{t},{v}\n"));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::Format("empty observation file".into()))?;
        let dims: Vec<usize> = header
            .split(',')
            .map(|f| f.trim().parse())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Format(format!("bad observation header `{header}`")))?;
        let [locations, slots] = dims[..] else {
            return Err(Error::Format(format!("observation header needs `L,T`, got `{header}`")));
        };
        let mut entries = Vec::new();
        for (i, line) in lines {
            let bad = || Error::Format(format!("observation line {}: `{line}`", i + 1));
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            if f.len() != 3 {
                return Err(bad());
            }
            let l = f[0].parse().map_err(|_| bad())?;
            let t = f[1].parse().map_err(|_| bad())?;
            let v = f[2].parse().map_err(|_| bad())?;
            entries.push((l, t, v));
        }
        Self::new(locations, slots, entries)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

/// How the temporal transition F is obtained.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transition {
    /// Re-estimated each iteration from the posterior of B.
    Learned,
    /// Held at the given `r x r` matrix.
    Fixed(Vec<f64>),
    /// Held at the identity: a random-walk prior.
    Identity,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ImputeConfig {
    pub rank: usize,
    pub max_iters: usize,
    /// Stop when the relative change of `A Bᵀ` drops below this.
    pub tol: f64,
    pub seed: u64,
    /// Prior precision on every factor entry.
    pub gamma: f64,
    /// Scale of the side-information precision: `β₁ = p L² / E‖G − A Cᵀ‖²`.
    pub p: f64,
    /// Couple to the similarity matrix at all.
    pub side_information: bool,
    pub warmup_iters: usize,
    pub init_std: f64,
    /// Upper bound on β and β₁, for normalized data.
    pub precision_cap: f64,
}

impl Default for ImputeConfig {
    fn default() -> Self {
        ImputeConfig {
            rank: 5,
            max_iters: 200,
            tol: 1e-5,
            seed: 0,
            gamma: 1e-6,
            p: 1.0,
            side_information: true,
            warmup_iters: 20,
            init_std: 0.1,
            precision_cap: 1e10,
        }
    }
}

/// Chain prior on the columns of B.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TemporalConfig {
    pub transition: Transition,
    /// Iteration at which the chain prior switches on.
    pub start_iter: usize,
    /// Upper bound on η.
    pub precision_cap: f64,
}

impl Default for TemporalConfig {
    fn default() -> Self {
        TemporalConfig {
            transition: Transition::Identity,
            start_iter: 20,
            precision_cap: 1e8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Free energy after the factor sweep, hyperparameters held fixed.
    pub objective: f64,
    /// Free energy before the sweep; `None` while the side term is relaxed.
    pub objective_before: Option<f64>,
    pub beta: f64,
    pub beta1: f64,
    pub eta: Option<f64>,
    pub relative_change: f64,
    /// Percent, when a truth matrix was supplied.
    pub mre_percent: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct Imputation {
    pub estimate: DMatrix<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub log: Vec<IterationRecord>,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub transition: Option<DMatrix<f64>>,
}

impl Imputation {
    /// Largest increase of the free energy across a sweep, relative to its magnitude.
    pub fn worst_sweep_increase(&self) -> f64 {
        self.log
            .iter()
            .filter_map(|r| r.objective_before.map(|b| (r.objective - b) / b.abs().max(1.0)))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// `iteration,objective,beta,beta1,eta,relative_change,mre_percent` lines.
    pub fn log_csv(&self) -> String {
        let mut out = String::from("iteration,objective,beta,beta1,eta,relative_change,mre_percent\n");
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        for r in &self.log {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.iteration,
                r.objective,
                r.beta,
                r.beta1,
                opt(r.eta),
                r.relative_change,
                opt(r.mre_percent)
            ));
        }
        out
    }
}

/// Inverse and `log det` of a symmetric positive definite matrix; retries
/// with a growing diagonal jitter when the factorization fails.
pub fn spd_inverse(p: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    let n = p.nrows();
    let base = (p.trace() / n as f64).abs().max(f64::MIN_POSITIVE);
    let mut jitter = 0.0;
    for _ in 0..8 {
        let mut q = p.clone();
        for i in 0..n {
            q[(i, i)] += jitter;
        }
        if let Some(ch) = q.cholesky() {
            let logdet = 2.0 * ch.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
            return Ok((ch.inverse(), logdet));
        }
        jitter = if jitter == 0.0 { 1e-10 * base } else { jitter * 100.0 };
    }
    Err(Error::Numerical(format!(
        "{n}x{n} normal equations stay singular after jitter"
    )))
}

/// Output of [`block_tridiagonal_solve`].
#[derive(Clone, Debug)]
pub struct ChainPosterior {
    pub means: Vec<DMatrix<f64>>,
    /// `Σ_{t,t}`.
    pub covariances: Vec<DMatrix<f64>>,
    /// `Σ_{t+1,t}` for `t < T-1`.
    pub cross: Vec<DMatrix<f64>>,
    /// `log det` of the full precision.
    pub logdet_precision: f64,
}

/// Solves `P μ = h` for a symmetric block-tridiagonal `P` with diagonal
/// blocks `diag[t]` and sub-diagonal blocks `lower[t] = P_{t+1,t}`, and
/// returns the diagonal and lag-one blocks of `P⁻¹`.
pub fn block_tridiagonal_solve(
    diag: &[DMatrix<f64>],
    lower: &[DMatrix<f64>],
    h: &[DMatrix<f64>],
) -> Result<ChainPosterior> {
    let n = diag.len();
    assert!(n >= 1 && lower.len() + 1 == n && h.len() == n);
    let mut s_inv = Vec::with_capacity(n);
    let mut g = Vec::with_capacity(n);
    let mut logdet = 0.0;
    for t in 0..n {
        let (s, gt) = if t == 0 {
            (diag[0].clone(), h[0].clone())
        } else {
            let o = &lower[t - 1];
            let k = o * &s_inv[t - 1];
            (&diag[t] - &k * o.transpose(), &h[t] - &k * &g[t - 1])
        };
        let (inv, ld) = spd_inverse(&s)?;
        logdet += ld;
        s_inv.push(inv);
        g.push(gt);
    }
    let mut means = vec![DMatrix::zeros(0, 0); n];
    let mut covariances = vec![DMatrix::zeros(0, 0); n];
    let mut cross = vec![DMatrix::zeros(0, 0); n - 1];
    means[n - 1] = &s_inv[n - 1] * &g[n - 1];
    covariances[n - 1] = s_inv[n - 1].clone();
    for t in (0..n - 1).rev() {
        let o = &lower[t];
        means[t] = &s_inv[t] * (&g[t] - o.transpose() * &means[t + 1]);
        let j = o * &s_inv[t];
        cross[t] = -(&covariances[t + 1] * &j);
        let cov = &s_inv[t] + j.transpose() * &covariances[t + 1] * &j;
        covariances[t] = (&cov + cov.transpose()) * 0.5;
    }
    Ok(ChainPosterior {
        means,
        covariances,
        cross,
        logdet_precision: logdet,
    })
}

struct Solver<'a> {
    cfg: &'a ImputeConfig,
    temporal: Option<&'a TemporalConfig>,
    g: &'a DMatrix<f64>,
    l_n: usize,
    t_n: usize,
    r: usize,
    rows: Vec<Vec<(usize, f64)>>,
    cols: Vec<Vec<(usize, f64)>>,
    observed_row: Vec<bool>,
    n_obs: usize,
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
    xa: Vec<DMatrix<f64>>,
    xb: Vec<DMatrix<f64>>,
    xb_cross: Vec<DMatrix<f64>>,
    xc: DMatrix<f64>,
    logdet_a: f64,
    logdet_b: f64,
    logdet_c: f64,
    beta: f64,
    beta1: f64,
    eta: f64,
    f: DMatrix<f64>,
    chain_active: bool,
}

fn outer(v: &DMatrix<f64>, row: usize) -> DMatrix<f64> {
    let x = v.row(row);
    x.transpose() * x
}

impl<'a> Solver<'a> {
    fn eye(&self) -> DMatrix<f64> {
        DMatrix::identity(self.r, self.r)
    }

    fn update_a(&mut self, relax_side: bool) -> Result<()> {
        let r = self.r;
        let ebb: Vec<DMatrix<f64>> = (0..self.t_n).map(|t| outer(&self.b, t) + &self.xb[t]).collect();
        let ecc = self.c.transpose() * &self.c + &self.xc * self.l_n as f64;
        let gamma = self.cfg.gamma;
        let beta = self.beta;
        type RowPosterior = Result<(DMatrix<f64>, DMatrix<f64>, f64)>;
        let rows: Vec<RowPosterior> = (0..self.l_n)
            .into_par_iter()
            .map(|i| {
                let w = if relax_side && self.observed_row[i] {
                    0.0
                } else {
                    self.beta1
                };
                let mut p = DMatrix::identity(r, r) * gamma + &ecc * w;
                let mut h = DMatrix::zeros(r, 1);
                for &(t, y) in &self.rows[i] {
                    p += &ebb[t] * beta;
                    h += self.b.row(t).transpose() * (beta * y);
                }
                if w > 0.0 {
                    h += self.c.transpose() * self.g.row(i).transpose() * w;
                }
                let (xi, ld) = spd_inverse(&p)?;
                let mean = &xi * h;
                Ok((xi, mean, ld))
            })
            .collect();
        self.logdet_a = 0.0;
        for (i, row) in rows.into_iter().enumerate() {
            let (xi, mean, ld) = row?;
            self.a.row_mut(i).copy_from(&mean.transpose());
            self.xa[i] = xi;
            self.logdet_a -= ld;
        }
        Ok(())
    }

    fn eaa(&self) -> DMatrix<f64> {
        let mut s = self.a.transpose() * &self.a;
        for x in &self.xa {
            s += x;
        }
        s
    }

    fn update_c(&mut self) -> Result<()> {
        if !self.cfg.side_information {
            return Ok(());
        }
        let p = self.eaa() * self.beta1 + self.eye() * self.cfg.gamma;
        let (xc, ld) = spd_inverse(&p)?;
        self.c = self.g * &self.a * &xc * self.beta1;
        self.xc = xc;
        self.logdet_c = -ld * self.l_n as f64;
        Ok(())
    }

    /// Data part of the B precision and right-hand side, per column.
    fn b_data_terms(&self) -> Vec<(DMatrix<f64>, DMatrix<f64>)> {
        let r = self.r;
        let eaa_i: Vec<DMatrix<f64>> = (0..self.l_n).map(|i| outer(&self.a, i) + &self.xa[i]).collect();
        (0..self.t_n)
            .into_par_iter()
            .map(|t| {
                let mut p = DMatrix::identity(r, r) * self.cfg.gamma;
                let mut h = DMatrix::zeros(r, 1);
                for &(i, y) in &self.cols[t] {
                    p += &eaa_i[i] * self.beta;
                    h += self.a.row(i).transpose() * (self.beta * y);
                }
                (p, h)
            })
            .collect()
    }

    fn update_b(&mut self) -> Result<()> {
        let terms = self.b_data_terms();
        if !self.chain_active {
            self.logdet_b = 0.0;
            for (t, (p, h)) in terms.into_iter().enumerate() {
                let (xi, ld) = spd_inverse(&p)?;
                self.b.row_mut(t).copy_from(&(&xi * h).transpose());
                self.xb[t] = xi;
                self.logdet_b -= ld;
            }
            return Ok(());
        }
        let eta = self.eta;
        let ftf = self.f.transpose() * &self.f * eta;
        let eye = self.eye() * eta;
        let (mut diag, mut hs) = (Vec::with_capacity(self.t_n), Vec::with_capacity(self.t_n));
        for (t, (p, h)) in terms.into_iter().enumerate() {
            let mut d = p + &eye;
            if t + 1 < self.t_n {
                d += &ftf;
            }
            diag.push(d);
            hs.push(h);
        }
        let lower = vec![-(&self.f * eta); self.t_n - 1];
        let post = block_tridiagonal_solve(&diag, &lower, &hs)?;
        for t in 0..self.t_n {
            self.b.row_mut(t).copy_from(&post.means[t].transpose());
        }
        self.xb = post.covariances;
        self.xb_cross = post.cross;
        self.logdet_b = -post.logdet_precision;
        Ok(())
    }

    /// `Σ_t b_t b_tᵀ + Σ_tt` over `range`.
    fn second_moment(&self, range: std::ops::Range<usize>) -> DMatrix<f64> {
        let mut s = DMatrix::zeros(self.r, self.r);
        for t in range {
            s += outer(&self.b, t) + &self.xb[t];
        }
        s
    }

    /// `E Σ_t ‖b_t − F b_{t-1}‖²` with `b_{-1} = 0`, plus the sufficient statistics.
    fn chain_residual(&self, f: &DMatrix<f64>) -> (f64, DMatrix<f64>, DMatrix<f64>) {
        let n = self.t_n;
        let s00 = self.second_moment(0..n - 1);
        let s11 = self.second_moment(1..n);
        let mut s10 = DMatrix::zeros(self.r, self.r);
        for t in 0..n - 1 {
            s10 += self.b.row(t + 1).transpose() * self.b.row(t) + &self.xb_cross[t];
        }
        let first = self.b.row(0).norm_squared() + self.xb[0].trace();
        let res = (s11 - f * s10.transpose() - &s10 * f.transpose() + f * &s00 * f.transpose()).trace() + first;
        (res, s00, s10)
    }

    fn update_chain_hyper(&mut self) -> Result<()> {
        let t_cfg = self.temporal.expect("chain active");
        if self.t_n > 1 && t_cfg.transition == Transition::Learned {
            let (_, s00, s10) = self.chain_residual(&self.f);
            let (inv, _) = spd_inverse(&s00)?;
            self.f = s10 * inv;
        }
        let (res, _, _) = if self.t_n > 1 {
            self.chain_residual(&self.f)
        } else {
            let first = self.b.row(0).norm_squared() + self.xb[0].trace();
            (first, DMatrix::zeros(0, 0), DMatrix::zeros(0, 0))
        };
        self.eta = ((self.t_n * self.r) as f64 / res.max(1e-300)).min(t_cfg.precision_cap);
        Ok(())
    }

    /// `E ‖P_Ω(Y − A Bᵀ)‖²`.
    fn expected_sse(&self) -> f64 {
        let mut sse = 0.0;
        for (i, row) in self.rows.iter().enumerate() {
            let a = self.a.row(i).transpose();
            for &(t, y) in row {
                let b = self.b.row(t).transpose();
                let e = y - a.dot(&b);
                sse += e * e
                    + (a.transpose() * &self.xb[t] * &a)[0]
                    + (b.transpose() * &self.xa[i] * &b)[0]
                    + self.xa[i].component_mul(&self.xb[t]).sum();
            }
        }
        sse
    }

    /// `E ‖G − A Cᵀ‖²`.
    fn expected_side_residual(&self) -> f64 {
        let ctc = self.c.transpose() * &self.c;
        let l = self.l_n as f64;
        let mut s = (self.g - &self.a * self.c.transpose()).norm_squared();
        for i in 0..self.l_n {
            let a = self.a.row(i).transpose();
            s += self.xa[i].component_mul(&ctc).sum()
                + l * (a.transpose() * &self.xc * &a)[0]
                + l * self.xa[i].component_mul(&self.xc).sum();
        }
        s
    }

    fn update_precisions(&mut self) {
        let cap = self.cfg.precision_cap;
        self.beta = (self.n_obs as f64 / self.expected_sse().max(1e-300)).min(cap);
        if self.cfg.side_information {
            let l = self.l_n as f64;
            self.beta1 = (self.cfg.p * l * l / self.expected_side_residual().max(1e-300)).min(cap);
        }
    }

    /// Negative evidence lower bound up to hyperparameter-only constants.
    fn free_energy(&self) -> f64 {
        let g = self.cfg.gamma;
        let mut e = 0.5 * self.beta * self.expected_sse();
        e += 0.5 * g * (self.a.norm_squared() + self.xa.iter().map(|x| x.trace()).sum::<f64>());
        e += 0.5 * g * (self.b.norm_squared() + self.xb.iter().map(|x| x.trace()).sum::<f64>());
        if self.cfg.side_information {
            e += 0.5 * self.beta1 * self.expected_side_residual();
            e += 0.5 * g * (self.c.norm_squared() + self.l_n as f64 * self.xc.trace());
        }
        if self.chain_active {
            let res = if self.t_n > 1 {
                self.chain_residual(&self.f).0
            } else {
                self.b.row(0).norm_squared() + self.xb[0].trace()
            };
            e += 0.5 * self.eta * res;
        }
        e - 0.5 * (self.logdet_a + self.logdet_b + self.logdet_c)
    }
}

fn validate(obs: &ObservationSet, g: &SimilarityMatrix, cfg: &ImputeConfig) -> Result<()> {
    let (l_n, t_n) = (obs.n_locations(), obs.n_slots());
    if cfg.rank == 0 || cfg.rank > l_n.min(t_n) {
        return Err(Error::arg(format!(
            "rank {} must lie in 1..=min(L, T) = {}",
            cfg.rank,
            l_n.min(t_n)
        )));
    }
    if g.len() != l_n {
        return Err(Error::arg(format!(
            "similarity matrix has {} locations, observations have {l_n}",
            g.len()
        )));
    }
    if obs.is_empty() {
        return Err(Error::InsufficientData("no observed entries".into()));
    }
    if obs.len() < cfg.rank {
        warn!("only {} observations for rank {}", obs.len(), cfg.rank);
    }
    if !(cfg.gamma > 0.0) || !(cfg.p > 0.0) || !(cfg.tol >= 0.0) {
        return Err(Error::arg("gamma and p must be positive, tol nonnegative"));
    }
    Ok(())
}

/// Runs the solver; `temporal` enables the chain prior on B.
pub fn impute(
    obs: &ObservationSet,
    g: &SimilarityMatrix,
    cfg: &ImputeConfig,
    temporal: Option<&TemporalConfig>,
    truth: Option<&DMatrix<f64>>,
) -> Result<Imputation> {
    validate(obs, g, cfg)?;
    let (l_n, t_n, r) = (obs.n_locations(), obs.n_slots(), cfg.rank);
    if let Some(tr) = truth {
        if tr.shape() != (l_n, t_n) {
            return Err(Error::arg("truth shape differs from the observation grid"));
        }
    }
    let f = match temporal.map(|t| &t.transition) {
        Some(Transition::Fixed(v)) => {
            if v.len() != r * r {
                return Err(Error::arg(format!(
                    "fixed transition needs {} entries, got {}",
                    r * r,
                    v.len()
                )));
            }
            DMatrix::from_row_slice(r, r, v)
        }
        _ => DMatrix::identity(r, r),
    };

    let scale = (obs.entries().iter().map(|e| e.2 * e.2).sum::<f64>() / obs.len() as f64).sqrt();
    let scale = if scale > 0.0 { scale } else { 1.0 };
    let mut rows = vec![Vec::new(); l_n];
    let mut cols = vec![Vec::new(); t_n];
    for &(l, t, v) in obs.entries() {
        rows[l].push((t, v / scale));
        cols[t].push((l, v / scale));
    }
    let observed_row = rows.iter().map(|r| !r.is_empty()).collect();

    let mut rng = rng::seeded(cfg.seed, stream::IMPUTE_INIT);
    let init = Normal::new(0.0, cfg.init_std).map_err(|e| Error::arg(e.to_string()))?;
    let mut draw = |n: usize| DMatrix::from_iterator(n, r, (0..n * r).map(|_| init.sample(&mut rng)));
    let (a, b, c) = (draw(l_n), draw(t_n), draw(l_n));
    let zero = DMatrix::zeros(r, r);
    let mut s = Solver {
        cfg,
        temporal,
        g: g.matrix(),
        l_n,
        t_n,
        r,
        rows,
        cols,
        observed_row,
        n_obs: obs.len(),
        a,
        b,
        c,
        xa: vec![zero.clone(); l_n],
        xb: vec![zero.clone(); t_n],
        xb_cross: vec![zero.clone(); t_n.saturating_sub(1)],
        xc: zero,
        logdet_a: 0.0,
        logdet_b: 0.0,
        logdet_c: 0.0,
        beta: 1.0,
        beta1: if cfg.side_information { 1.0 } else { 0.0 },
        eta: 1.0,
        f,
        chain_active: false,
    };

    let mut log = Vec::new();
    let mut prev = s.a.clone() * s.b.transpose();
    let mut converged = false;
    let mut iterations = 0;
    for it in 0..cfg.max_iters {
        iterations = it + 1;
        let relax = it < cfg.warmup_iters;
        let chain_now = temporal.is_some_and(|t| it >= t.start_iter);
        let chain_switched = chain_now != s.chain_active;
        s.chain_active = chain_now;
        let monitored = !relax && it > 0 && !chain_switched;
        let before = monitored.then(|| s.free_energy());

        s.update_a(relax)?;
        s.update_c()?;
        s.update_b()?;
        let objective = s.free_energy();
        if let Some(b) = before {
            if objective > b + 1e-9 * b.abs().max(1.0) {
                warn!("free energy rose across sweep {it}: {b} -> {objective}");
            }
        }

        if s.chain_active {
            s.update_chain_hyper()?;
        }
        s.update_precisions();

        let current = &s.a * s.b.transpose();
        let change = (&current - &prev).norm() / prev.norm().max(f64::MIN_POSITIVE);
        let mre_percent = truth.map(|tr| {
            let est = &current * scale;
            100.0 * (tr - est).norm() / tr.norm().max(f64::MIN_POSITIVE)
        });
        debug!(
            "iter {it}: objective {objective:.6e} change {change:.3e} beta {:.3e} beta1 {:.3e}",
            s.beta, s.beta1
        );
        log.push(IterationRecord {
            iteration: it,
            objective,
            objective_before: before,
            beta: s.beta,
            beta1: s.beta1,
            eta: s.chain_active.then_some(s.eta),
            relative_change: change,
            mre_percent,
        });
        prev = current;
        let settled = it + 1 >= cfg.warmup_iters && temporal.is_none_or(|t| it > t.start_iter);
        if settled && change < cfg.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        warn!(
            "imputation stopped at the iteration cap ({}) before reaching tol {}",
            cfg.max_iters, cfg.tol
        );
    }
    Ok(Imputation {
        estimate: prev * scale,
        iterations,
        converged,
        log,
        a: s.a,
        b: s.b,
        c: s.c,
        transition: temporal.map(|_| s.f),
    })
}

/// Low-rank completion with cold-start side information.
pub fn impute_vbmc_cs(obs: &ObservationSet, g: &SimilarityMatrix, cfg: &ImputeConfig) -> Result<Imputation> {
    impute(obs, g, cfg, None, None)
}

/// Low-rank completion with cold-start side information and a temporal
/// chain prior on the time factor.
pub fn impute_vbsf_cs(
    obs: &ObservationSet,
    g: &SimilarityMatrix,
    cfg: &ImputeConfig,
    temporal: &TemporalConfig,
) -> Result<Imputation> {
    impute(obs, g, cfg, Some(temporal), None)
}

/// `‖truth − estimate‖_F / ‖truth‖_F`.
pub fn mre(truth: &DMatrix<f64>, estimate: &DMatrix<f64>) -> Result<f64> {
    if truth.shape() != estimate.shape() {
        return Err(Error::arg(format!(
            "shape mismatch: truth {:?}, estimate {:?}",
            truth.shape(),
            estimate.shape()
        )));
    }
    let norm = truth.norm();
    if norm == 0.0 {
        return Err(Error::Degenerate("truth matrix has zero norm".into()));
    }
    Ok((truth - estimate).norm() / norm)
}

pub fn mre_percent(truth: &DMatrix<f64>, estimate: &DMatrix<f64>) -> Result<f64> {
    Ok(100.0 * mre(truth, estimate)?)
}
