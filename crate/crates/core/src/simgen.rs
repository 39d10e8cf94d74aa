//! Ground-truth fields that are smooth in space and time.
//!
//! Smoothness comes from the leading eigenvectors of a similarity matrix:
//! a combination of the top-m eigenvectors of G varies slowly across nearby
//! locations, and likewise for H across nearby slots.
//!
//! Draws use three independent ChaCha20 streams per seed (spatial
//! coefficients, temporal coefficients, noise), so changing a dimension of
//! one never perturbs the others.

use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid;
use crate::rng::{self, stream};
use crate::similarity::SimilarityMatrix;

/// Coefficient standard deviation for the spectral combinations.
pub const COEFF_STD: f64 = 0.5;
/// Default additive noise standard deviation.
pub const NOISE_STD: f64 = 0.001;

/// Eigenvectors of a symmetric matrix, largest eigenvalue first.
#[derive(Clone, Debug)]
pub struct SpectralBasis {
    /// `L x m`, orthonormal columns.
    pub u: DMatrix<f64>,
    /// All `L` eigenvalues, descending.
    pub eigenvalues: Vec<f64>,
}

/// Each eigenvector's sign is fixed so its largest-magnitude entry is positive.
pub fn spectral_basis(g: &DMatrix<f64>, m: usize) -> Result<SpectralBasis> {
    let n = g.nrows();
    if !g.is_square() || n == 0 {
        return Err(Error::arg("spectral basis needs a non-empty square matrix"));
    }
    if m == 0 || m > n {
        return Err(Error::arg(format!("basis size m = {m} must lie in 1..={n}")));
    }
    let scale = g.amax().max(f64::MIN_POSITIVE);
    for i in 0..n {
        for j in 0..i {
            if (g[(i, j)] - g[(j, i)]).abs() > 1e-12 * scale {
                return Err(Error::arg(format!("matrix is not symmetric at ({i},{j})")));
            }
        }
    }
    let eig = SymmetricEigen::new(g.clone());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let mut u = DMatrix::zeros(n, m);
    for (c, &k) in order.iter().take(m).enumerate() {
        let mut v = eig.eigenvectors.column(k).into_owned();
        let lead = v
            .iter()
            .copied()
            .fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
        if lead < 0.0 {
            v.neg_mut();
        }
        u.set_column(c, &v);
    }
    let eigenvalues = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    Ok(SpectralBasis { u, eigenvalues })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Generator {
    /// `Y = A Bᵀ + N` with `A` in span(U_m) and `B` in span(V_n).
    Factored,
    /// `z_t = c z_{t-1} + U_m â_t`, `y_t = z_t + n_t`.
    Autoregressive,
}

/// Everything needed to regenerate a matrix bit-identically, given G (and H).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub generator: Generator,
    pub seed: u64,
    pub locations: usize,
    pub slots: usize,
    pub m: usize,
    /// Temporal basis size; factored generator only.
    pub n: Option<usize>,
    /// Factor rank. Recorded but unused by the autoregressive generator.
    pub r: usize,
    /// Autoregressive coefficient.
    pub c: Option<f64>,
    pub noise_std: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpatioTemporalMatrix {
    pub values: DMatrix<f64>,
    pub provenance: Option<Provenance>,
}

impl SpatioTemporalMatrix {
    pub fn new(values: DMatrix<f64>) -> Self {
        SpatioTemporalMatrix {
            values,
            provenance: None,
        }
    }

    pub fn n_locations(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_slots(&self) -> usize {
        self.values.ncols()
    }

    /// Writes the grid to `path` and, if present, provenance JSON to `<path>.json`.
    pub fn write(&self, path: &Path) -> Result<()> {
        grid::write_grid(path, &self.values)?;
        if let Some(p) = &self.provenance {
            let side = sidecar(path);
            let text = serde_json::to_string_pretty(p).map_err(|e| Error::Format(e.to_string()))?;
            std::fs::write(&side, text + "\n").map_err(|e| Error::io(&side, e))?;
        }
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let values = grid::read_grid(path)?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data(format!("{} holds non-finite values", path.display())));
        }
        let side = sidecar(path);
        let provenance = if side.exists() {
            let text = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
            Some(serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", side.display())))?)
        } else {
            None
        };
        Ok(SpatioTemporalMatrix { values, provenance })
    }
}

pub fn sidecar(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    s.into()
}

fn normal_matrix(rows: usize, cols: usize, std: f64, rng: &mut impl Rng) -> DMatrix<f64> {
    let d = Normal::new(0.0, std).expect("finite std");
    // column-major fill: column i holds the i-th coefficient vector
    DMatrix::from_iterator(rows, cols, (0..rows * cols).map(|_| d.sample(rng)))
}

fn add_noise(y: &mut DMatrix<f64>, noise_std: f64, seed: u64) -> Result<()> {
    if noise_std < 0.0 || !noise_std.is_finite() {
        return Err(Error::arg(format!(
            "noise std must be finite and nonnegative, got {noise_std}"
        )));
    }
    if noise_std > 0.0 {
        let mut r = rng::seeded(seed, stream::NOISE);
        *y += normal_matrix(y.nrows(), y.ncols(), noise_std, &mut r);
    }
    Ok(())
}

/// `Y = A Bᵀ + N` with `A = U_m Â`, `B = V_n B̂`, entries of `Â`, `B̂` drawn
/// from Normal(0, 0.5²).
pub fn simulate_factored(
    g: &SimilarityMatrix,
    h: &SimilarityMatrix,
    m: usize,
    n: usize,
    r: usize,
    noise_std: f64,
    seed: u64,
) -> Result<SpatioTemporalMatrix> {
    if r == 0 {
        return Err(Error::arg("rank r must be at least 1"));
    }
    let u = spectral_basis(g.matrix(), m)?.u;
    let v = spectral_basis(h.matrix(), n)?.u;
    let a = &u * normal_matrix(m, r, COEFF_STD, &mut rng::seeded(seed, stream::SPATIAL_COEFFS));
    let b = &v * normal_matrix(n, r, COEFF_STD, &mut rng::seeded(seed, stream::TEMPORAL_COEFFS));
    let mut y = a * b.transpose();
    add_noise(&mut y, noise_std, seed)?;
    Ok(SpatioTemporalMatrix {
        provenance: Some(Provenance {
            generator: Generator::Factored,
            seed,
            locations: g.len(),
            slots: h.len(),
            m,
            n: Some(n),
            r,
            c: None,
            noise_std,
        }),
        values: y,
    })
}

/// `z_t = c z_{t-1} + U_m â_t` from `z_{-1} = 0`, observed as `y_t = z_t + n_t`.
/// `r` is only recorded.
pub fn simulate_ar(
    g: &SimilarityMatrix,
    m: usize,
    r: usize,
    c: f64,
    slots: usize,
    noise_std: f64,
    seed: u64,
) -> Result<SpatioTemporalMatrix> {
    if !c.is_finite() {
        return Err(Error::arg("autoregressive coefficient must be finite"));
    }
    if slots == 0 {
        return Err(Error::arg("need at least one slot"));
    }
    let u = spectral_basis(g.matrix(), m)?.u;
    let innovations = &u * normal_matrix(m, slots, COEFF_STD, &mut rng::seeded(seed, stream::SPATIAL_COEFFS));
    let l_n = g.len();
    let mut y = DMatrix::zeros(l_n, slots);
    let mut z = DVector::zeros(l_n);
    for t in 0..slots {
        z = z * c + innovations.column(t);
        y.set_column(t, &z);
    }
    add_noise(&mut y, noise_std, seed)?;
    Ok(SpatioTemporalMatrix {
        provenance: Some(Provenance {
            generator: Generator::Autoregressive,
            seed,
            locations: l_n,
            slots,
            m,
            n: None,
            r,
            c: Some(c),
            noise_std,
        }),
        values: y,
    })
}

/// Rebuilds a matrix from its provenance. `h` is required for the factored generator.
pub fn regenerate(p: &Provenance, g: &SimilarityMatrix, h: Option<&SimilarityMatrix>) -> Result<SpatioTemporalMatrix> {
    match p.generator {
        Generator::Factored => {
            let h = h.ok_or_else(|| Error::arg("factored generator needs the temporal similarity"))?;
            let n = p.n.ok_or_else(|| Error::Format("factored provenance lacks n".into()))?;
            simulate_factored(g, h, p.m, n, p.r, p.noise_std, p.seed)
        }
        Generator::Autoregressive => {
            let c =
                p.c.ok_or_else(|| Error::Format("autoregressive provenance lacks c".into()))?;
            simulate_ar(g, p.m, p.r, c, p.slots, p.noise_std, p.seed)
        }
    }
}

/// Basis sizes and rank for one simulated instance.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape {
    pub m: usize,
    pub n: usize,
    pub r: usize,
}

/// Draws `m`, `n` uniformly from `basis` and `r` from `rank` (inclusive ranges).
pub fn draw_shape(seed: u64, basis: (usize, usize), rank: (usize, usize)) -> Shape {
    let mut r = rng::seeded(seed, stream::SHAPE);
    Shape {
        m: r.random_range(basis.0..=basis.1),
        n: r.random_range(basis.0..=basis.1),
        r: r.random_range(rank.0..=rank.1),
    }
}

/// `H[t][t'] = phi^|t - t'|`: the lag correlation of a stationary AR(1)
/// series, used when no station data is available to learn H.
pub fn ar1_temporal_similarity(slots: usize, phi: f64) -> Result<SimilarityMatrix> {
    if !(0.0..=1.0).contains(&phi) {
        return Err(Error::arg(format!("phi must lie in [0, 1], got {phi}")));
    }
    SimilarityMatrix::from_matrix(DMatrix::from_fn(slots, slots, |i, j| phi.powi(i.abs_diff(j) as i32)))
}
