//! Spatial and temporal similarity matrices.
//!
//! Two spatial similarities are used: the normalized-distance form
//! `S = 1 - D / max(D)` drives the selection gains, while the exponential
//! kernel `G = exp(-lambda * d_km)` drives simulation and cold-start
//! imputation. `lambda` can be regressed from static-monitor readings.

use std::path::Path;

use log::warn;
use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::geo::haversine_m;
use crate::grid;
use crate::occupancy::LocationSet;

/// Correlations at or below zero are floored here before taking logs.
pub const CORRELATION_FLOOR: f64 = 1e-6;

/// Pairwise great-circle distances in meters.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceMatrix(DMatrix<f64>);

impl DistanceMatrix {
    pub fn from_matrix(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::arg("distance matrix must be square"));
        }
        let n = m.nrows();
        for i in 0..n {
            if m[(i, i)] != 0.0 {
                return Err(Error::arg("distance matrix needs a zero diagonal"));
            }
            for j in 0..n {
                if !(m[(i, j)] >= 0.0) || m[(i, j)] != m[(j, i)] {
                    return Err(Error::arg("distances must be nonnegative and symmetric"));
                }
            }
        }
        Ok(DistanceMatrix(m))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.0.nrows() == 0
    }
}

/// Symmetric, unit-diagonal matrix with entries in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityMatrix(DMatrix<f64>);

impl SimilarityMatrix {
    pub fn from_matrix(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::arg("similarity matrix must be square"));
        }
        let n = m.nrows();
        for i in 0..n {
            if m[(i, i)] != 1.0 {
                return Err(Error::arg(format!("similarity diagonal at {i} is {}", m[(i, i)])));
            }
            for j in 0..i {
                let v = m[(i, j)];
                if !(0.0..=1.0).contains(&v) || v != m[(j, i)] {
                    return Err(Error::arg(format!(
                        "similarity entry ({i},{j}) = {v} is not a symmetric value in [0,1]"
                    )));
                }
            }
        }
        Ok(SimilarityMatrix(m))
    }

    pub fn identity(n: usize) -> Self {
        SimilarityMatrix(DMatrix::identity(n, n))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.0.nrows() == 0
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_matrix(grid::read_grid(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        grid::write_grid(path, &self.0)
    }
}

/// Temporal similarity: a learned dense `T x T` matrix, or the causal
/// kernel `rho^(t-j)` for `t >= j`.
#[derive(Clone, Debug, PartialEq)]
pub enum TemporalSimilarity {
    Dense(DMatrix<f64>),
    Causal { rho: f64 },
}

impl TemporalSimilarity {
    pub fn value(&self, t: usize, j: usize) -> f64 {
        match self {
            TemporalSimilarity::Dense(h) => h[(t, j)],
            TemporalSimilarity::Causal { rho } => causal_kernel(*rho, t, j),
        }
    }
}

pub fn distance_matrix(locations: &LocationSet) -> DistanceMatrix {
    let n = locations.len();
    let mut d = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..i {
            let (a, b) = (&locations.stops[i], &locations.stops[j]);
            let v = haversine_m(a.lat, a.lon, b.lat, b.lon);
            d[(i, j)] = v;
            d[(j, i)] = v;
        }
    }
    DistanceMatrix(d)
}

/// `S = 1 - D / max(D)`; the farthest pair gets exactly zero.
pub fn normalized_similarity(d: &DistanceMatrix) -> Result<SimilarityMatrix> {
    let max = d.0.max();
    if !(max > 0.0) {
        return Err(Error::Degenerate(
            "all pairwise distances are zero; normalized similarity is undefined".into(),
        ));
    }
    let n = d.len();
    let s = DMatrix::from_fn(n, n, |i, j| 1.0 - d.0[(i, j)] / max);
    Ok(SimilarityMatrix(s))
}

/// `G = exp(-lambda * d)` with `d` in kilometers and `lambda` per kilometer.
pub fn exponential_similarity(d: &DistanceMatrix, lambda_per_km: f64) -> Result<SimilarityMatrix> {
    if !(lambda_per_km >= 0.0) {
        return Err(Error::arg(format!("lambda must be nonnegative, got {lambda_per_km}")));
    }
    let n = d.len();
    let g = DMatrix::from_fn(n, n, |i, j| (-lambda_per_km * d.0[(i, j)] / 1000.0).exp());
    Ok(SimilarityMatrix(g))
}

/// `rho^(t-j)` for `t >= j`, zero otherwise.
pub fn causal_kernel(rho: f64, t: usize, j: usize) -> f64 {
    if t < j {
        0.0
    } else {
        rho.powi((t - j) as i32)
    }
}

/// Static-monitor readings: one row per station, one column per time step.
/// `NaN` marks a missing reading.
#[derive(Clone, Debug, PartialEq)]
pub struct StationReadings {
    pub coords: Vec<(f64, f64)>,
    pub values: DMatrix<f64>,
}

impl StationReadings {
    pub fn new(coords: Vec<(f64, f64)>, values: DMatrix<f64>) -> Result<Self> {
        if coords.len() != values.nrows() {
            return Err(Error::arg(format!(
                "{} station coordinates for {} reading rows",
                coords.len(),
                values.nrows()
            )));
        }
        Ok(StationReadings { coords, values })
    }

    /// Reads a station-by-time grid plus a `lat,lon` sidecar (one header line).
    pub fn read(grid_path: &Path, coords_path: &Path) -> Result<Self> {
        let values = grid::read_grid(grid_path)?;
        let text = std::fs::read_to_string(coords_path).map_err(|e| Error::io(coords_path, e))?;
        let mut coords = Vec::new();
        for (n, line) in text.lines().enumerate().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let mut it = line.split(',').map(|f| f.trim().parse::<f64>());
            match (it.next(), it.next(), it.next()) {
                (Some(Ok(lat)), Some(Ok(lon)), None) => coords.push((lat, lon)),
                _ => return Err(Error::Format(format!("coordinates line {}: expected lat,lon", n + 1))),
            }
        }
        Self::new(coords, values)
    }
}

/// Pearson correlation over positions where both series are finite.
/// Returns `None` with fewer than three shared points or zero variance.
fn pearson<'a>(a: impl Iterator<Item = &'a f64>, b: impl Iterator<Item = &'a f64>) -> Option<f64> {
    let pairs: Vec<(f64, f64)> = a
        .zip(b)
        .filter(|(x, y)| x.is_finite() && y.is_finite())
        .map(|(x, y)| (*x, *y))
        .collect();
    if pairs.len() < 3 {
        return None;
    }
    let n = pairs.len() as f64;
    let (mx, my) = pairs.iter().fold((0.0, 0.0), |(sx, sy), (x, y)| (sx + x, sy + y));
    let (mx, my) = (mx / n, my / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in &pairs {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Fits the decay rate of `corr(i, j) ~ exp(-lambda * d_ij)` by least
/// squares through the origin on `ln corr` against distance in km.
pub fn fit_lambda(readings: &StationReadings) -> Result<f64> {
    let n = readings.values.nrows();
    let (mut num, mut den) = (0.0, 0.0);
    let mut usable = 0usize;
    for i in 0..n {
        for j in 0..i {
            let (a, b) = (readings.coords[i], readings.coords[j]);
            let d_km = haversine_m(a.0, a.1, b.0, b.1) / 1000.0;
            if d_km <= 0.0 {
                continue;
            }
            let Some(rho) = pearson(readings.values.row(i).iter(), readings.values.row(j).iter()) else {
                continue;
            };
            let ln_rho = rho.clamp(CORRELATION_FLOOR, 1.0).ln();
            num += d_km * ln_rho;
            den += d_km * d_km;
            usable += 1;
        }
    }
    if usable < 2 {
        return Err(Error::InsufficientData(format!(
            "{usable} usable station pairs; at least 2 are needed"
        )));
    }
    Ok((-num / den).max(0.0))
}

/// Column-by-column Pearson correlation across stations, clamped to
/// `[0, 1]`. A constant column gets zero off-diagonal similarity.
pub fn temporal_similarity_from_data(readings: &StationReadings) -> Result<TemporalSimilarity> {
    let t = readings.values.ncols();
    if t < 2 {
        return Err(Error::arg("need at least two time columns"));
    }
    let mut h = DMatrix::identity(t, t);
    for a in 0..t {
        for b in 0..a {
            let v = match pearson(readings.values.column(a).iter(), readings.values.column(b).iter()) {
                Some(r) => r.max(0.0),
                None => {
                    warn!("time columns {a} and {b}: correlation undefined (constant column), using 0");
                    0.0
                }
            };
            h[(a, b)] = v;
            h[(b, a)] = v;
        }
    }
    Ok(TemporalSimilarity::Dense(h))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::occupancy::Stop;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn dist(rows: &[&[f64]]) -> DistanceMatrix {
        let n = rows.len();
        DistanceMatrix::from_matrix(DMatrix::from_fn(n, n, |i, j| rows[i][j])).unwrap()
    }

    #[test]
    fn single_location_distance() {
        let set = LocationSet {
            stops: vec![Stop::new("a", 10.0, 10.0).unwrap()],
            min_separation_m: 1.0,
        };
        assert_eq!(distance_matrix(&set).matrix(), &DMatrix::zeros(1, 1));
    }

    #[test]
    fn distance_of_hundredth_degree() {
        let set = LocationSet {
            stops: vec![
                Stop::new("a", 28.60, 77.2).unwrap(),
                Stop::new("b", 28.61, 77.2).unwrap(),
            ],
            min_separation_m: 1.0,
        };
        let d = distance_matrix(&set);
        assert!((d.matrix()[(0, 1)] - 1111.95).abs() < 0.01);
        assert_eq!(d.matrix()[(0, 1)], d.matrix()[(1, 0)]);
    }

    #[test]
    fn normalized_two_points() {
        let s = normalized_similarity(&dist(&[&[0.0, 100.0], &[100.0, 0.0]])).unwrap();
        assert_eq!(s.matrix(), &DMatrix::identity(2, 2));
    }

    #[test]
    fn normalized_three_points() {
        let d = dist(&[&[0.0, 50.0, 100.0], &[50.0, 0.0, 50.0], &[100.0, 50.0, 0.0]]);
        let s = normalized_similarity(&d).unwrap();
        let expected = DMatrix::from_row_slice(3, 3, &[1.0, 0.5, 0.0, 0.5, 1.0, 0.5, 0.0, 0.5, 1.0]);
        assert_eq!(s.matrix(), &expected);
    }

    #[test]
    fn normalized_rejects_all_zero() {
        let d = dist(&[&[0.0, 0.0], &[0.0, 0.0]]);
        assert!(matches!(normalized_similarity(&d), Err(Error::Degenerate(_))));
    }

    #[test]
    fn exponential_values() {
        let d = dist(&[&[0.0, 10_000.0], &[10_000.0, 0.0]]);
        let ones = exponential_similarity(&d, 0.0).unwrap();
        assert_eq!(ones.matrix(), &DMatrix::from_element(2, 2, 1.0));
        let g = exponential_similarity(&d, 0.07676).unwrap();
        assert!((g.get(0, 1) - 0.4641).abs() < 5e-5, "{}", g.get(0, 1));
        assert!(exponential_similarity(&d, -1.0).is_err());
    }

    #[test]
    fn exponential_decays_with_distance() {
        let mut last = 1.0;
        for km in [1.0, 5.0, 20.0, 100.0, 1000.0] {
            let d = dist(&[&[0.0, km * 1000.0], &[km * 1000.0, 0.0]]);
            let v = exponential_similarity(&d, 0.07676).unwrap().get(0, 1);
            assert!(v < last);
            last = v;
        }
        assert!(last < 1e-30);
    }

    #[test]
    fn causal_kernel_values() {
        assert_eq!(causal_kernel(0.98, 5, 5), 1.0);
        assert!((causal_kernel(0.98, 7, 5) - 0.9604).abs() < 1e-12);
        assert_eq!(causal_kernel(0.98, 4, 5), 0.0);
        assert_eq!(causal_kernel(0.0, 3, 3), 1.0);
        assert_eq!(causal_kernel(0.0, 4, 3), 0.0);
    }

    /// Stations on a line, `n_obs` draws from a Gaussian field with
    /// correlation `exp(-rate * d_km)`.
    fn gaussian_field(rate: f64, n_obs: usize, seed: u64) -> StationReadings {
        let kms = [0.0, 1.0, 2.5, 4.0, 6.0, 8.0, 10.0, 13.0];
        // one km of latitude in degrees
        let deg_per_km = (1000.0 / crate::geo::EARTH_RADIUS_M).to_degrees();
        let coords: Vec<(f64, f64)> = kms.iter().map(|k| (28.5 + k * deg_per_km, 77.0)).collect();
        let n = coords.len();
        let cov = DMatrix::from_fn(n, n, |i, j| {
            let d = haversine_m(coords[i].0, coords[i].1, coords[j].0, coords[j].1) / 1000.0;
            (-rate * d).exp()
        });
        let chol = cov.cholesky().unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let z = DMatrix::from_fn(n, n_obs, |_, _| StandardNormal.sample(&mut rng));
        StationReadings::new(coords, chol.l() * z).unwrap()
    }

    #[test]
    fn fit_lambda_recovers_generating_rate() {
        let readings = gaussian_field(0.1, 20_000, 7);
        let lambda = fit_lambda(&readings).unwrap();
        assert!((lambda - 0.1).abs() < 0.01, "lambda = {lambda}");
    }

    #[test]
    fn fit_lambda_identical_series_is_zero() {
        let row = [1.0, 3.0, 2.0, 5.0, 4.0];
        let values = DMatrix::from_fn(3, 5, |_, j| row[j]);
        let coords = vec![(28.5, 77.0), (28.6, 77.0), (28.7, 77.1)];
        let lambda = fit_lambda(&StationReadings::new(coords, values).unwrap()).unwrap();
        assert_eq!(lambda, 0.0);
    }

    #[test]
    fn fit_lambda_needs_two_pairs() {
        let values = DMatrix::from_row_slice(2, 4, &[1.0, 2.0, 3.0, 4.0, 2.0, 1.0, 4.0, 3.0]);
        let readings = StationReadings::new(vec![(28.5, 77.0), (28.6, 77.0)], values).unwrap();
        assert!(matches!(fit_lambda(&readings), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn temporal_similarity_identical_columns() {
        let values = DMatrix::from_fn(6, 3, |i, _| (i * i) as f64);
        let readings = StationReadings::new(vec![(0.0, 0.0); 6], values).unwrap();
        let TemporalSimilarity::Dense(h) = temporal_similarity_from_data(&readings).unwrap() else {
            panic!("expected dense");
        };
        for v in h.iter() {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn temporal_similarity_clamps_anticorrelation_and_constant_columns() {
        let values = DMatrix::from_row_slice(4, 3, &[1.0, -1.0, 5.0, 2.0, -2.0, 5.0, 3.0, -3.0, 5.0, 4.0, -4.0, 5.0]);
        let readings = StationReadings::new(vec![(0.0, 0.0); 4], values).unwrap();
        let h = match temporal_similarity_from_data(&readings).unwrap() {
            TemporalSimilarity::Dense(h) => h,
            _ => unreachable!(),
        };
        assert_eq!(h[(0, 1)], 0.0);
        assert_eq!(h[(0, 2)], 0.0);
        assert_eq!(h[(1, 2)], 0.0);
        assert_eq!(h[(2, 2)], 1.0);
    }

    #[test]
    fn temporal_similarity_tracks_ar1_coefficient() {
        // many stations, each an independent stationary AR(1) series
        let (stations, steps, phi) = (5000, 6, 0.9f64);
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let innov = (1.0 - phi * phi).sqrt();
        let mut values = DMatrix::zeros(stations, steps);
        for s in 0..stations {
            let mut x: f64 = StandardNormal.sample(&mut rng);
            for t in 0..steps {
                if t > 0 {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    x = phi * x + innov * e;
                }
                values[(s, t)] = x;
            }
        }
        let readings = StationReadings::new(vec![(0.0, 0.0); stations], values).unwrap();
        let TemporalSimilarity::Dense(h) = temporal_similarity_from_data(&readings).unwrap() else {
            unreachable!()
        };
        for t in 0..steps - 1 {
            assert!((h[(t, t + 1)] - 0.9).abs() < 0.05, "lag-1 at {t}: {}", h[(t, t + 1)]);
        }
    }

    fn random_distance(n: usize, seed: u64) -> DistanceMatrix {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let pts: Vec<(f64, f64)> = (0..n)
            .map(|_| {
                let a: f64 = StandardNormal.sample(&mut rng);
                let b: f64 = StandardNormal.sample(&mut rng);
                (28.6 + 0.05 * a, 77.2 + 0.05 * b)
            })
            .collect();
        let set = LocationSet {
            stops: pts
                .iter()
                .enumerate()
                .map(|(i, p)| Stop::new(i.to_string(), p.0, p.1).unwrap())
                .collect(),
            min_separation_m: 1.0,
        };
        distance_matrix(&set)
    }

    proptest! {
        #[test]
        fn similarity_constructions_are_valid(n in 2usize..12, seed in any::<u64>(), lambda in 0.0f64..2.0) {
            let d = random_distance(n, seed);
            prop_assert!(SimilarityMatrix::from_matrix(normalized_similarity(&d).unwrap().matrix().clone()).is_ok());
            prop_assert!(SimilarityMatrix::from_matrix(exponential_similarity(&d, lambda).unwrap().matrix().clone()).is_ok());
        }

        #[test]
        fn normalized_similarity_is_scale_invariant(n in 2usize..10, seed in any::<u64>(), scale in 0.01f64..100.0) {
            let d = random_distance(n, seed);
            let scaled = DistanceMatrix::from_matrix(d.matrix() * scale).unwrap();
            let a = normalized_similarity(&d).unwrap();
            let b = normalized_similarity(&scaled).unwrap();
            prop_assert!((a.matrix() - b.matrix()).abs().max() < 1e-12);
        }

        #[test]
        fn causal_kernel_recursion(rho in 0.0f64..=1.0, j in 0usize..20, gap in 1usize..20) {
            let t = j + gap;
            let lhs = causal_kernel(rho, t, j);
            let rhs = rho * causal_kernel(rho, t - 1, j);
            prop_assert!((lhs - rhs).abs() <= 1e-14);
        }
    }
}
