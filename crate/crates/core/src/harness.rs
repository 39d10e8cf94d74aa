//! Experiment orchestration: synthetic fleets, method comparisons, MRE
//! tables and coverage classification.
//!
//! Every table is a pure function of its config and top-level seed. Each
//! simulated instance `i` runs on `child_seed(seed, i)`, which in turn keys
//! the fleet, the ground truth, the random baseline and the imputer.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::seq::IndexedRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::greedy::{lazy_greedy_select, random_select, SelectionResult};
use crate::imputation::{impute, mre_percent, ImputeConfig, ObservationSet, TemporalConfig};
use crate::objectives::{fls_of, pc_of, psc_of, rfl_of, Evaluator, Objective};
use crate::occupancy::{
    build_occupancy, load_gtfs_dir, parse_gtfs_time, sampling_matrix, shuffle_stops, subsample_stops, LocationSet,
    OccupancyTensor, SamplingMatrix, Stop, TimeGrid,
};
use crate::rng::{self, child_seed, stream};
use crate::simgen::{ar1_temporal_similarity, draw_shape, simulate_ar, simulate_factored, NOISE_STD};
use crate::similarity::{distance_matrix, exponential_similarity, normalized_similarity, SimilarityMatrix};

/// Decay rate of the exponential side-information similarity, per km.
pub const DEFAULT_LAMBDA_PER_KM: f64 = 0.07676;
/// ρ used for the RFL column of the selection table.
pub const TABLE_RHO: f64 = 0.98;
/// Draws averaged for the random baseline's mean row.
pub const RANDOM_DRAWS: usize = 10;
/// Bus budgets for a 40-bus synthetic fleet.
pub const DESK_KS: [usize; 3] = [4, 8, 12];

/// Center of the synthetic service area.
const ORIGIN_LAT: f64 = 28.6139;
const ORIGIN_LON: f64 = 77.2090;
const KM_PER_DEG_LAT: f64 = 111.195;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FleetConfig {
    pub locations: usize,
    pub slots: usize,
    pub buses: usize,
    /// Stops per route.
    pub route_len: usize,
    /// Traversals of its route per bus.
    pub passes: usize,
    /// Side of the square service area.
    pub area_km: f64,
}

impl Default for FleetConfig {
    fn default() -> Self {
        FleetConfig {
            locations: 60,
            slots: 24,
            buses: 40,
            route_len: 12,
            passes: 4,
            area_km: 20.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Fleet {
    pub locations: LocationSet,
    pub tensor: OccupancyTensor,
}

/// Random fleet over uniformly scattered locations.
///
/// A route starts at a random location and repeatedly steps to one of the
/// three nearest unvisited locations. Each pass starts at a random slot,
/// runs forward or backward with equal odds, and advances one stop per slot;
/// stops past the last slot are cut.
pub fn synth_fleet(cfg: &FleetConfig, seed: u64) -> Result<Fleet> {
    if cfg.locations == 0 || cfg.slots == 0 || cfg.buses == 0 || cfg.route_len == 0 || cfg.passes == 0 {
        return Err(Error::arg("fleet parameters must be positive"));
    }
    if !(cfg.area_km > 0.0) {
        return Err(Error::arg("fleet area must be positive"));
    }
    let mut r = rng::seeded(seed, stream::FLEET);
    let km_per_deg_lon = KM_PER_DEG_LAT * ORIGIN_LAT.to_radians().cos();
    let stops: Vec<Stop> = (0..cfg.locations)
        .map(|i| {
            let (x, y) = (r.random::<f64>() * cfg.area_km, r.random::<f64>() * cfg.area_km);
            Stop::new(
                format!("L{i}"),
                ORIGIN_LAT + y / KM_PER_DEG_LAT,
                ORIGIN_LON + x / km_per_deg_lon,
            )
        })
        .collect::<Result<_>>()?;
    let locations = LocationSet {
        stops,
        min_separation_m: 0.0,
    };
    let d = distance_matrix(&locations);
    let d = d.matrix();
    let route_len = cfg.route_len.min(cfg.locations);
    let mut entries = Vec::new();
    for b in 0..cfg.buses {
        let mut route = vec![r.random_range(0..cfg.locations)];
        while route.len() < route_len {
            let cur = *route.last().expect("non-empty");
            let mut near: Vec<usize> = (0..cfg.locations).filter(|j| !route.contains(j)).collect();
            near.sort_by(|&i, &j| d[(cur, i)].total_cmp(&d[(cur, j)]).then(i.cmp(&j)));
            near.truncate(3);
            route.push(*near.choose(&mut r).expect("route_len <= L leaves candidates"));
        }
        for _ in 0..cfg.passes {
            let start = r.random_range(0..cfg.slots);
            if r.random::<bool>() {
                route.reverse();
            }
            for (s, &l) in route.iter().enumerate() {
                if start + s < cfg.slots {
                    entries.push((l, start + s, b));
                }
            }
        }
    }
    let tensor = OccupancyTensor::new(cfg.locations, cfg.slots, cfg.buses, entries)?;
    Ok(Fleet { locations, tensor })
}

/// A bus-selection method. Serialized in its string form, e.g. `rfl(0.98)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Method {
    Random,
    /// Greedy on percentage coverage.
    Mc,
    /// Greedy on percentage location coverage.
    Mcl,
    Fls,
    Rfl {
        rho: f64,
    },
}

pub const METHOD_NAMES: [&str; 5] = ["random", "mc", "mcl", "fls", "rfl"];

impl Method {
    pub fn parse(name: &str, rho: Option<f64>) -> Result<Self> {
        match name {
            "random" => Ok(Method::Random),
            "mc" => Ok(Method::Mc),
            "mcl" => Ok(Method::Mcl),
            "fls" => Ok(Method::Fls),
            "rfl" => Ok(Method::Rfl {
                rho: rho.unwrap_or(TABLE_RHO),
            }),
            other => Err(Error::arg(format!(
                "unknown method `{other}`; valid methods are {}",
                METHOD_NAMES.join(", ")
            ))),
        }
    }

    pub fn objective(&self) -> Option<Objective> {
        match *self {
            Method::Random => None,
            Method::Mc => Some(Objective::Pc),
            Method::Mcl => Some(Objective::Psc),
            Method::Fls => Some(Objective::Fls),
            Method::Rfl { rho } => Some(Objective::Rfl { rho }),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Random => write!(f, "random"),
            Method::Mc => write!(f, "mc"),
            Method::Mcl => write!(f, "mcl"),
            Method::Fls => write!(f, "fls"),
            Method::Rfl { rho } => write!(f, "rfl({rho})"),
        }
    }
}

/// Accepts `random`, `mc`, `mcl`, `fls`, `rfl` and `rfl(0.95)`.
impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Some(inner) = s.strip_prefix("rfl(").and_then(|x| x.strip_suffix(')')) {
            let rho = inner
                .trim()
                .parse()
                .map_err(|_| Error::arg(format!("bad rho in `{s}`")))?;
            return Ok(Method::Rfl { rho });
        }
        Method::parse(s, None)
    }
}

impl TryFrom<String> for Method {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Method> for String {
    fn from(m: Method) -> String {
        m.to_string()
    }
}

/// Picks `k` buses with `method`; `seed` only matters for `Random`.
pub fn select(
    method: Method,
    tensor: &OccupancyTensor,
    s: &SimilarityMatrix,
    k: usize,
    seed: u64,
) -> Result<SelectionResult> {
    match method.objective() {
        Some(obj) => lazy_greedy_select(&Evaluator::new(tensor, obj, Some(s))?, k),
        None => {
            let mut res = random_select(&Evaluator::new(tensor, Objective::Pc, None)?, k, seed)?;
            res.objective = None;
            Ok(res)
        }
    }
}

/// The four reported metrics of a sampling matrix. FLS and RFL are in percent.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub psc: f64,
    pub pc: f64,
    pub fls: f64,
    pub rfl: f64,
}

pub fn metrics(theta: &SamplingMatrix, s: &SimilarityMatrix) -> Result<Metrics> {
    Ok(Metrics {
        psc: psc_of(theta),
        pc: pc_of(theta),
        fls: 100.0 * fls_of(theta, s)?,
        rfl: 100.0 * rfl_of(theta, s, TABLE_RHO)?,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionRow {
    /// Method name; the random baseline also gets a `random_mean10` row.
    pub method: String,
    pub k: usize,
    pub metrics: Metrics,
    /// Empty for averaged rows.
    pub chosen: Vec<usize>,
}

/// One row per method and k: PSC, PC, FLS and RFL(ρ = 0.98) of the selected set.
pub fn run_selection_table(
    tensor: &OccupancyTensor,
    s: &SimilarityMatrix,
    methods: &[Method],
    ks: &[usize],
    seed: u64,
) -> Result<Vec<SelectionRow>> {
    let mut rows = Vec::new();
    for &k in ks {
        for &method in methods {
            let sel = select(method, tensor, s, k, seed)?;
            let theta = sampling_matrix(tensor, &sel.chosen)?;
            rows.push(SelectionRow {
                method: method.to_string(),
                k,
                metrics: metrics(&theta, s)?,
                chosen: sel.chosen,
            });
            if method == Method::Random {
                let draws: Vec<Metrics> = (0..RANDOM_DRAWS as u64)
                    .map(|i| {
                        let sel = select(Method::Random, tensor, s, k, child_seed(seed, i))?;
                        metrics(&sampling_matrix(tensor, &sel.chosen)?, s)
                    })
                    .collect::<Result<_>>()?;
                let n = draws.len() as f64;
                let mean = |f: fn(&Metrics) -> f64| draws.iter().map(f).sum::<f64>() / n;
                rows.push(SelectionRow {
                    method: format!("random_mean{RANDOM_DRAWS}"),
                    k,
                    metrics: Metrics {
                        psc: mean(|m| m.psc),
                        pc: mean(|m| m.pc),
                        fls: mean(|m| m.fls),
                        rfl: mean(|m| m.rfl),
                    },
                    chosen: Vec::new(),
                });
            }
        }
    }
    Ok(rows)
}

pub fn selection_table_csv(rows: &[SelectionRow], seed: u64) -> String {
    let mut out = format!("# seed={seed}\nmethod,k,psc,pc,fls,rfl_0.98,chosen\n");
    for r in rows {
        let ids: Vec<String> = r.chosen.iter().map(|b| b.to_string()).collect();
        out.push_str(&format!(
            "{},{},{:.3},{:.3},{:.3},{:.3},{}\n",
            r.method,
            r.k,
            r.metrics.psc,
            r.metrics.pc,
            r.metrics.fls,
            r.metrics.rfl,
            ids.join(" ")
        ));
    }
    out
}

/// Ground-truth generator for MRE experiments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Simulator {
    /// Factored model; basis sizes and rank drawn per instance.
    Factored {
        basis: (usize, usize),
        rank: (usize, usize),
        temporal_phi: f64,
    },
    /// Autoregressive model with coefficient `c`.
    Autoregressive {
        basis: (usize, usize),
        rank: (usize, usize),
        c: f64,
    },
}

impl Default for Simulator {
    fn default() -> Self {
        Simulator::Factored {
            basis: (3, 6),
            rank: (20, 30),
            temporal_phi: 0.9,
        }
    }
}

impl Simulator {
    pub fn generate(&self, g: &SimilarityMatrix, slots: usize, noise_std: f64, seed: u64) -> Result<DMatrix<f64>> {
        let y = match *self {
            Simulator::Factored {
                basis,
                rank,
                temporal_phi,
            } => {
                let shape = draw_shape(seed, basis, rank);
                let h = ar1_temporal_similarity(slots, temporal_phi)?;
                simulate_factored(
                    g,
                    &h,
                    shape.m.min(g.len()),
                    shape.n.min(slots),
                    shape.r,
                    noise_std,
                    seed,
                )?
            }
            Simulator::Autoregressive { basis, rank, c } => {
                let shape = draw_shape(seed, basis, rank);
                simulate_ar(g, shape.m.min(g.len()), shape.r, c, slots, noise_std, seed)?
            }
        };
        Ok(y.values)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Imputer {
    Vbmc,
    Vbsf,
}

impl fmt::Display for Imputer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Imputer::Vbmc => "vbmc_cs",
            Imputer::Vbsf => "vbsf_cs",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MreConfig {
    pub fleet: FleetConfig,
    pub instances: usize,
    pub seed: u64,
    pub ks: Vec<usize>,
    pub methods: Vec<Method>,
    pub simulator: Simulator,
    pub imputers: Vec<Imputer>,
    pub impute: ImputeConfig,
    pub temporal: TemporalConfig,
    pub noise_std: f64,
    pub lambda_per_km: f64,
}

impl Default for MreConfig {
    fn default() -> Self {
        MreConfig {
            fleet: FleetConfig::default(),
            instances: 10,
            seed: 0,
            ks: DESK_KS.to_vec(),
            methods: vec![
                Method::Random,
                Method::Mc,
                Method::Mcl,
                Method::Fls,
                Method::Rfl { rho: TABLE_RHO },
            ],
            simulator: Simulator::default(),
            imputers: vec![Imputer::Vbmc],
            impute: ImputeConfig::default(),
            temporal: TemporalConfig::default(),
            noise_std: NOISE_STD,
            lambda_per_km: DEFAULT_LAMBDA_PER_KM,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MreRow {
    pub method: String,
    pub k: usize,
    pub imputer: Imputer,
    pub mean_mre_percent: f64,
    /// Per instance, in instance order.
    pub mre_percent: Vec<f64>,
}

/// Gains-side and imputation-side similarities for a location set.
pub fn similarities(locations: &LocationSet, lambda_per_km: f64) -> Result<(SimilarityMatrix, SimilarityMatrix)> {
    let d = distance_matrix(locations);
    Ok((normalized_similarity(&d)?, exponential_similarity(&d, lambda_per_km)?))
}

/// Where the fleet for each instance comes from.
#[derive(Clone, Copy, Debug)]
pub enum FleetSource<'a> {
    /// A fresh synthetic fleet per instance, from `MreConfig::fleet`.
    Synthetic,
    /// One fixed fleet shared by all instances.
    Fixed(&'a Fleet),
}

/// For each instance: build the fleet, simulate the truth, select buses by
/// each method, mask the truth by Θ(M), impute, and score MRE in percent.
pub fn run_mre_table(cfg: &MreConfig, source: FleetSource<'_>) -> Result<Vec<MreRow>> {
    if cfg.instances == 0 {
        return Err(Error::arg("need at least one instance"));
    }
    let per_instance: Vec<Vec<f64>> = (0..cfg.instances as u64)
        .into_par_iter()
        .map(|i| run_instance(cfg, source, child_seed(cfg.seed, i)))
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    let mut col = 0;
    for &k in &cfg.ks {
        for method in &cfg.methods {
            for &imputer in &cfg.imputers {
                let values: Vec<f64> = per_instance.iter().map(|v| v[col]).collect();
                col += 1;
                rows.push(MreRow {
                    method: method.to_string(),
                    k,
                    imputer,
                    mean_mre_percent: values.iter().sum::<f64>() / values.len() as f64,
                    mre_percent: values,
                });
            }
        }
    }
    Ok(rows)
}

/// MRE values in (k, method, imputer) order.
fn run_instance(cfg: &MreConfig, source: FleetSource<'_>, seed: u64) -> Result<Vec<f64>> {
    let owned;
    let fleet = match source {
        FleetSource::Synthetic => {
            owned = synth_fleet(&cfg.fleet, seed)?;
            &owned
        }
        FleetSource::Fixed(f) => f,
    };
    let (s, g) = similarities(&fleet.locations, cfg.lambda_per_km)?;
    let truth = cfg
        .simulator
        .generate(&g, fleet.tensor.n_slots(), cfg.noise_std, seed)?;
    let impute_cfg = ImputeConfig {
        seed,
        ..cfg.impute.clone()
    };
    let mut out = Vec::new();
    for &k in &cfg.ks {
        for &method in &cfg.methods {
            let sel = select(method, &fleet.tensor, &s, k, seed)?;
            let theta = sampling_matrix(&fleet.tensor, &sel.chosen)?;
            let obs = ObservationSet::from_mask(&truth, &theta)?;
            for &imputer in &cfg.imputers {
                let temporal = (imputer == Imputer::Vbsf).then_some(&cfg.temporal);
                let est = impute(&obs, &g, &impute_cfg, temporal, None)?.estimate;
                out.push(mre_percent(&truth, &est)?);
            }
        }
    }
    Ok(out)
}

pub fn mre_table_csv(rows: &[MreRow], seed: u64) -> String {
    let mut out = format!("# seed={seed}\nmethod,k,imputer,mean_mre_percent,per_instance\n");
    for r in rows {
        let v: Vec<String> = r.mre_percent.iter().map(|x| format!("{x:.4}")).collect();
        out.push_str(&format!(
            "{},{},{},{:.4},{}\n",
            r.method,
            r.k,
            r.imputer,
            r.mean_mre_percent,
            v.join(" ")
        ));
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoverageLabel {
    Both,
    RflOnly,
    OtherOnly,
    Neither,
}

impl CoverageLabel {
    pub fn name(self) -> &'static str {
        match self {
            CoverageLabel::Both => "both",
            CoverageLabel::RflOnly => "rfl_only",
            CoverageLabel::OtherOnly => "other_only",
            CoverageLabel::Neither => "neither",
        }
    }
}

/// A location counts as covered when its row has at least `min_timestamps` ones.
pub fn coverage_classification(
    theta_rfl: &SamplingMatrix,
    theta_other: &SamplingMatrix,
    min_timestamps: usize,
) -> Result<Vec<CoverageLabel>> {
    if (theta_rfl.n_locations(), theta_rfl.n_slots()) != (theta_other.n_locations(), theta_other.n_slots()) {
        return Err(Error::arg("sampling matrices differ in shape"));
    }
    Ok((0..theta_rfl.n_locations())
        .map(|l| {
            let a = theta_rfl.row_count(l) >= min_timestamps;
            let b = theta_other.row_count(l) >= min_timestamps;
            match (a, b) {
                (true, true) => CoverageLabel::Both,
                (true, false) => CoverageLabel::RflOnly,
                (false, true) => CoverageLabel::OtherOnly,
                (false, false) => CoverageLabel::Neither,
            }
        })
        .collect())
}

/// `lat,lon,label` lines for plotting.
pub fn coverage_csv(locations: &LocationSet, labels: &[CoverageLabel]) -> Result<String> {
    if locations.len() != labels.len() {
        return Err(Error::arg("one label per location required"));
    }
    let mut out = String::from("lat,lon,label\n");
    for (stop, label) in locations.stops.iter().zip(labels) {
        out.push_str(&format!("{},{},{}\n", stop.lat, stop.lon, label.name()));
    }
    Ok(out)
}

/// Mean selected-set PSC per method over synthetic fleets `child_seed(seed, i)`.
pub fn mean_psc(cfg: &FleetConfig, methods: &[Method], k: usize, instances: usize, seed: u64) -> Result<Vec<f64>> {
    let per: Vec<Vec<f64>> = (0..instances as u64)
        .into_par_iter()
        .map(|i| {
            let s_i = child_seed(seed, i);
            let fleet = synth_fleet(cfg, s_i)?;
            let (s, _) = similarities(&fleet.locations, DEFAULT_LAMBDA_PER_KM)?;
            methods
                .iter()
                .map(|&m| {
                    let sel = select(m, &fleet.tensor, &s, k, s_i)?;
                    Ok(psc_of(&sampling_matrix(&fleet.tensor, &sel.chosen)?))
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    Ok((0..methods.len())
        .map(|j| per.iter().map(|v| v[j]).sum::<f64>() / instances as f64)
        .collect())
}

/// Source of the occupancy tensor for an experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Dataset {
    Synthetic(FleetConfig),
    Gtfs(GtfsConfig),
}

impl Default for Dataset {
    fn default() -> Self {
        Dataset::Synthetic(FleetConfig::default())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GtfsConfig {
    pub dir: PathBuf,
    /// Minimum separation between kept stops.
    pub d_meters: f64,
    /// A visit covers every location within this distance.
    pub radius_meters: f64,
    /// Grid bounds as `HH:MM:SS`.
    pub start: String,
    pub end: String,
    pub slot_minutes: u32,
    /// Shuffle stops with this seed before subsampling.
    pub shuffle_seed: Option<u64>,
}

impl Default for GtfsConfig {
    fn default() -> Self {
        GtfsConfig {
            dir: PathBuf::from("gtfs"),
            d_meters: 500.0,
            radius_meters: 500.0,
            start: "06:00:00".into(),
            end: "22:00:00".into(),
            slot_minutes: 10,
            shuffle_seed: None,
        }
    }
}

impl GtfsConfig {
    pub fn grid(&self) -> Result<TimeGrid> {
        let parse = |s: &str| parse_gtfs_time(s).ok_or_else(|| Error::arg(format!("bad grid time `{s}`")));
        TimeGrid::new(parse(&self.start)?, parse(&self.end)?, self.slot_minutes)
    }

    pub fn load(&self) -> Result<Fleet> {
        let feed = load_gtfs_dir(&self.dir)?;
        let stops = match self.shuffle_seed {
            Some(seed) => shuffle_stops(&feed.stops, seed),
            None => feed.stops.clone(),
        };
        let locations = subsample_stops(&stops, self.d_meters)?;
        let tensor = build_occupancy(&feed, &locations, &self.grid()?, self.radius_meters)?;
        Ok(Fleet { locations, tensor })
    }
}

impl Dataset {
    pub fn load(&self, seed: u64) -> Result<Fleet> {
        match self {
            Dataset::Synthetic(cfg) => synth_fleet(cfg, seed),
            Dataset::Gtfs(cfg) => cfg.load(),
        }
    }
}

/// Everything needed to regenerate the report tables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub dataset: Dataset,
    pub methods: Vec<Method>,
    pub ks: Vec<usize>,
    /// ρ values for the sweep table.
    pub rho_sweep: Vec<f64>,
    /// Coverage thresholds in timestamps.
    pub coverage_min_timestamps: Vec<usize>,
    pub simulator: Simulator,
    pub instances: usize,
    pub imputers: Vec<Imputer>,
    pub impute: ImputeConfig,
    pub temporal: TemporalConfig,
    pub noise_std: f64,
    pub lambda_per_km: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let mre = MreConfig::default();
        ExperimentConfig {
            seed: 0,
            dataset: Dataset::default(),
            methods: mre.methods,
            ks: mre.ks,
            rho_sweep: vec![0.95, 0.98, 0.99, 1.0],
            coverage_min_timestamps: vec![1, 10],
            simulator: mre.simulator,
            instances: mre.instances,
            imputers: vec![Imputer::Vbmc, Imputer::Vbsf],
            impute: mre.impute,
            temporal: mre.temporal,
            noise_std: mre.noise_std,
            lambda_per_km: mre.lambda_per_km,
        }
    }
}

impl ExperimentConfig {
    /// Checks what can be checked without loading data.
    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() || self.ks.is_empty() {
            return Err(Error::arg("need at least one method and one k"));
        }
        if self.ks.contains(&0) {
            return Err(Error::arg("k must be at least 1"));
        }
        for m in &self.methods {
            if let Some(obj) = m.objective() {
                obj.validate()?;
            }
        }
        for &rho in &self.rho_sweep {
            Objective::Rfl { rho }.validate()?;
        }
        if let Dataset::Synthetic(f) = &self.dataset {
            if let Some(&k) = self.ks.iter().find(|&&k| k > f.buses) {
                return Err(Error::arg(format!("k = {k} exceeds the fleet size {}", f.buses)));
            }
        }
        if self.instances == 0 {
            return Err(Error::arg("need at least one instance"));
        }
        Ok(())
    }

    pub fn mre_config(&self) -> MreConfig {
        let fleet = match &self.dataset {
            Dataset::Synthetic(f) => f.clone(),
            Dataset::Gtfs(_) => FleetConfig::default(),
        };
        MreConfig {
            fleet,
            instances: self.instances,
            seed: self.seed,
            ks: self.ks.clone(),
            methods: self.methods.clone(),
            simulator: self.simulator.clone(),
            imputers: self.imputers.clone(),
            impute: self.impute.clone(),
            temporal: self.temporal.clone(),
            noise_std: self.noise_std,
            lambda_per_km: self.lambda_per_km,
        }
    }
}

/// Shape and density of the fleet a report ran on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FleetSummary {
    pub locations: usize,
    pub slots: usize,
    pub buses: usize,
    pub density: f64,
}

impl From<&Fleet> for FleetSummary {
    fn from(f: &Fleet) -> Self {
        FleetSummary {
            locations: f.tensor.n_locations(),
            slots: f.tensor.n_slots(),
            buses: f.tensor.n_buses(),
            density: f.tensor.density(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub fleet: FleetSummary,
    pub selection: Vec<SelectionRow>,
    pub rho_sweep: Vec<SelectionRow>,
    pub mre: Vec<MreRow>,
    /// Files written, relative to the output directory.
    pub files: Vec<String>,
}

fn write_file(dir: &Path, name: &str, text: &str, files: &mut Vec<String>) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    files.push(name.to_string());
    Ok(())
}

/// Runs the selection table, ρ sweep, coverage maps and MRE tables for `cfg`
/// and writes them under `out_dir`.
///
/// The selection-side tables use the fleet loaded with the top-level seed.
/// MRE instances use a fresh synthetic fleet each, or the loaded fleet for
/// GTFS data.
pub fn run_report(cfg: &ExperimentConfig, out_dir: &Path) -> Result<Report> {
    cfg.validate()?;
    let fleet = cfg.dataset.load(cfg.seed)?;
    if let Some(&k) = cfg.ks.iter().find(|&&k| k > fleet.tensor.n_buses()) {
        return Err(Error::arg(format!(
            "k = {k} exceeds the fleet size {}",
            fleet.tensor.n_buses()
        )));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut files = Vec::new();
    let (s, _) = similarities(&fleet.locations, cfg.lambda_per_km)?;

    let selection = run_selection_table(&fleet.tensor, &s, &cfg.methods, &cfg.ks, cfg.seed)?;
    write_file(
        out_dir,
        "selection_table.csv",
        &selection_table_csv(&selection, cfg.seed),
        &mut files,
    )?;

    let sweep_methods: Vec<Method> = cfg.rho_sweep.iter().map(|&rho| Method::Rfl { rho }).collect();
    let rho_sweep = run_selection_table(&fleet.tensor, &s, &sweep_methods, &cfg.ks, cfg.seed)?;
    write_file(
        out_dir,
        "rho_sweep.csv",
        &selection_table_csv(&rho_sweep, cfg.seed),
        &mut files,
    )?;

    let k = *cfg.ks.iter().max().expect("validated non-empty");
    let theta_rfl = sampling_matrix(
        &fleet.tensor,
        &select(Method::Rfl { rho: TABLE_RHO }, &fleet.tensor, &s, k, cfg.seed)?.chosen,
    )?;
    for &method in cfg.methods.iter().filter(|m| !matches!(m, Method::Rfl { .. })) {
        let theta = sampling_matrix(&fleet.tensor, &select(method, &fleet.tensor, &s, k, cfg.seed)?.chosen)?;
        for &th in &cfg.coverage_min_timestamps {
            let labels = coverage_classification(&theta_rfl, &theta, th)?;
            let name = format!("coverage_rfl_vs_{method}_k{k}_min{th}.csv");
            write_file(out_dir, &name, &coverage_csv(&fleet.locations, &labels)?, &mut files)?;
        }
    }

    let source = match cfg.dataset {
        Dataset::Synthetic(_) => FleetSource::Synthetic,
        Dataset::Gtfs(_) => FleetSource::Fixed(&fleet),
    };
    let mre = run_mre_table(&cfg.mre_config(), source)?;
    for &imputer in &cfg.imputers {
        let rows: Vec<MreRow> = mre.iter().filter(|r| r.imputer == imputer).cloned().collect();
        write_file(
            out_dir,
            &format!("mre_{imputer}.csv"),
            &mre_table_csv(&rows, cfg.seed),
            &mut files,
        )?;
    }

    let report = Report {
        fleet: FleetSummary::from(&fleet),
        selection,
        rho_sweep,
        mre,
        files,
    };
    let json = serde_json::to_string_pretty(&report).map_err(|e| Error::Format(e.to_string()))?;
    let mut files = report.files.clone();
    write_file(out_dir, "report.json", &json, &mut files)?;
    Ok(Report { files, ..report })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectives::GainState;

    fn small() -> FleetConfig {
        FleetConfig {
            locations: 20,
            slots: 12,
            buses: 8,
            route_len: 5,
            passes: 2,
            area_km: 10.0,
        }
    }

    #[test]
    fn fleet_is_deterministic_and_in_range() {
        let a = synth_fleet(&small(), 3).unwrap();
        let b = synth_fleet(&small(), 3).unwrap();
        assert_eq!(a.tensor, b.tensor);
        assert_ne!(a.tensor, synth_fleet(&small(), 4).unwrap().tensor);
        assert_eq!(
            (a.tensor.n_locations(), a.tensor.n_slots(), a.tensor.n_buses()),
            (20, 12, 8)
        );
        for b in 0..8 {
            let mut locs: Vec<usize> = a.tensor.bus_cells(b).iter().map(|&(_, l)| l).collect();
            locs.sort_unstable();
            locs.dedup();
            assert!(locs.len() <= 5);
        }
    }

    #[test]
    fn single_bus_covering_everything() {
        let cfg = FleetConfig {
            locations: 10,
            slots: 10,
            buses: 1,
            route_len: 10,
            passes: 1,
            area_km: 5.0,
        };
        // the pass covers every location exactly when it starts at slot 0
        let seed = (0..500)
            .find(|&s| synth_fleet(&cfg, s).unwrap().tensor.entries().len() == 10)
            .unwrap();
        let fleet = synth_fleet(&cfg, seed).unwrap();
        assert_eq!(psc_of(&sampling_matrix(&fleet.tensor, &[0]).unwrap()), 100.0);
    }

    #[test]
    fn duplicate_bus_adds_nothing() {
        let fleet = synth_fleet(&small(), 5).unwrap();
        let mut entries: Vec<_> = fleet.tensor.entries().to_vec();
        entries.extend(fleet.tensor.bus_cells(2).iter().map(|&(t, l)| (l, t, 8)));
        let y = OccupancyTensor::new(20, 12, 9, entries).unwrap();
        let (s, _) = similarities(&fleet.locations, DEFAULT_LAMBDA_PER_KM).unwrap();
        for obj in [
            Objective::Pc,
            Objective::Psc,
            Objective::Fls,
            Objective::Rfl { rho: 0.98 },
        ] {
            let ev = Evaluator::new(&y, obj, Some(&s)).unwrap();
            let mut st: GainState = ev.state();
            st.commit(2);
            assert_eq!(st.incremental_gain(8), 0.0, "{obj:?}");
        }
    }

    #[test]
    fn methods_serialize_as_strings() {
        let m = vec![Method::Mc, Method::Rfl { rho: 0.95 }];
        let json = serde_json::to_string(&m).unwrap();
        assert_eq!(json, r#"["mc","rfl(0.95)"]"#);
        assert_eq!(serde_json::from_str::<Vec<Method>>(&json).unwrap(), m);
        assert!(serde_json::from_str::<Vec<Method>>(r#"["best"]"#).is_err());
    }

    #[test]
    fn config_rejects_k_above_fleet() {
        let cfg = ExperimentConfig {
            ks: vec![41],
            ..Default::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Argument(_))));
        assert!(ExperimentConfig::default().validate().is_ok());
    }

    #[test]
    fn method_names_parse() {
        assert_eq!("rfl(0.95)".parse::<Method>().unwrap(), Method::Rfl { rho: 0.95 });
        assert_eq!("mcl".parse::<Method>().unwrap(), Method::Mcl);
        assert_eq!(Method::parse("rfl", None).unwrap(), Method::Rfl { rho: TABLE_RHO });
        let err = Method::parse("best", None).unwrap_err().to_string();
        assert!(METHOD_NAMES.iter().all(|m| err.contains(m)));
    }

    #[test]
    fn fls_equals_rfl_at_rho_zero() {
        let fleet = synth_fleet(&small(), 6).unwrap();
        let (s, _) = similarities(&fleet.locations, DEFAULT_LAMBDA_PER_KM).unwrap();
        let a = select(Method::Fls, &fleet.tensor, &s, 4, 0).unwrap();
        let b = select(Method::Rfl { rho: 0.0 }, &fleet.tensor, &s, 4, 0).unwrap();
        assert_eq!(a.chosen, b.chosen);
    }

    #[test]
    fn selection_table_is_reproducible() {
        let fleet = synth_fleet(&small(), 7).unwrap();
        let (s, _) = similarities(&fleet.locations, DEFAULT_LAMBDA_PER_KM).unwrap();
        let methods = [Method::Random, Method::Mc, Method::Rfl { rho: 0.98 }];
        let a = run_selection_table(&fleet.tensor, &s, &methods, &[2, 8], 11).unwrap();
        assert_eq!(
            a,
            run_selection_table(&fleet.tensor, &s, &methods, &[2, 8], 11).unwrap()
        );
        let full = psc_of(&sampling_matrix(&fleet.tensor, &(0..8).collect::<Vec<_>>()).unwrap());
        for row in a.iter().filter(|r| r.k == 8) {
            assert_eq!(row.metrics.psc, full, "{}", row.method);
        }
        assert_eq!(a.iter().filter(|r| r.method == "random_mean10").count(), 2);
    }

    #[test]
    fn coverage_labels_by_hand() {
        let mut rfl = SamplingMatrix::zeros(4, 3);
        let mut other = SamplingMatrix::zeros(4, 3);
        rfl.set(0, 0);
        other.set(0, 2);
        rfl.set(1, 1);
        other.set(2, 0);
        other.set(2, 1);
        let labels = coverage_classification(&rfl, &other, 1).unwrap();
        use CoverageLabel::*;
        assert_eq!(labels, vec![Both, RflOnly, OtherOnly, Neither]);
        assert_eq!(
            coverage_classification(&rfl, &other, 2).unwrap(),
            vec![Neither, Neither, OtherOnly, Neither]
        );
        assert_eq!(
            coverage_classification(&rfl, &rfl, 1).unwrap(),
            vec![Both, Both, Neither, Neither]
        );
        let empty = SamplingMatrix::zeros(4, 3);
        assert_eq!(
            coverage_classification(&rfl, &empty, 1).unwrap(),
            vec![RflOnly, RflOnly, Neither, Neither]
        );
        assert!(coverage_classification(&rfl, &SamplingMatrix::zeros(4, 2), 1).is_err());
    }

    #[test]
    fn full_sampling_reaches_the_noise_floor() {
        let cfg = MreConfig {
            fleet: FleetConfig {
                locations: 15,
                slots: 10,
                buses: 30,
                route_len: 15,
                passes: 10,
                area_km: 10.0,
            },
            instances: 2,
            ks: vec![30],
            methods: vec![Method::Mc],
            impute: ImputeConfig {
                rank: 5,
                ..Default::default()
            },
            simulator: Simulator::Factored {
                basis: (2, 3),
                rank: (3, 4),
                temporal_phi: 0.9,
            },
            ..Default::default()
        };
        // force every cell sampled by adding a bus that covers the grid
        let base = synth_fleet(&cfg.fleet, 1).unwrap();
        let mut entries: Vec<_> = base.tensor.entries().to_vec();
        entries.extend((0..15).flat_map(|l| (0..10).map(move |t| (l, t, 29))));
        let fleet = Fleet {
            locations: base.locations,
            tensor: OccupancyTensor::new(15, 10, 30, entries).unwrap(),
        };
        let rows = run_mre_table(&cfg, FleetSource::Fixed(&fleet)).unwrap();
        assert!(rows[0].mean_mre_percent < 1.0, "{rows:?}");
        assert_eq!(rows, run_mre_table(&cfg, FleetSource::Fixed(&fleet)).unwrap());
    }
}
