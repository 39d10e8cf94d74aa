//! Subcommand implementations. Inputs default to files of the conventional
//! name inside `--out-dir`, so the stages chain without extra flags.

use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use driveby_core::harness::{self, Dataset, ExperimentConfig, GtfsConfig, Imputer, Method, Simulator};
use driveby_core::imputation::{impute as run_impute, mre_percent, ObservationSet, Transition};
use driveby_core::simgen::{ar1_temporal_similarity, draw_shape, simulate_ar, simulate_factored, SpatioTemporalMatrix};
use driveby_core::{
    greedy::SelectionResult, sampling_matrix, Error, LocationSet, OccupancyTensor, Result, SimilarityMatrix,
};
use serde::Serialize;

use crate::manifest::Recorder;
use crate::Global;

const TENSOR: &str = "tensor.csv";
const LOCATIONS: &str = "locations.csv";
const SIMILARITY: &str = "similarity.csv";
const SIDE_SIMILARITY: &str = "side_similarity.csv";
const SELECTION: &str = "selection.txt";
const TRUTH: &str = "truth.csv";
const OBSERVATIONS: &str = "observations.csv";
const ESTIMATE: &str = "estimate.csv";

fn load_config(g: &Global) -> Result<ExperimentConfig> {
    let mut cfg = match &g.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
                path: path.clone(),
                source: e,
            })?;
            toml::from_str(&text).map_err(|e| Error::Argument(format!("{}: {e}", path.display())))?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = g.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn input(explicit: &Option<PathBuf>, g: &Global, name: &str) -> PathBuf {
    explicit.clone().unwrap_or_else(|| g.out_dir.join(name))
}

fn create_out_dir(g: &Global) -> Result<()> {
    std::fs::create_dir_all(&g.out_dir).map_err(|e| Error::Io {
        path: g.out_dir.clone(),
        source: e,
    })
}

fn read_locations(path: &Path) -> Result<LocationSet> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    LocationSet::from_csv(&text, 0.0)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn to_json(v: &impl Serialize) -> Result<String> {
    serde_json::to_string_pretty(v)
        .map(|s| s + "\n")
        .map_err(|e| Error::Format(e.to_string()))
}

fn mismatch(what: &str, a: impl std::fmt::Debug, b: impl std::fmt::Debug) -> Error {
    Error::Data(format!("stage mismatch: {what}: {a:?} vs {b:?}"))
}

/// Dataset flags shared by `ingest` and `report`.
#[derive(Args, Debug, Clone, Default)]
pub struct DatasetArgs {
    /// GTFS directory with stops.txt, trips.txt and stop_times.txt.
    #[arg(long, conflicts_with = "synthetic")]
    pub gtfs: Option<PathBuf>,
    /// Use the synthetic fleet.
    #[arg(long)]
    pub synthetic: bool,
    /// Minimum separation between kept stops, meters.
    #[arg(long)]
    pub d_meters: Option<f64>,
    /// Coverage radius around each location, meters.
    #[arg(long)]
    pub radius_meters: Option<f64>,
    #[arg(long)]
    pub slot_minutes: Option<u32>,
    /// Grid start, HH:MM:SS.
    #[arg(long)]
    pub start: Option<String>,
    /// Grid end, HH:MM:SS.
    #[arg(long)]
    pub end: Option<String>,
    /// Shuffle stops with this seed before subsampling.
    #[arg(long)]
    pub shuffle_seed: Option<u64>,
}

impl DatasetArgs {
    fn apply(&self, cfg: &mut ExperimentConfig) {
        if self.synthetic && !matches!(cfg.dataset, Dataset::Synthetic(_)) {
            cfg.dataset = Dataset::default();
        }
        if let Some(dir) = &self.gtfs {
            let mut gtfs = match &cfg.dataset {
                Dataset::Gtfs(g) => g.clone(),
                Dataset::Synthetic(_) => GtfsConfig::default(),
            };
            gtfs.dir = dir.clone();
            cfg.dataset = Dataset::Gtfs(gtfs);
        }
        if let Dataset::Gtfs(g) = &mut cfg.dataset {
            if let Some(v) = self.d_meters {
                g.d_meters = v;
            }
            if let Some(v) = self.radius_meters {
                g.radius_meters = v;
            }
            if let Some(v) = self.slot_minutes {
                g.slot_minutes = v;
            }
            if let Some(v) = &self.start {
                g.start = v.clone();
            }
            if let Some(v) = &self.end {
                g.end = v.clone();
            }
            if self.shuffle_seed.is_some() {
                g.shuffle_seed = self.shuffle_seed;
            }
        } else if self.d_meters.is_some() || self.radius_meters.is_some() || self.slot_minutes.is_some() {
            log::warn!("GTFS preprocessing flags ignored for the synthetic fleet");
        }
    }
}

#[derive(Args, Debug)]
pub struct IngestArgs {
    #[command(flatten)]
    pub dataset: DatasetArgs,
}

pub fn ingest(g: &Global, args: IngestArgs) -> Result<()> {
    let mut cfg = load_config(g)?;
    args.dataset.apply(&mut cfg);
    let mut rec = Recorder::new("ingest", &cfg.dataset, cfg.seed)?;
    if let Dataset::Gtfs(gtfs) = &cfg.dataset {
        for f in ["stops.txt", "trips.txt", "stop_times.txt"] {
            rec.input(&gtfs.dir.join(f));
        }
    }
    let fleet = cfg.dataset.load(cfg.seed)?;
    create_out_dir(g)?;
    let (s, side) = harness::similarities(&fleet.locations, cfg.lambda_per_km)?;
    let tensor_path = g.out_dir.join(TENSOR);
    fleet.tensor.write(&tensor_path)?;
    let loc_path = g.out_dir.join(LOCATIONS);
    write_text(&loc_path, &fleet.locations.to_csv())?;
    let s_path = g.out_dir.join(SIMILARITY);
    s.write(&s_path)?;
    let side_path = g.out_dir.join(SIDE_SIMILARITY);
    side.write(&side_path)?;
    for p in [&tensor_path, &loc_path, &s_path, &side_path] {
        rec.output(p);
    }
    let y = &fleet.tensor;
    println!(
        "L={} T={} B={} density={:.6}",
        y.n_locations(),
        y.n_slots(),
        y.n_buses(),
        y.density()
    );
    rec.finish(&g.out_dir)?;
    Ok(())
}

#[derive(Args, Debug)]
pub struct SelectArgs {
    /// Occupancy tensor [default: <out-dir>/tensor.csv].
    #[arg(long)]
    pub tensor: Option<PathBuf>,
    /// Location set used to build S [default: <out-dir>/locations.csv].
    #[arg(long)]
    pub locations: Option<PathBuf>,
    /// Precomputed S; overrides --locations.
    #[arg(long)]
    pub similarity: Option<PathBuf>,
    /// One of random, mc, mcl, fls, rfl.
    #[arg(long)]
    pub method: Option<String>,
    /// Decay for rfl.
    #[arg(long)]
    pub rho: Option<f64>,
    /// Number of buses.
    #[arg(long)]
    pub k: Option<usize>,
}

fn resolve_method(name: Option<&str>, rho: Option<f64>, cfg: &ExperimentConfig) -> Result<Method> {
    let mut method = match name {
        Some(n) => n.parse()?,
        None => *cfg
            .methods
            .first()
            .ok_or_else(|| Error::Argument("no method given".into()))?,
    };
    match (&mut method, rho) {
        (Method::Rfl { rho: r }, Some(v)) => *r = v,
        (_, Some(_)) => log::warn!("--rho only applies to rfl"),
        _ => {}
    }
    Ok(method)
}

fn load_similarity(
    g: &Global,
    similarity: &Option<PathBuf>,
    locations: &Option<PathBuf>,
    rec: &mut Recorder,
    lambda: f64,
) -> Result<(SimilarityMatrix, Option<LocationSet>)> {
    if let Some(path) = similarity {
        rec.input(path);
        return Ok((SimilarityMatrix::read(path)?, None));
    }
    let path = input(locations, g, LOCATIONS);
    rec.input(&path);
    let locs = read_locations(&path)?;
    Ok((harness::similarities(&locs, lambda)?.0, Some(locs)))
}

#[derive(Serialize)]
struct SelectOutput<'a> {
    method: String,
    k: usize,
    chosen: &'a [usize],
    metrics: harness::Metrics,
}

pub fn select(g: &Global, args: SelectArgs) -> Result<()> {
    let cfg = load_config(g)?;
    let method = resolve_method(args.method.as_deref(), args.rho, &cfg)?;
    let k = match args.k {
        Some(k) => k,
        None => *cfg.ks.first().ok_or_else(|| Error::Argument("no k given".into()))?,
    };
    if k == 0 {
        return Err(Error::Argument("k must be at least 1".into()));
    }
    let mut rec = Recorder::new(
        "select",
        &serde_json::json!({ "method": method, "k": k, "seed": cfg.seed }),
        cfg.seed,
    )?;
    let tensor_path = input(&args.tensor, g, TENSOR);
    rec.input(&tensor_path);
    let tensor = OccupancyTensor::read(&tensor_path)?;
    let (s, _) = load_similarity(g, &args.similarity, &args.locations, &mut rec, cfg.lambda_per_km)?;
    if s.len() != tensor.n_locations() {
        return Err(mismatch(
            "similarity size vs tensor locations",
            s.len(),
            tensor.n_locations(),
        ));
    }
    let result = harness::select(method, &tensor, &s, k, cfg.seed)?;
    let metrics = harness::metrics(&sampling_matrix(&tensor, &result.chosen)?, &s)?;
    create_out_dir(g)?;
    let sel_path = g.out_dir.join(SELECTION);
    result.write(&sel_path)?;
    rec.output(&sel_path);
    let out = SelectOutput {
        method: method.to_string(),
        k,
        chosen: &result.chosen,
        metrics,
    };
    let metrics_path = g.out_dir.join("selection_metrics.json");
    write_text(&metrics_path, &to_json(&out)?)?;
    rec.output(&metrics_path);
    let ids: Vec<String> = result.chosen.iter().map(|b| b.to_string()).collect();
    println!("method={method} k={k}");
    println!("chosen={}", ids.join(" "));
    println!(
        "psc={:.3} pc={:.3} fls={:.3} rfl_0.98={:.3}",
        metrics.psc, metrics.pc, metrics.fls, metrics.rfl
    );
    rec.finish(&g.out_dir)?;
    Ok(())
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum GeneratorArg {
    Factored,
    Ar,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// Location set [default: <out-dir>/locations.csv].
    #[arg(long)]
    pub locations: Option<PathBuf>,
    /// Slots; defaults to T of <out-dir>/tensor.csv, else the config's fleet.
    #[arg(long)]
    pub slots: Option<usize>,
    #[arg(long, value_enum)]
    pub generator: Option<GeneratorArg>,
    /// Spatial basis size.
    #[arg(long)]
    pub m: Option<usize>,
    /// Temporal basis size (factored only).
    #[arg(long)]
    pub n: Option<usize>,
    /// Coefficient rank.
    #[arg(long)]
    pub r: Option<usize>,
    /// Autoregressive coefficient.
    #[arg(long)]
    pub c: Option<f64>,
    /// Lag-one correlation of the temporal similarity (factored only).
    #[arg(long)]
    pub phi: Option<f64>,
    #[arg(long)]
    pub noise_std: Option<f64>,
}

pub fn simulate(g: &Global, args: SimulateArgs) -> Result<()> {
    let cfg = load_config(g)?;
    let loc_path = input(&args.locations, g, LOCATIONS);
    let locs = read_locations(&loc_path)?;
    let tensor_path = g.out_dir.join(TENSOR);
    let slots = match args.slots {
        Some(t) => t,
        None if tensor_path.is_file() => OccupancyTensor::read(&tensor_path)?.n_slots(),
        None => match &cfg.dataset {
            Dataset::Synthetic(f) => f.slots,
            Dataset::Gtfs(gt) => gt.grid()?.slots,
        },
    };
    let (basis, rank, default_phi, default_c, default_gen) = match cfg.simulator {
        Simulator::Factored {
            basis,
            rank,
            temporal_phi,
        } => (basis, rank, temporal_phi, 1.0, GeneratorArg::Factored),
        Simulator::Autoregressive { basis, rank, c } => (basis, rank, 0.9, c, GeneratorArg::Ar),
    };
    let shape = draw_shape(cfg.seed, basis, rank);
    let (m, n, r) = (
        args.m.unwrap_or(shape.m),
        args.n.unwrap_or(shape.n),
        args.r.unwrap_or(shape.r),
    );
    let noise = args.noise_std.unwrap_or(cfg.noise_std);
    let generator = args.generator.unwrap_or(default_gen);
    let (_, side) = harness::similarities(&locs, cfg.lambda_per_km)?;
    let mut rec = Recorder::new(
        "simulate",
        &serde_json::json!({
            "generator": format!("{generator:?}").to_lowercase(),
            "slots": slots, "m": m, "n": n, "r": r,
            "c": args.c.unwrap_or(default_c), "phi": args.phi.unwrap_or(default_phi),
            "noise_std": noise, "lambda_per_km": cfg.lambda_per_km,
        }),
        cfg.seed,
    )?;
    rec.input(&loc_path);
    let truth = match generator {
        GeneratorArg::Factored => {
            let h = ar1_temporal_similarity(slots, args.phi.unwrap_or(default_phi))?;
            simulate_factored(&side, &h, m.min(locs.len()), n.min(slots), r, noise, cfg.seed)?
        }
        GeneratorArg::Ar => simulate_ar(
            &side,
            m.min(locs.len()),
            r,
            args.c.unwrap_or(default_c),
            slots,
            noise,
            cfg.seed,
        )?,
    };
    create_out_dir(g)?;
    let path = g.out_dir.join(TRUTH);
    truth.write(&path)?;
    rec.output(&path);
    rec.output(&driveby_core::simgen::sidecar(&path));
    println!("wrote {} ({}x{})", path.display(), truth.n_locations(), truth.n_slots());
    rec.finish(&g.out_dir)?;
    Ok(())
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum ImputerArg {
    Vbmc,
    Vbsf,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum TransitionArg {
    Identity,
    Learned,
}

#[derive(Args, Debug)]
pub struct ImputeArgs {
    /// Observed entries; if absent they are cut from --truth by --selection.
    #[arg(long)]
    pub observations: Option<PathBuf>,
    /// Ground truth [default: <out-dir>/truth.csv].
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Occupancy tensor [default: <out-dir>/tensor.csv].
    #[arg(long)]
    pub tensor: Option<PathBuf>,
    /// Selection file [default: <out-dir>/selection.txt].
    #[arg(long)]
    pub selection: Option<PathBuf>,
    /// Location set for the side information [default: <out-dir>/locations.csv].
    #[arg(long)]
    pub locations: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "vbmc")]
    pub imputer: ImputerArg,
    #[arg(long)]
    pub rank: Option<usize>,
    /// Transition for vbsf.
    #[arg(long, value_enum)]
    pub transition: Option<TransitionArg>,
}

pub fn impute(g: &Global, args: ImputeArgs) -> Result<()> {
    let mut cfg = load_config(g)?;
    if let Some(r) = args.rank {
        cfg.impute.rank = r;
    }
    cfg.impute.seed = cfg.seed;
    match args.transition {
        Some(TransitionArg::Identity) => cfg.temporal.transition = Transition::Identity,
        Some(TransitionArg::Learned) => cfg.temporal.transition = Transition::Learned,
        None => {}
    }
    let imputer = match args.imputer {
        ImputerArg::Vbmc => Imputer::Vbmc,
        ImputerArg::Vbsf => Imputer::Vbsf,
    };
    let mut rec = Recorder::new(
        "impute",
        &serde_json::json!({ "imputer": imputer, "impute": cfg.impute, "temporal": cfg.temporal, "lambda_per_km": cfg.lambda_per_km }),
        cfg.seed,
    )?;
    let truth_path = input(&args.truth, g, TRUTH);
    let truth = if args.truth.is_some() || args.observations.is_none() {
        rec.input(&truth_path);
        Some(SpatioTemporalMatrix::read(&truth_path)?.values)
    } else {
        None
    };
    create_out_dir(g)?;
    let obs = match &args.observations {
        Some(path) => {
            rec.input(path);
            ObservationSet::read(path)?
        }
        None => {
            let truth = truth.as_ref().expect("read above");
            let tensor_path = input(&args.tensor, g, TENSOR);
            let sel_path = input(&args.selection, g, SELECTION);
            rec.input(&tensor_path);
            rec.input(&sel_path);
            let tensor = OccupancyTensor::read(&tensor_path)?;
            let sel = SelectionResult::read(&sel_path)?;
            if (truth.nrows(), truth.ncols()) != (tensor.n_locations(), tensor.n_slots()) {
                return Err(mismatch(
                    "truth shape vs tensor (L, T)",
                    (truth.nrows(), truth.ncols()),
                    (tensor.n_locations(), tensor.n_slots()),
                ));
            }
            if let Some(&b) = sel.chosen.iter().find(|&&b| b >= tensor.n_buses()) {
                return Err(mismatch("selected bus vs tensor buses", b, tensor.n_buses()));
            }
            let obs = ObservationSet::from_mask(truth, &sampling_matrix(&tensor, &sel.chosen)?)?;
            let path = g.out_dir.join(OBSERVATIONS);
            obs.write(&path)?;
            rec.output(&path);
            obs
        }
    };
    if let Some(t) = &truth {
        if (t.nrows(), t.ncols()) != (obs.n_locations(), obs.n_slots()) {
            return Err(mismatch(
                "truth shape vs observations",
                (t.nrows(), t.ncols()),
                (obs.n_locations(), obs.n_slots()),
            ));
        }
    }
    let loc_path = input(&args.locations, g, LOCATIONS);
    rec.input(&loc_path);
    let locs = read_locations(&loc_path)?;
    if locs.len() != obs.n_locations() {
        return Err(mismatch("locations vs observation rows", locs.len(), obs.n_locations()));
    }
    let (_, side) = harness::similarities(&locs, cfg.lambda_per_km)?;
    let temporal = matches!(imputer, Imputer::Vbsf).then_some(&cfg.temporal);
    let out = run_impute(&obs, &side, &cfg.impute, temporal, truth.as_ref())?;
    let est_path = g.out_dir.join(ESTIMATE);
    SpatioTemporalMatrix::new(out.estimate.clone()).write(&est_path)?;
    rec.output(&est_path);
    let log_path = g.out_dir.join("impute_log.csv");
    write_text(&log_path, &out.log_csv())?;
    rec.output(&log_path);
    println!(
        "imputer={imputer} observed={} iterations={} converged={}",
        obs.len(),
        out.iterations,
        out.converged
    );
    if let Some(t) = &truth {
        println!("mre_percent={:.6}", mre_percent(t, &out.estimate)?);
    }
    rec.finish(&g.out_dir)?;
    Ok(())
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// Ground truth [default: <out-dir>/truth.csv].
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Estimate [default: <out-dir>/estimate.csv].
    #[arg(long)]
    pub estimate: Option<PathBuf>,
}

#[derive(Serialize)]
struct Evaluation {
    locations: usize,
    slots: usize,
    mre_percent: f64,
}

pub fn evaluate(g: &Global, args: EvaluateArgs) -> Result<()> {
    let cfg = load_config(g)?;
    let mut rec = Recorder::new("evaluate", &serde_json::json!({}), cfg.seed)?;
    let truth_path = input(&args.truth, g, TRUTH);
    let est_path = input(&args.estimate, g, ESTIMATE);
    rec.input(&truth_path);
    rec.input(&est_path);
    let truth = SpatioTemporalMatrix::read(&truth_path)?.values;
    let est = SpatioTemporalMatrix::read(&est_path)?.values;
    if truth.shape() != est.shape() {
        return Err(mismatch("truth vs estimate shape", truth.shape(), est.shape()));
    }
    let eval = Evaluation {
        locations: truth.nrows(),
        slots: truth.ncols(),
        mre_percent: mre_percent(&truth, &est)?,
    };
    create_out_dir(g)?;
    let path = g.out_dir.join("evaluation.json");
    write_text(&path, &to_json(&eval)?)?;
    rec.output(&path);
    println!("mre_percent={:.6}", eval.mre_percent);
    rec.finish(&g.out_dir)?;
    Ok(())
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    #[command(flatten)]
    pub dataset: DatasetArgs,
    /// Methods, comma separated, e.g. `random,mc,rfl(0.98)`.
    #[arg(long, value_delimiter = ',')]
    pub method: Vec<String>,
    /// Sets ρ for every rfl method.
    #[arg(long)]
    pub rho: Option<f64>,
    /// Bus budgets, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub k: Vec<usize>,
    /// Simulated instances for the MRE tables.
    #[arg(long)]
    pub instances: Option<usize>,
}

pub fn report(g: &Global, args: ReportArgs) -> Result<()> {
    let mut cfg = load_config(g)?;
    args.dataset.apply(&mut cfg);
    if !args.method.is_empty() {
        cfg.methods = args.method.iter().map(|m| m.parse()).collect::<Result<_>>()?;
    }
    if let Some(rho) = args.rho {
        for m in &mut cfg.methods {
            if let Method::Rfl { rho: r } = m {
                *r = rho;
            }
        }
    }
    if !args.k.is_empty() {
        cfg.ks = args.k.clone();
    }
    if let Some(n) = args.instances {
        cfg.instances = n;
    }
    let mut rec = Recorder::new("report", &cfg, cfg.seed)?;
    if let Some(path) = &g.config {
        rec.input(path);
    }
    let report = harness::run_report(&cfg, &g.out_dir)?;
    for f in &report.files {
        rec.output(&g.out_dir.join(f));
    }
    let f = &report.fleet;
    println!(
        "fleet L={} T={} B={} density={:.6}",
        f.locations, f.slots, f.buses, f.density
    );
    println!("method,k,imputer,mean_mre_percent");
    for row in &report.mre {
        println!("{},{},{},{:.3}", row.method, row.k, row.imputer, row.mean_mre_percent);
    }
    rec.finish(&g.out_dir)?;
    Ok(())
}
