//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use driveby_core::greedy::{brute_force_select, check_monotone_submodular, greedy_select};
use driveby_core::harness::{
    mean_psc, run_mre_table, FleetConfig, FleetSource, Imputer, Method, MreConfig, Simulator, DESK_KS,
};
use driveby_core::imputation::{impute_vbmc_cs, mre, ImputeConfig, ObservationSet};
use driveby_core::objectives::{fls_gain, flst_gain_reference, rfl_gain, Evaluator, Objective};
use driveby_core::occupancy::{
    build_occupancy, load_gtfs_dir, subsample_stops, LocationSet, OccupancyTensor, SamplingMatrix, Stop, TimeGrid,
};
use driveby_core::simgen::spectral_basis;
use driveby_core::similarity::{distance_matrix, exponential_similarity, normalized_similarity, SimilarityMatrix};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

const RHOS: [f64; 5] = [0.0, 0.5, 0.95, 0.98, 1.0];
const APPROX: f64 = 1.0 - 1.0 / std::f64::consts::E;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn points(n: usize, span_km: f64, r: &mut ChaCha20Rng) -> Vec<Stop> {
    (0..n)
        .map(|i| {
            let lat = 28.6 + r.random::<f64>() * span_km / 111.0;
            let lon = 77.2 + r.random::<f64>() * span_km / 97.5;
            Stop::new(format!("P{i}"), lat, lon).unwrap()
        })
        .collect()
}

fn locations(stops: Vec<Stop>) -> LocationSet {
    LocationSet {
        stops,
        min_separation_m: 0.0,
    }
}

/// Random tensor with each cell present with probability `p`, plus `S` from random points.
fn instance(seed: u64, l_n: usize, t_n: usize, b_n: usize, p: f64) -> (OccupancyTensor, SimilarityMatrix) {
    let mut r = ChaCha20Rng::seed_from_u64(seed);
    let mut entries = Vec::new();
    for l in 0..l_n {
        for t in 0..t_n {
            for b in 0..b_n {
                if r.random::<f64>() < p {
                    entries.push((l, t, b));
                }
            }
        }
    }
    let tensor = OccupancyTensor::new(l_n, t_n, b_n, entries).unwrap();
    let s = normalized_similarity(&distance_matrix(&locations(points(l_n, 10.0, &mut r)))).unwrap();
    (tensor, s)
}

fn small_instance(seed: u64) -> (OccupancyTensor, SimilarityMatrix, Vec<usize>) {
    let mut r = ChaCha20Rng::seed_from_u64(seed ^ 0xa5a5);
    let (l_n, t_n, b_n) = (r.random_range(2..=20), r.random_range(1..=10), r.random_range(1..=15));
    let p = r.random_range(0.02..0.3);
    let (tensor, s) = instance(seed, l_n, t_n, b_n, p);
    let m: Vec<usize> = (0..b_n).filter(|_| r.random::<bool>()).collect();
    (tensor, s, m)
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for seed in 0..50 {
        let (tensor, s, m) = small_instance(seed);
        for rho in RHOS {
            let fast = rfl_gain(&tensor, &m, &s, rho).unwrap().value;
            let reference = flst_gain_reference(&tensor, &m, &s, rho).unwrap().value;
            worst = worst.max((fast - reference).abs());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst <= 1e-10 && secs < 10.0,
        format!(
            "RFL vs causal reference on 50 instances x 5 rho: max |diff| {worst:.2e} (<= 1e-10), {secs:.2}s (< 10s)"
        ),
    )
}

fn criterion_2() -> Outcome {
    let mut mismatches = 0;
    for seed in 0..50 {
        let (tensor, s, m) = small_instance(seed);
        if rfl_gain(&tensor, &m, &s, 0.0).unwrap().value != fls_gain(&tensor, &m, &s).unwrap().value {
            mismatches += 1;
        }
    }
    outcome(
        mismatches == 0,
        format!("RFL(rho=0) == FLS bit-exactly on 50 instances: {mismatches} mismatches"),
    )
}

fn criterion_3() -> Outcome {
    let (tensor, s) = instance(3, 15, 10, 12, 0.08);
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, obj) in [
        ("PC", Objective::Pc),
        ("PSC", Objective::Psc),
        ("FLS", Objective::Fls),
        ("RFL(0.98)", Objective::Rfl { rho: 0.98 }),
    ] {
        let ev = Evaluator::new(&tensor, obj, Some(&s)).unwrap();
        let report = check_monotone_submodular(&ev, 1000, 33).unwrap();
        let worst = report.worst_monotonicity_slack.min(report.worst_submodularity_slack);
        pass &= report.trials == 1000 && report.passed() && worst >= -1e-12;
        parts.push(format!("{name} {worst:.1e}"));
    }
    outcome(
        pass,
        format!("1000 trials each, worst slack (>= -1e-12): {}", parts.join(", ")),
    )
}

fn criterion_4() -> Outcome {
    let start = Instant::now();
    let objectives = [
        ("PC", Objective::Pc),
        ("PSC", Objective::Psc),
        ("FLS", Objective::Fls),
        ("FLST(0.98)", Objective::Flst { rho: 0.98 }),
        ("RFL(0.98)", Objective::Rfl { rho: 0.98 }),
    ];
    let mut ratios = vec![Vec::new(); objectives.len()];
    for seed in 0..25u64 {
        let b_n = 8 + (seed % 3) as usize;
        let (tensor, s) = instance(1000 + seed, 12, 8, b_n, 0.1);
        for (i, (_, obj)) in objectives.iter().enumerate() {
            let ev = Evaluator::new(&tensor, *obj, Some(&s)).unwrap();
            let greedy = greedy_select(&ev, 3).unwrap().final_gain();
            let best = brute_force_select(&ev, 3).unwrap().final_gain();
            ratios[i].push(if best > 0.0 { greedy / best } else { 1.0 });
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let mut pass = secs < 120.0;
    let mut parts = Vec::new();
    for ((name, _), r) in objectives.iter().zip(&ratios) {
        let min = r.iter().copied().fold(f64::INFINITY, f64::min);
        let mean = r.iter().sum::<f64>() / r.len() as f64;
        pass &= min >= APPROX;
        parts.push(format!("{name} min {min:.3} mean {mean:.3}"));
    }
    outcome(
        pass,
        format!(
            "greedy/optimum on 25 instances, k=3 (>= {APPROX:.3}): {}; {secs:.1}s (< 120s)",
            parts.join(", ")
        ),
    )
}

/// Each bus covers about two random locations per slot.
fn timing_instance(t_n: usize) -> (OccupancyTensor, SimilarityMatrix) {
    let (l_n, b_n) = (200, 50);
    let mut r = ChaCha20Rng::seed_from_u64(5);
    let mut entries = Vec::new();
    for b in 0..b_n {
        for t in 0..t_n {
            for _ in 0..2 {
                entries.push((r.random_range(0..l_n), t, b));
            }
        }
    }
    let tensor = OccupancyTensor::new(l_n, t_n, b_n, entries).unwrap();
    let s = normalized_similarity(&distance_matrix(&locations(points(l_n, 20.0, &mut r)))).unwrap();
    (tensor, s)
}

/// Minimum over repeats of the time to score every singleton (one k=1 round).
fn round_cost(
    tensor: &OccupancyTensor,
    s: &SimilarityMatrix,
    f: fn(&OccupancyTensor, &[usize], &SimilarityMatrix, f64) -> f64,
) -> Duration {
    (0..5)
        .map(|_| {
            let start = Instant::now();
            let mut acc = 0.0;
            for b in 0..tensor.n_buses() {
                acc += f(tensor, &[b], s, 0.98);
            }
            std::hint::black_box(acc);
            start.elapsed()
        })
        .min()
        .unwrap()
}

fn criterion_5() -> Outcome {
    let fast = |y: &OccupancyTensor, m: &[usize], s: &SimilarityMatrix, rho: f64| rfl_gain(y, m, s, rho).unwrap().value;
    let slow = |y: &OccupancyTensor, m: &[usize], s: &SimilarityMatrix, rho: f64| {
        flst_gain_reference(y, m, s, rho).unwrap().value
    };
    let (y96, s96) = timing_instance(96);
    let (y192, s192) = timing_instance(192);
    let rfl_ratio = round_cost(&y192, &s192, fast).as_secs_f64() / round_cost(&y96, &s96, fast).as_secs_f64();
    let flst_ratio = round_cost(&y192, &s192, slow).as_secs_f64() / round_cost(&y96, &s96, slow).as_secs_f64();
    outcome(
        rfl_ratio <= 2.6 && flst_ratio >= 3.4,
        format!("cost ratio T=192 vs T=96 (L=200, B=50, k=1): RFL {rfl_ratio:.2} (<= 2.6), reference {flst_ratio:.2} (>= 3.4)"),
    )
}

fn criterion_6() -> Outcome {
    let start = Instant::now();
    let k = DESK_KS[0];
    let cfg = MreConfig {
        instances: 10,
        ks: vec![k],
        methods: vec![Method::Rfl { rho: 0.98 }, Method::Mc, Method::Random],
        imputers: vec![Imputer::Vbmc],
        ..Default::default()
    };
    let rows = run_mre_table(&cfg, FleetSource::Synthetic).unwrap();
    let (rfl, mc, random) = (
        rows[0].mean_mre_percent,
        rows[1].mean_mre_percent,
        rows[2].mean_mre_percent,
    );
    let secs = start.elapsed().as_secs_f64();
    outcome(
        rfl < mc && rfl < random && random >= 1.5 * rfl && secs < 900.0,
        format!(
            "mean MRE% at k={k} over 10 instances: RFL(0.98) {rfl:.2} < MC {mc:.2}, Random {random:.2} ({:.2}x RFL, >= 1.5x); {secs:.1}s (< 900s)",
            random / rfl
        ),
    )
}

fn criterion_7() -> Outcome {
    let k = DESK_KS[DESK_KS.len() - 1];
    let cfg = MreConfig {
        instances: 10,
        ks: vec![k],
        methods: vec![Method::Rfl { rho: 0.98 }],
        imputers: vec![Imputer::Vbmc, Imputer::Vbsf],
        simulator: Simulator::Autoregressive {
            basis: (3, 6),
            rank: (20, 30),
            c: 1.0,
        },
        ..Default::default()
    };
    let rows = run_mre_table(&cfg, FleetSource::Synthetic).unwrap();
    let (vbmc, vbsf) = (rows[0].mean_mre_percent, rows[1].mean_mre_percent);
    outcome(
        vbsf <= vbmc,
        format!("AR(c=1) truth, k={k}, 10 instances: mean MRE% VBSF-CS {vbsf:.3} <= VBMC-CS {vbmc:.3}"),
    )
}

fn gaussian(rows: usize, cols: usize, r: &mut ChaCha20Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(r))
}

fn exp_similarity(stops: Vec<Stop>) -> SimilarityMatrix {
    exponential_similarity(&distance_matrix(&locations(stops)), 0.07676).unwrap()
}

fn criterion_8() -> Outcome {
    let mut r = ChaCha20Rng::seed_from_u64(8);
    let n = 30;
    let truth = gaussian(n, 3, &mut r) * gaussian(3, n, &mut r);
    let g = exp_similarity(points(n, 10.0, &mut r));
    let cfg = ImputeConfig {
        rank: 3,
        ..Default::default()
    };

    let mut half = SamplingMatrix::zeros(n, n);
    let mut full = SamplingMatrix::zeros(n, n);
    for l in 0..n {
        for t in 0..n {
            full.set(l, t);
            if r.random::<bool>() {
                half.set(l, t);
            }
        }
    }
    let half_err = mre(
        &truth,
        &impute_vbmc_cs(&ObservationSet::from_mask(&truth, &half).unwrap(), &g, &cfg)
            .unwrap()
            .estimate,
    )
    .unwrap();
    let full_err = mre(
        &truth,
        &impute_vbmc_cs(&ObservationSet::from_mask(&truth, &full).unwrap(), &g, &cfg)
            .unwrap()
            .estimate,
    )
    .unwrap();
    outcome(
        half_err <= 0.01 && full_err <= 1e-6,
        format!("rank-3 30x30: 50% sampled MRE {half_err:.2e} (<= 1e-2), fully observed MRE {full_err:.2e} (<= 1e-6)"),
    )
}

fn criterion_9() -> Outcome {
    let mut r = ChaCha20Rng::seed_from_u64(9);
    let n = 30;
    let mut stops = points(n, 10.0, &mut r);
    let (cold, twin) = (5, 7);
    stops[cold] = Stop::new("twin", stops[twin].lat, stops[twin].lon).unwrap();
    let g = exp_similarity(stops);
    let u = spectral_basis(g.matrix(), 3).unwrap().u;
    let truth = &u * gaussian(3, 3, &mut r) * gaussian(3, n, &mut r);
    let mut mask = SamplingMatrix::zeros(n, n);
    for l in (0..n).filter(|&l| l != cold) {
        for t in 0..n {
            if r.random::<bool>() {
                mask.set(l, t);
            }
        }
    }
    let obs = ObservationSet::from_mask(&truth, &mask).unwrap();
    let est = impute_vbmc_cs(
        &obs,
        &g,
        &ImputeConfig {
            rank: 3,
            ..Default::default()
        },
    )
    .unwrap()
    .estimate;
    let err = (est.row(cold) - truth.row(twin)).norm() / truth.row(twin).norm();
    outcome(
        obs.cold_start_rows() == vec![cold] && err <= 0.05,
        format!("never-sampled duplicate location: row MRE {:.3}% (<= 5%)", 100.0 * err),
    )
}

fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/gtfs_small")
}

fn criterion_10() -> Outcome {
    let feed = load_gtfs_dir(&fixture_dir()).unwrap();
    let locs = subsample_stops(&feed.stops, 500.0).unwrap();
    let grid = TimeGrid::new(6 * 3600, 7 * 3600, 10).unwrap();
    let tensor = build_occupancy(&feed, &locs, &grid, 500.0).unwrap();
    let expected = vec![(0, 0, 0), (0, 0, 1), (1, 1, 0), (1, 1, 1), (2, 3, 0)];
    let shape = (tensor.n_locations(), tensor.n_slots(), tensor.n_buses());
    let mut pass = tensor.entries() == expected.as_slice() && shape == (3, 6, 2);
    let mut detail = format!("fixture tensor {shape:?} entries {:?}", tensor.entries());
    match std::env::var_os("DRIVEBY_DELHI_GTFS") {
        Some(dir) => {
            let feed = load_gtfs_dir(Path::new(&dir)).unwrap();
            let locs = subsample_stops(&feed.stops, 500.0).unwrap();
            let y = build_occupancy(&feed, &locs, &TimeGrid::daytime(), 500.0).unwrap();
            let shape = (y.n_locations(), y.n_slots(), y.n_buses());
            pass &= shape == (824, 96, 1476);
            detail.push_str(&format!("; Delhi L,T,B = {shape:?} (expect (824, 96, 1476))"));
        }
        None => detail.push_str("; Delhi check skipped (set DRIVEBY_DELHI_GTFS)"),
    }
    outcome(pass, detail)
}

fn criterion_11() -> Outcome {
    let k = DESK_KS[0];
    let methods = [
        Method::Rfl { rho: 0.95 },
        Method::Rfl { rho: 0.98 },
        Method::Rfl { rho: 1.0 },
        Method::Mcl,
    ];
    let psc = mean_psc(&FleetConfig::default(), &methods, k, 10, 0).unwrap();
    let rel = (psc[2] - psc[3]).abs() / psc[3];
    outcome(
        psc[0] <= psc[1] && psc[1] <= psc[2] && rel <= 0.10,
        format!(
            "mean PSC at k={k} over 10 fleets: rho 0.95 {:.2} <= 0.98 {:.2} <= 1 {:.2}; MCL {:.2} (rel diff {:.1}% <= 10%)",
            psc[0],
            psc[1],
            psc[2],
            psc[3],
            100.0 * rel
        ),
    )
}

fn main() {
    type Criterion = (&'static str, fn() -> Outcome);
    let criteria: [Criterion; 11] = [
        ("recursive gain equivalence", criterion_1),
        ("rho=0 reduces to FLS", criterion_2),
        ("monotone submodular", criterion_3),
        ("greedy approximation", criterion_4),
        ("linear cost in T", criterion_5),
        ("selection MRE trend", criterion_6),
        ("temporal imputation", criterion_7),
        ("imputation oracle", criterion_8),
        ("cold start", criterion_9),
        ("GTFS ingestion", criterion_10),
        ("rho sweep", criterion_11),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let o = run();
        failed += usize::from(!o.pass);
        println!(
            "criterion {:>2} {} {name}: {}",
            i + 1,
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
