//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs with `cargo test -p expsparse --test acceptance` and exits non-zero if
//! any criterion fails. Every tolerance below is fixed, not tuned per run.

// Oracles are written as plain index loops on purpose.
#![allow(clippy::needless_range_loop)]

use std::time::{Duration, Instant};

use expsparse::approximator::{DeadUnitPolicy, EasApproximator};
use expsparse::data::sample_manifold;
use expsparse::harness::experiments::{
    manifold_for, run_dropout, run_experiment, run_lsh_profile, run_memorization, run_pruning, run_scaling, LabelArm,
};
use expsparse::harness::{load_model, save_model, ExperimentConfig, ExperimentKind, ModelEncoding};
use expsparse::projection::{ProjectionMatrix, RowDistribution};
use expsparse::sparsifier::{estimate_thresholds, measure_sparsity, sparsify_topk, TieRule};
use expsparse::{Error, ThresholdVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// Criterion 1.
const SCALING_D: [usize; 5] = [512, 1024, 2048, 4096, 8192];
const SCALING_K: usize = 32;
const SCALING_TRIALS: usize = 10;
const SLOPE_RANGE: (f64, f64) = (0.5, 1.5);
const SCALING_BUDGET: Duration = Duration::from_secs(600);
// Criterion 2.
const SPARSITY_D: usize = 2000;
const SPARSITY_K: usize = 64;
const SPARSITY_SAMPLES: usize = 10_000;
const SPARSITY_BAND: (f64, f64) = (0.9, 1.1);
// Criterion 3.
const ORACLE_INSTANCES: usize = 1000;
const ORACLE_REL_TOL: f64 = 1e-12;
// Criterion 4.
const PRUNE_D: usize = 4096;
const PRUNE_K: usize = 1;
const PRUNE_TRAIN: usize = 100;
// Criterion 5.
const LSH_D: usize = 2000;
const LSH_K: usize = 64;
const LSH_RADII: [f64; 5] = [0.0, 0.01, 0.1, 1.0, 10.0];
const LSH_PAIRS: usize = 1000;
const LSH_SE_MULTIPLE: f64 = 3.0;
// Criterion 6.
const MEM_D: usize = 4096;
const MEM_K: usize = 32;
const MEM_CLASSES: usize = 4;
const MEM_SIZE: usize = 500;
const MEM_TRIALS: usize = 5;
const MEM_N: usize = 40;
const MEM_M: usize = 4;
const MEM_SE_MULTIPLE: f64 = 3.0;
const MEM_MARGIN: f64 = 0.10;
const MEM_TRAIN_MIN: f64 = 0.95;

type Check = fn() -> Outcome;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn scaling() -> Outcome {
    let started = Instant::now();
    let mut cfg = ExperimentConfig::new(ExperimentKind::Scaling, SCALING_D.to_vec());
    cfg.k_values = vec![SCALING_K];
    cfg.m_values = vec![1, 2];
    cfg.trials = SCALING_TRIALS;
    let report = run_scaling(&cfg).expect("scaling run");
    let elapsed = started.elapsed();
    let (s1, s2) = (report.slope(1).unwrap_or(f64::NAN), report.slope(2).unwrap_or(f64::NAN));
    let pass = (SLOPE_RANGE.0..=SLOPE_RANGE.1).contains(&s1) && s2 < s1 && elapsed <= SCALING_BUDGET;
    outcome(
        pass,
        format!(
            "slope m=1 {s1:.4} (want [{}, {}]), slope m=2 {s2:.4} (want < m=1), runtime {:.1}s (want <= {}s)",
            SLOPE_RANGE.0,
            SLOPE_RANGE.1,
            elapsed.as_secs_f64(),
            SCALING_BUDGET.as_secs()
        ),
    )
}

fn sparsity() -> Outcome {
    let cfg = ExperimentConfig::new(ExperimentKind::Scaling, vec![SPARSITY_D]);
    let spec = manifold_for(&cfg, 1);
    let calibration = sample_manifold(&spec, SPARSITY_SAMPLES, 11).unwrap().points;
    let held_out = sample_manifold(&spec, SPARSITY_SAMPLES, 12).unwrap().points;
    let w = ProjectionMatrix::sample(cfg.n, SPARSITY_D, RowDistribution::default_gaussian(cfg.n), 13).unwrap();
    let tau = estimate_thresholds(&w, &calibration, SPARSITY_K).unwrap();
    let stats = measure_sparsity(&w, &tau, &held_out).unwrap();
    let k = SPARSITY_K as f64;
    let pass = stats.mean_active >= SPARSITY_BAND.0 * k && stats.mean_active <= SPARSITY_BAND.1 * k;
    outcome(
        pass,
        format!(
            "mean active {:.3} (want [{:.1}, {:.1}])",
            stats.mean_active,
            SPARSITY_BAND.0 * k,
            SPARSITY_BAND.1 * k
        ),
    )
}

fn rel_close(a: f64, b: f64) -> bool {
    (a - b).abs() <= ORACLE_REL_TOL * a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

fn random_matrix(rng: &mut ChaCha8Rng, d: usize, n: usize) -> ProjectionMatrix {
    let rows = (0..d)
        .map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    ProjectionMatrix::from_rows(rows).unwrap()
}

/// Projection written out as an explicit double loop.
fn oracle_projection(w: &ProjectionMatrix, u: &[f64]) -> Vec<f64> {
    (0..w.d())
        .map(|j| {
            let mut s = 0.0;
            for i in 0..w.n() {
                s += w.weights()[j * w.n() + i] * u[i];
            }
            s
        })
        .collect()
}

fn oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut failures = Vec::new();

    // Weighted average of readout weights over units whose projection reaches the threshold.
    let mut empty_cases = 0;
    for case in 0..ORACLE_INSTANCES {
        let n = rng.random_range(1..6);
        let d = rng.random_range(1..40);
        let w = random_matrix(&mut rng, d, n);
        let taus: Vec<f64> = (0..d).map(|_| rng.random_range(-0.5..0.5)).collect();
        let counts: Vec<u64> = (0..d).map(|_| rng.random_range(0..4)).collect();
        let readout: Vec<f64> = counts
            .iter()
            .map(|&c| if c == 0 { 0.0 } else { rng.random_range(-3.0..3.0) })
            .collect();
        let model = EasApproximator::from_parts(
            w.clone(),
            ThresholdVector::from_taus(taus.clone()).unwrap(),
            readout.clone(),
            counts,
            0.0,
            DeadUnitPolicy::CountInDenominator,
        )
        .unwrap();
        let u: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let p = oracle_projection(&w, &u);
        let (mut num, mut den) = (0.0, 0.0);
        for j in 0..d {
            if p[j] >= taus[j] {
                num += readout[j];
                den += 1.0;
            }
        }
        match model.predict(&u) {
            Ok(y) if den > 0.0 && rel_close(y, num / den) => {}
            Err(Error::NoActiveUnits) if den == 0.0 => empty_cases += 1,
            other => failures.push(format!("predict case {case}: {other:?} vs {}", num / den)),
        }
    }

    // Top-k against sorting every index, with values drawn from a small set to force ties.
    for case in 0..ORACLE_INSTANCES {
        let d = rng.random_range(1..60);
        let k = rng.random_range(1..=d);
        let levels = rng.random_range(1..6);
        let p: Vec<f64> = (0..d).map(|_| rng.random_range(0..levels) as f64 - 2.0).collect();
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| p[b].partial_cmp(&p[a]).unwrap().then(a.cmp(&b)));
        let mut expected = order[..k].to_vec();
        expected.sort();
        let code = sparsify_topk(&p, k, TieRule::LowestIndex, true).unwrap();
        let expected_values: Vec<f64> = expected.iter().map(|&j| p[j]).collect();
        if code.active() != expected.as_slice() || code.values() != Some(expected_values.as_slice()) {
            failures.push(format!("top-k case {case}: {:?} vs {expected:?}", code.active()));
        }
    }

    // Region means against a double loop over units and samples.
    for case in 0..ORACLE_INSTANCES {
        let n = rng.random_range(1..5);
        let d = rng.random_range(1..30);
        let s = rng.random_range(1..40);
        let w = random_matrix(&mut rng, d, n);
        let taus: Vec<f64> = (0..d).map(|_| rng.random_range(-0.5..0.5)).collect();
        let xs: Vec<Vec<f64>> = (0..s)
            .map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let ys: Vec<f64> = (0..s).map(|_| rng.random_range(-5.0..5.0)).collect();
        let model =
            EasApproximator::fit(w.clone(), ThresholdVector::from_taus(taus.clone()).unwrap(), &xs, &ys).unwrap();
        for j in 0..d {
            let (mut sum, mut count) = (0.0, 0u64);
            for (x, &y) in xs.iter().zip(&ys) {
                if oracle_projection(&w, x)[j] >= taus[j] {
                    sum += y;
                    count += 1;
                }
            }
            let expected = if count == 0 { 0.0 } else { sum / count as f64 };
            let got = model.readout()[j];
            if model.counts()[j] != count || !(got == expected || rel_close(got, expected)) {
                failures.push(format!(
                    "fit case {case} unit {j}: {got} ({}) vs {expected} ({count})",
                    model.counts()[j]
                ));
            }
        }
    }

    let detail = format!(
        "{} instances each for predict ({empty_cases} with no active unit), top-k with ties, and readout fit; {} mismatches{}",
        ORACLE_INSTANCES,
        failures.len(),
        failures.first().map(|f| format!("; first: {f}")).unwrap_or_default()
    );
    outcome(failures.is_empty(), detail)
}

fn pruning() -> Outcome {
    let mut cfg = ExperimentConfig::new(ExperimentKind::Pruning, vec![PRUNE_D]);
    cfg.k_values = vec![PRUNE_K];
    cfg.fit_size = PRUNE_TRAIN;
    let report = run_pruning(&cfg).expect("pruning run");
    let row = &report.rows[0];
    let bound = PRUNE_D.saturating_sub(PRUNE_TRAIN * row.max_active_per_input);
    let exact =
        row.train_identical && row.train_before.mean_abs_err.to_bits() == row.train_after.mean_abs_err.to_bits();
    let pass = exact && row.removed_count > 0 && row.removed_count >= bound;
    outcome(
        pass,
        format!(
            "removed {} of {} units (activation-count bound {}), training predictions bit-identical: {}",
            row.removed_count, PRUNE_D, bound, exact
        ),
    )
}

fn lsh_profile() -> Outcome {
    let mut cfg = ExperimentConfig::new(ExperimentKind::LshProfile, vec![LSH_D]);
    cfg.k_values = vec![LSH_K];
    cfg.radii = LSH_RADII.to_vec();
    cfg.pairs_per_radius = LSH_PAIRS;
    let report = run_lsh_profile(&cfg).expect("lsh run");
    let means: Vec<f64> = report.bins.iter().map(|b| b.mean).collect();
    let monotone = means.windows(2).all(|w| w[1] <= w[0]);
    let zero_var = report.bins[0].std == 0.0;
    let last = report.bins.last().unwrap();
    let chance = report.chance_overlap();
    let z = (last.mean - chance) / last.standard_error();
    let near_chance = z.abs() <= LSH_SE_MULTIPLE;
    outcome(
        monotone && zero_var && near_chance,
        format!(
            "means {means:.3?} non-increasing: {monotone}; eps=0 std {}; eps={} mean {:.3} vs k^2/d {:.3} is {z:.2} SE (want |z| <= {}); independent-input overlap {:.3}",
            report.bins[0].std,
            last.lo,
            last.mean,
            chance,
            LSH_SE_MULTIPLE,
            report.independent.mean
        ),
    )
}

fn memorization() -> Outcome {
    let mut cfg = ExperimentConfig::new(ExperimentKind::Memorization, vec![MEM_D]);
    cfg.k_values = vec![MEM_K];
    cfg.classes = MEM_CLASSES;
    cfg.fit_size = MEM_SIZE;
    cfg.test_size = MEM_SIZE;
    cfg.trials = MEM_TRIALS;
    cfg.n = MEM_N;
    cfg.m_values = vec![MEM_M];
    let report = run_memorization(&cfg).expect("memorization run");
    let truth = report.summary(LabelArm::True).unwrap();
    let scrambled = report.summary(LabelArm::Scrambled).unwrap();
    let chance = 1.0 / MEM_CLASSES as f64;
    // Binomial standard error of an accuracy at chance over all pooled test inputs.
    let se = (chance * (1.0 - chance) / (MEM_SIZE * MEM_TRIALS) as f64).sqrt();
    let near_chance = (scrambled.test_acc - chance).abs() <= MEM_SE_MULTIPLE * se;
    let gap = truth.test_acc - scrambled.test_acc > MEM_MARGIN;
    let memorized = truth.train_acc >= MEM_TRAIN_MIN && scrambled.train_acc >= MEM_TRAIN_MIN;
    outcome(
        near_chance && gap && memorized,
        format!(
            "scrambled test {:.3} vs chance {chance} (3 SE = {:.3}); true test {:.3}; train true {:.3} / scrambled {:.3}",
            scrambled.test_acc,
            MEM_SE_MULTIPLE * se,
            truth.test_acc,
            truth.train_acc,
            scrambled.train_acc
        ),
    )
}

fn small_configs() -> Vec<ExperimentConfig> {
    let mut out = Vec::new();
    for (kind, ds) in [
        (ExperimentKind::Scaling, vec![64, 128, 256]),
        (ExperimentKind::Pruning, vec![256]),
        (ExperimentKind::Dropout, vec![256]),
        (ExperimentKind::Memorization, vec![256]),
        (ExperimentKind::LshProfile, vec![256]),
    ] {
        let mut cfg = ExperimentConfig::new(kind, ds);
        cfg.seed = 77;
        cfg.trials = 2;
        cfg.fit_size = 400;
        cfg.test_size = 200;
        cfg.calibration_size = Some(1000);
        cfg.pairs_per_radius = 200;
        cfg.k_values = vec![8];
        out.push(cfg);
    }
    out
}

fn determinism() -> Outcome {
    let mut problems = Vec::new();
    let serial = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    for cfg in small_configs() {
        let first = run_experiment(&cfg).unwrap().csv;
        let second = run_experiment(&cfg).unwrap().csv;
        let single_thread = serial.install(|| run_experiment(&cfg)).unwrap().csv;
        if first != second || first != single_thread {
            problems.push(format!("{} CSV differs between runs", cfg.experiment));
        }
    }

    let cfg = ExperimentConfig::new(ExperimentKind::Scaling, vec![64]);
    let spec = manifold_for(&cfg, 1);
    let train = sample_manifold(&spec, 300, 1).unwrap().points;
    let ys: Vec<f64> = train.iter().map(|u| u[0].sin() + u[1]).collect();
    let w = ProjectionMatrix::sample(cfg.n, 500, RowDistribution::default_gaussian(cfg.n), 2).unwrap();
    let tau = estimate_thresholds(&w, &train, 12).unwrap();
    let model = EasApproximator::fit(w, tau, &train, &ys).unwrap();
    let probes = sample_manifold(&spec, 100, 3).unwrap().points;
    let dir = tempfile::tempdir().unwrap();
    for enc in [ModelEncoding::Text, ModelEncoding::Binary] {
        let path = dir.path().join(format!("model-{enc:?}"));
        save_model(&model, &path, enc).unwrap();
        let back = load_model(&path).unwrap();
        for u in &probes {
            let a = model.predict_or_mean(u).unwrap().0;
            let b = back.predict_or_mean(u).unwrap().0;
            if a.to_bits() != b.to_bits() {
                problems.push(format!("{enc:?} round trip changed a prediction: {a} vs {b}"));
                break;
            }
        }
    }
    outcome(
        problems.is_empty(),
        format!(
            "5 experiments rerun (default pool twice, single thread once), text and binary model round trips on 100 inputs; {}",
            if problems.is_empty() { "all byte-identical".to_string() } else { problems.join("; ") }
        ),
    )
}

fn instruments() -> Outcome {
    let mut cfg = ExperimentConfig::new(ExperimentKind::Dropout, vec![1024]);
    cfg.k_values = vec![32];
    cfg.trials = 10;
    cfg.fit_size = 2000;
    cfg.test_size = 500;
    let dropout = run_dropout(&cfg).expect("dropout run");
    let rho = dropout.correlations.first().map_or(f64::NAN, |c| c.value);
    let dropout_csv = dropout.to_csv(&cfg);

    let mut cfg = ExperimentConfig::new(ExperimentKind::Pruning, vec![PRUNE_D]);
    cfg.k_values = vec![PRUNE_K];
    cfg.fit_size = PRUNE_TRAIN;
    let pruning = run_pruning(&cfg).expect("pruning run");
    let row = &pruning.rows[0];
    let degradation = row.probe_after.mean_abs_err - row.probe_before.mean_abs_err;
    let pruning_csv = pruning.to_csv(&cfg);

    let emitted = dropout_csv.lines().any(|l| l.starts_with("rank_correlation,"))
        && (-1.0..=1.0).contains(&rho)
        && pruning_csv
            .lines()
            .nth(2)
            .is_some_and(|h| h.contains("probe_degradation"))
        && degradation.is_finite();
    outcome(
        emitted,
        format!(
            "dropout rank correlation {rho:.3}; probe error {:.4} -> {:.4} after pruning (no-active probes {} -> {})",
            row.probe_before.mean_abs_err,
            row.probe_after.mean_abs_err,
            row.probe_before.no_active_count,
            row.probe_after.no_active_count
        ),
    )
}

fn main() {
    let criteria: [(&str, Check); 8] = [
        ("scaling law", scaling),
        ("sparsity in expectation", sparsity),
        ("oracle equivalence", oracles),
        ("pruning exactness", pruning),
        ("lsh profile", lsh_profile),
        ("memorization signature", memorization),
        ("determinism", determinism),
        ("conjecture instruments", instruments),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let result = check();
        failed += usize::from(!result.pass);
        println!(
            "{} criterion {} ({name}): {}",
            if result.pass { "PASS" } else { "FAIL" },
            i + 1,
            result.detail
        );
    }
    println!(
        "acceptance: {} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
