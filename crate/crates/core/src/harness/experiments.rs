//! The experiment drivers behind `expsparse experiment <tag>`.
//!
//! Each driver returns a typed report plus a CSV rendering. Every random draw
//! is keyed by `(config seed, stream, indices...)`, and parallel work is
//! collected in order before any reduction, so reruns give identical bytes.

use std::path::Path;

use crate::approximator::{EasApproximator, EasClassifier, EvalReport, FitOptions, NoActiveFallback};
use crate::data::{
    make_target, sample_manifold, scramble_labels, synthetic_classification, synthetic_regression, EmbeddingKind,
    ManifoldSpec, TargetFunction,
};
use crate::error::{Error, Result};
use crate::harness::config::{ExperimentConfig, ExperimentKind, ProfileCode, ProfileInputs};
use crate::metrics::{independent_overlap, random_unit_direction, similarity_profile, CodeRule, OverlapBin};
use crate::projection::ProjectionMatrix;
use crate::rng::{derive_seed, seeded_rng};
use crate::sparsifier::estimate_thresholds;
use crate::stats::{mean_and_std, ols, spearman, LinearFit};

// Stream tags for seed derivation.
const EMBED: u64 = 1;
const TARGET: u64 = 2;
const DATA: u64 = 3;
const PROJECTION: u64 = 4;
const CALIBRATION: u64 = 5;
const PROBE: u64 = 6;
const DROPOUT: u64 = 7;
const SCRAMBLE: u64 = 8;
const PROFILE: u64 = 9;

const PRUNING_CALIBRATION_SIZE: usize = 10_000;

fn seed_of(base: u64, path: &[u64]) -> u64 {
    path.iter().fold(base, |s, &p| derive_seed(s, p))
}

/// The manifold used for intrinsic dimension `m` under `cfg`.
pub fn manifold_for(cfg: &ExperimentConfig, m: usize) -> ManifoldSpec {
    ManifoldSpec {
        m,
        n: cfg.n,
        embedding_seed: seed_of(cfg.seed, &[EMBED, m as u64]),
        frequency_count: cfg.frequency_count,
        amplitude: cfg.amplitude,
        max_frequency: cfg.max_frequency,
        embedding: EmbeddingKind::RandomTrig,
    }
}

fn target_for(cfg: &ExperimentConfig, spec: &ManifoldSpec) -> Result<TargetFunction> {
    make_target(cfg.target_tag()?, spec, seed_of(cfg.seed, &[TARGET, spec.m as u64]))
}

fn projection_for(cfg: &ExperimentConfig, m: usize, trial: usize, d: usize) -> Result<ProjectionMatrix> {
    ProjectionMatrix::sample(
        cfg.n,
        d,
        cfg.row_distribution()?,
        seed_of(cfg.seed, &[PROJECTION, m as u64, trial as u64, d as u64]),
    )
}

fn expect_kind(cfg: &ExperimentConfig, kind: ExperimentKind) -> Result<()> {
    if cfg.experiment != kind {
        return Err(Error::Config(format!(
            "config is for `{}`, not `{kind}`",
            cfg.experiment
        )));
    }
    cfg.validate()
}

/// CSV text: comment lines echoing the resolved config, then a header and rows.
fn render_csv(cfg: &ExperimentConfig, header: &[&str], rows: &[Vec<String>]) -> String {
    let mut out = format!(
        "# expsparse experiment {}\n# config {}\n",
        cfg.experiment,
        cfg.to_json()
    );
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record(header).expect("in-memory write");
    for row in rows {
        debug_assert_eq!(row.len(), header.len());
        writer.write_record(row).expect("in-memory write");
    }
    out.push_str(&String::from_utf8(writer.into_inner().expect("in-memory flush")).expect("UTF-8 cells"));
    out
}

fn cell<T: ToString>(v: T) -> String {
    v.to_string()
}

fn blank() -> String {
    String::new()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingPoint {
    pub m: usize,
    pub k: usize,
    pub d: usize,
    pub trial: usize,
    pub report: EvalReport,
}

/// OLS of `ln(mean_abs_err)` on `ln(k/d)` over the per-trial points of one `(m, k)` group.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalingSlope {
    pub m: usize,
    /// `None` when `k` follows `d` through the default rule.
    pub k: Option<usize>,
    pub fit: Option<LinearFit>,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingReport {
    pub points: Vec<ScalingPoint>,
    pub slopes: Vec<ScalingSlope>,
}

impl ScalingReport {
    /// Slope for intrinsic dimension `m` (first matching group).
    pub fn slope(&self, m: usize) -> Option<f64> {
        self.slopes
            .iter()
            .find(|s| s.m == m)
            .and_then(|s| s.fit)
            .map(|f| f.slope)
    }
}

pub fn run_scaling(cfg: &ExperimentConfig) -> Result<ScalingReport> {
    expect_kind(cfg, ExperimentKind::Scaling)?;
    let mut points = Vec::new();
    let mut constant_targets = Vec::new();
    for &m in &cfg.m_values {
        let mut constant = true;
        let spec = manifold_for(cfg, m);
        let target = target_for(cfg, &spec)?;
        for trial in 0..cfg.trials {
            let path = [DATA, m as u64, trial as u64];
            let fit = synthetic_regression(
                &spec,
                &target,
                cfg.fit_size,
                seed_of(cfg.seed, &[&path[..], &[0]].concat()),
            )?;
            let test = synthetic_regression(
                &spec,
                &target,
                cfg.test_size,
                seed_of(cfg.seed, &[&path[..], &[1]].concat()),
            )?;
            let ys = fit.regression_targets()?;
            constant &= ys.iter().all(|&y| y == ys[0]);
            let calibration = match cfg.calibration_size {
                Some(size) => {
                    sample_manifold(&spec, size, seed_of(cfg.seed, &[CALIBRATION, m as u64, trial as u64]))?.points
                }
                None => fit.inputs.clone(),
            };
            for &d in &cfg.d_values {
                let w = projection_for(cfg, m, trial, d)?;
                for k in cfg.ks_for(d) {
                    let tau = estimate_thresholds(&w, &calibration, k)?;
                    let model = EasApproximator::fit(w.clone(), tau, &fit.inputs, fit.regression_targets()?)?;
                    let report =
                        model.evaluate(&test.inputs, test.regression_targets()?, NoActiveFallback::GlobalMean)?;
                    points.push(ScalingPoint { m, k, d, trial, report });
                }
            }
        }
        constant_targets.push(constant);
    }

    let mut slopes = Vec::new();
    for (&m, &constant) in cfg.m_values.iter().zip(&constant_targets) {
        let groups: Vec<Option<usize>> = if cfg.k_values.is_empty() {
            vec![None]
        } else {
            cfg.k_values.iter().copied().map(Some).collect()
        };
        for k in groups {
            let group: Vec<&ScalingPoint> = points
                .iter()
                .filter(|p| p.m == m && k.is_none_or(|k| p.k == k))
                .collect();
            let x: Vec<f64> = group.iter().map(|p| (p.k as f64 / p.d as f64).ln()).collect();
            let y: Vec<f64> = group.iter().map(|p| p.report.mean_abs_err.ln()).collect();
            let (fit, note) = if constant {
                (None, "degenerate: constant target".to_string())
            } else if y.iter().any(|v| !v.is_finite()) {
                (None, "degenerate: zero mean error".to_string())
            } else {
                match ols(&x, &y) {
                    Some(fit) => (Some(fit), String::new()),
                    None => (None, "degenerate: k/d does not vary".to_string()),
                }
            };
            slopes.push(ScalingSlope { m, k, fit, note });
        }
    }
    Ok(ScalingReport { points, slopes })
}

impl ScalingReport {
    pub const HEADER: [&'static str; 13] = [
        "row_kind",
        "n",
        "d",
        "k",
        "m",
        "trial",
        "mean_abs_err",
        "max_abs_err",
        "rmse",
        "no_active_count",
        "slope",
        "slope_stderr",
        "note",
    ];

    pub fn to_csv(&self, cfg: &ExperimentConfig) -> String {
        let mut rows: Vec<Vec<String>> = self
            .points
            .iter()
            .map(|p| {
                vec![
                    cell("trial"),
                    cell(cfg.n),
                    cell(p.d),
                    cell(p.k),
                    cell(p.m),
                    cell(p.trial),
                    cell(p.report.mean_abs_err),
                    cell(p.report.max_abs_err),
                    cell(p.report.rmse),
                    cell(p.report.no_active_count),
                    blank(),
                    blank(),
                    blank(),
                ]
            })
            .collect();
        for s in &self.slopes {
            rows.push(vec![
                cell("slope"),
                cell(cfg.n),
                blank(),
                s.k.map_or_else(|| cell("auto"), cell),
                cell(s.m),
                blank(),
                blank(),
                blank(),
                blank(),
                blank(),
                s.fit.map_or_else(|| cell("NaN"), |f| cell(f.slope)),
                s.fit.map_or_else(blank, |f| cell(f.slope_stderr)),
                s.note.clone(),
            ]);
        }
        render_csv(cfg, &Self::HEADER, &rows)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PruningRow {
    pub d: usize,
    pub k: usize,
    pub trial: usize,
    pub removed_count: usize,
    pub max_active_per_input: usize,
    /// Every training prediction kept its exact bits after pruning.
    pub train_identical: bool,
    pub train_before: EvalReport,
    pub train_after: EvalReport,
    pub probe_before: EvalReport,
    pub probe_after: EvalReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PruningReport {
    pub rows: Vec<PruningRow>,
}

/// Fits on the training set with thresholds from a separate calibration draw,
/// drops units no training input activates, and compares errors on the
/// training set and on off-manifold probes.
pub fn run_pruning(cfg: &ExperimentConfig) -> Result<PruningReport> {
    expect_kind(cfg, ExperimentKind::Pruning)?;
    let m = cfg.m_values[0];
    let spec = manifold_for(cfg, m);
    let target = target_for(cfg, &spec)?;
    let mut rows = Vec::new();
    for trial in 0..cfg.trials {
        let t = trial as u64;
        let train = synthetic_regression(&spec, &target, cfg.fit_size, seed_of(cfg.seed, &[DATA, m as u64, t, 0]))?;
        let calibration_size = cfg.calibration_size.unwrap_or(PRUNING_CALIBRATION_SIZE);
        let calibration =
            sample_manifold(&spec, calibration_size, seed_of(cfg.seed, &[CALIBRATION, m as u64, t]))?.points;
        let probes: Vec<Vec<f64>> = sample_manifold(&spec, cfg.test_size, seed_of(cfg.seed, &[PROBE, m as u64, t]))?
            .points
            .into_iter()
            .map(|u| u.into_iter().map(|x| x * cfg.probe_scale).collect())
            .collect();
        let probe_targets: Vec<f64> = probes.iter().map(|u| target.eval(u)).collect();
        let train_targets = train.regression_targets()?;
        for &d in &cfg.d_values {
            let w = projection_for(cfg, m, trial, d)?;
            for k in cfg.ks_for(d) {
                let tau = estimate_thresholds(&w, &calibration, k)?;
                let model = EasApproximator::fit(w.clone(), tau, &train.inputs, train_targets)?;
                let (pruned, removed_count) = model.prune_dead(&train.inputs)?;
                let mut train_identical = true;
                let mut max_active_per_input = 0;
                for u in &train.inputs {
                    let before = model.predict_or_mean(u)?.0;
                    let after = pruned.predict_or_mean(u)?.0;
                    train_identical &= before.to_bits() == after.to_bits();
                    max_active_per_input = max_active_per_input.max(model.code(u)?.len());
                }
                let fallback = NoActiveFallback::GlobalMean;
                rows.push(PruningRow {
                    d,
                    k,
                    trial,
                    removed_count,
                    max_active_per_input,
                    train_identical,
                    train_before: model.evaluate(&train.inputs, train_targets, fallback)?,
                    train_after: pruned.evaluate(&train.inputs, train_targets, fallback)?,
                    probe_before: model.evaluate(&probes, &probe_targets, fallback)?,
                    probe_after: pruned.evaluate(&probes, &probe_targets, fallback)?,
                });
            }
        }
    }
    Ok(PruningReport { rows })
}

impl PruningReport {
    pub const HEADER: [&'static str; 14] = [
        "row_kind",
        "d",
        "k",
        "trial",
        "removed_count",
        "max_active_per_input",
        "train_identical",
        "train_err_before",
        "train_err_after",
        "probe_err_before",
        "probe_err_after",
        "probe_degradation",
        "probe_no_active_before",
        "probe_no_active_after",
    ];

    pub fn to_csv(&self, cfg: &ExperimentConfig) -> String {
        let rows: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                vec![
                    cell("trial"),
                    cell(r.d),
                    cell(r.k),
                    cell(r.trial),
                    cell(r.removed_count),
                    cell(r.max_active_per_input),
                    cell(r.train_identical),
                    cell(r.train_before.mean_abs_err),
                    cell(r.train_after.mean_abs_err),
                    cell(r.probe_before.mean_abs_err),
                    cell(r.probe_after.mean_abs_err),
                    cell(r.probe_after.mean_abs_err - r.probe_before.mean_abs_err),
                    cell(r.probe_before.no_active_count),
                    cell(r.probe_after.no_active_count),
                ]
            })
            .collect();
        render_csv(cfg, &Self::HEADER, &rows)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DropoutRow {
    pub d: usize,
    pub k: usize,
    pub trial: usize,
    pub rate: f64,
    /// `round(k (1 - rate))`, at least 1.
    pub k_prime: usize,
    /// Test error of the model fit with dropout at sparsity `k`.
    pub err_dropout: f64,
    /// Test error of the model fit without dropout at sparsity `k_prime`.
    pub err_sparser: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankCorrelation {
    pub d: usize,
    pub k: usize,
    /// Spearman correlation of the trial-averaged error ladders over the rates.
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DropoutReport {
    pub rows: Vec<DropoutRow>,
    pub correlations: Vec<RankCorrelation>,
}

pub fn matched_sparsity(k: usize, rate: f64) -> usize {
    ((k as f64 * (1.0 - rate)).round() as usize).max(1)
}

/// Compares fitting with per-unit dropout at sparsity `k` against fitting
/// without dropout at the matched sparsity `k (1 - p)`. Evaluation uses full codes.
pub fn run_dropout(cfg: &ExperimentConfig) -> Result<DropoutReport> {
    expect_kind(cfg, ExperimentKind::Dropout)?;
    let m = cfg.m_values[0];
    let spec = manifold_for(cfg, m);
    let target = target_for(cfg, &spec)?;
    let mut rows = Vec::new();
    for trial in 0..cfg.trials {
        let t = trial as u64;
        let fit = synthetic_regression(&spec, &target, cfg.fit_size, seed_of(cfg.seed, &[DATA, m as u64, t, 0]))?;
        let test = synthetic_regression(
            &spec,
            &target,
            cfg.test_size,
            seed_of(cfg.seed, &[DATA, m as u64, t, 1]),
        )?;
        let calibration = match cfg.calibration_size {
            Some(size) => sample_manifold(&spec, size, seed_of(cfg.seed, &[CALIBRATION, m as u64, t]))?.points,
            None => fit.inputs.clone(),
        };
        let test_error = |model: &EasApproximator| -> Result<f64> {
            Ok(model
                .evaluate(&test.inputs, test.regression_targets()?, NoActiveFallback::GlobalMean)?
                .mean_abs_err)
        };
        for &d in &cfg.d_values {
            let w = projection_for(cfg, m, trial, d)?;
            for k in cfg.ks_for(d) {
                let tau = estimate_thresholds(&w, &calibration, k)?;
                for (ri, &rate) in cfg.dropout_rates.iter().enumerate() {
                    let opts = FitOptions {
                        dropout_rate: (rate > 0.0).then_some(rate),
                        dropout_seed: seed_of(cfg.seed, &[DROPOUT, d as u64, k as u64, t, ri as u64]),
                    };
                    let with_dropout = EasApproximator::fit_with(
                        w.clone(),
                        tau.clone(),
                        &fit.inputs,
                        fit.regression_targets()?,
                        opts,
                    )?;
                    let k_prime = matched_sparsity(k, rate);
                    let tau_prime = estimate_thresholds(&w, &calibration, k_prime)?;
                    let sparser = EasApproximator::fit(w.clone(), tau_prime, &fit.inputs, fit.regression_targets()?)?;
                    rows.push(DropoutRow {
                        d,
                        k,
                        trial,
                        rate,
                        k_prime,
                        err_dropout: test_error(&with_dropout)?,
                        err_sparser: test_error(&sparser)?,
                    });
                }
            }
        }
    }

    let mut correlations = Vec::new();
    for &d in &cfg.d_values {
        for k in cfg.ks_for(d) {
            if correlations.iter().any(|c: &RankCorrelation| c.d == d && c.k == k) {
                continue;
            }
            let ladder = |pick: fn(&DropoutRow) -> f64| -> Vec<f64> {
                cfg.dropout_rates
                    .iter()
                    .map(|&rate| {
                        let errs: Vec<f64> = rows
                            .iter()
                            .filter(|r| r.d == d && r.k == k && r.rate == rate)
                            .map(pick)
                            .collect();
                        mean_and_std(&errs).0
                    })
                    .collect()
            };
            let value = spearman(&ladder(|r| r.err_dropout), &ladder(|r| r.err_sparser));
            correlations.push(RankCorrelation { d, k, value });
        }
    }
    Ok(DropoutReport { rows, correlations })
}

impl DropoutReport {
    pub const HEADER: [&'static str; 10] = [
        "row_kind",
        "d",
        "k",
        "trial",
        "dropout_rate",
        "k_prime",
        "err_dropout",
        "err_sparser",
        "err_diff",
        "rank_correlation",
    ];

    pub fn to_csv(&self, cfg: &ExperimentConfig) -> String {
        let mut rows: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                vec![
                    cell("pair"),
                    cell(r.d),
                    cell(r.k),
                    cell(r.trial),
                    cell(r.rate),
                    cell(r.k_prime),
                    cell(r.err_dropout),
                    cell(r.err_sparser),
                    cell(r.err_dropout - r.err_sparser),
                    blank(),
                ]
            })
            .collect();
        for c in &self.correlations {
            rows.push(vec![
                cell("rank_correlation"),
                cell(c.d),
                cell(c.k),
                blank(),
                blank(),
                blank(),
                blank(),
                blank(),
                blank(),
                cell(c.value),
            ]);
        }
        render_csv(cfg, &Self::HEADER, &rows)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelArm {
    True,
    Scrambled,
}

impl LabelArm {
    pub fn as_str(self) -> &'static str {
        match self {
            LabelArm::True => "true",
            LabelArm::Scrambled => "scrambled",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemorizationRow {
    pub labels: LabelArm,
    pub d: usize,
    pub k: usize,
    pub trial: usize,
    pub train_acc: f64,
    pub test_acc: f64,
    pub dead_units: usize,
    pub test_no_active: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemorizationSummary {
    pub labels: LabelArm,
    pub d: usize,
    pub k: usize,
    pub train_acc: f64,
    pub test_acc: f64,
    /// Binomial standard error of `test_acc` over all pooled test inputs.
    pub test_acc_se: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemorizationReport {
    pub rows: Vec<MemorizationRow>,
    pub summaries: Vec<MemorizationSummary>,
}

impl MemorizationReport {
    pub fn summary(&self, labels: LabelArm) -> Option<&MemorizationSummary> {
        self.summaries.iter().find(|s| s.labels == labels)
    }
}

/// Fits the region-vote classifier on true and on scrambled labels with the
/// same projection and thresholds. The scrambled arm scrambles test labels too.
pub fn run_memorization(cfg: &ExperimentConfig) -> Result<MemorizationReport> {
    expect_kind(cfg, ExperimentKind::Memorization)?;
    let m = cfg.m_values[0];
    let spec = manifold_for(cfg, m);
    let mut rows = Vec::new();
    for trial in 0..cfg.trials {
        let t = trial as u64;
        let train = synthetic_classification(
            &spec,
            cfg.fit_size,
            cfg.classes,
            seed_of(cfg.seed, &[DATA, m as u64, t, 0]),
        )?;
        let test = synthetic_classification(
            &spec,
            cfg.test_size,
            cfg.classes,
            seed_of(cfg.seed, &[DATA, m as u64, t, 1]),
        )?;
        let scrambled_train = scramble_labels(&train, seed_of(cfg.seed, &[SCRAMBLE, m as u64, t, 0]))?;
        let scrambled_test = scramble_labels(&test, seed_of(cfg.seed, &[SCRAMBLE, m as u64, t, 1]))?;
        let calibration = match cfg.calibration_size {
            Some(size) => sample_manifold(&spec, size, seed_of(cfg.seed, &[CALIBRATION, m as u64, t]))?.points,
            None => train.inputs.clone(),
        };
        for &d in &cfg.d_values {
            let w = projection_for(cfg, m, trial, d)?;
            for k in cfg.ks_for(d) {
                let tau = estimate_thresholds(&w, &calibration, k)?;
                for (arm, tr, te) in [
                    (LabelArm::True, &train, &test),
                    (LabelArm::Scrambled, &scrambled_train, &scrambled_test),
                ] {
                    let (train_labels, classes) = tr.labels()?;
                    let (test_labels, _) = te.labels()?;
                    let clf = EasClassifier::fit(w.clone(), tau.clone(), &tr.inputs, train_labels, classes)?;
                    let train_report = clf.accuracy(&tr.inputs, train_labels)?;
                    let test_report = clf.accuracy(&te.inputs, test_labels)?;
                    rows.push(MemorizationRow {
                        labels: arm,
                        d,
                        k,
                        trial,
                        train_acc: train_report.accuracy,
                        test_acc: test_report.accuracy,
                        dead_units: clf.dead_count(),
                        test_no_active: test_report.no_active_count,
                    });
                }
            }
        }
    }

    let mut summaries: Vec<MemorizationSummary> = Vec::new();
    for arm in [LabelArm::True, LabelArm::Scrambled] {
        for &d in &cfg.d_values {
            for k in cfg.ks_for(d) {
                if summaries.iter().any(|s| s.labels == arm && s.d == d && s.k == k) {
                    continue;
                }
                let group: Vec<&MemorizationRow> = rows
                    .iter()
                    .filter(|r| r.labels == arm && r.d == d && r.k == k)
                    .collect();
                let train_acc = mean_and_std(&group.iter().map(|r| r.train_acc).collect::<Vec<_>>()).0;
                let test_acc = mean_and_std(&group.iter().map(|r| r.test_acc).collect::<Vec<_>>()).0;
                let pooled = (group.len() * cfg.test_size) as f64;
                summaries.push(MemorizationSummary {
                    labels: arm,
                    d,
                    k,
                    train_acc,
                    test_acc,
                    test_acc_se: (test_acc * (1.0 - test_acc) / pooled).sqrt(),
                });
            }
        }
    }
    Ok(MemorizationReport { rows, summaries })
}

impl MemorizationReport {
    pub const HEADER: [&'static str; 10] = [
        "row_kind",
        "labels",
        "d",
        "k",
        "trial",
        "train_acc",
        "test_acc",
        "test_acc_se",
        "dead_units",
        "test_no_active",
    ];

    pub fn to_csv(&self, cfg: &ExperimentConfig) -> String {
        let mut rows: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                vec![
                    cell("trial"),
                    cell(r.labels.as_str()),
                    cell(r.d),
                    cell(r.k),
                    cell(r.trial),
                    cell(r.train_acc),
                    cell(r.test_acc),
                    blank(),
                    cell(r.dead_units),
                    cell(r.test_no_active),
                ]
            })
            .collect();
        for s in &self.summaries {
            rows.push(vec![
                cell("mean"),
                cell(s.labels.as_str()),
                cell(s.d),
                cell(s.k),
                blank(),
                cell(s.train_acc),
                cell(s.test_acc),
                cell(s.test_acc_se),
                blank(),
                blank(),
            ]);
        }
        render_csv(cfg, &Self::HEADER, &rows)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LshReport {
    pub d: usize,
    pub k: usize,
    pub bins: Vec<OverlapBin>,
    /// Overlap between codes of independently drawn base inputs.
    pub independent: OverlapBin,
}

impl LshReport {
    /// Expected overlap of two independent uniformly random `k`-subsets of `d` units.
    pub fn chance_overlap(&self) -> f64 {
        (self.k * self.k) as f64 / self.d as f64
    }
}

/// Code overlap between `u` and `u + eps * dir` over the configured radii,
/// using the first `d` and its first `k`.
pub fn run_lsh_profile(cfg: &ExperimentConfig) -> Result<LshReport> {
    expect_kind(cfg, ExperimentKind::LshProfile)?;
    let d = cfg.d_values[0];
    let k = cfg.ks_for(d)[0];
    let m = cfg.m_values[0];
    let w = projection_for(cfg, m, 0, d)?;
    let draw = |count: usize, stream: u64| -> Result<Vec<Vec<f64>>> {
        let seed = seed_of(cfg.seed, &[DATA, m as u64, 0, stream]);
        match cfg.profile_inputs {
            ProfileInputs::Sphere => {
                let mut rng = seeded_rng(seed);
                Ok((0..count).map(|_| random_unit_direction(cfg.n, &mut rng)).collect())
            }
            ProfileInputs::Manifold => Ok(sample_manifold(&manifold_for(cfg, m), count, seed)?.points),
        }
    };
    let base = draw(cfg.test_size.max(2), 1)?;
    let rule = match cfg.profile_code {
        ProfileCode::TopK => CodeRule::TopK { k },
        ProfileCode::Threshold => CodeRule::Threshold {
            thresholds: estimate_thresholds(&w, &draw(cfg.calibration_size.unwrap_or(cfg.fit_size), 0)?, k)?,
        },
    };
    let profile = similarity_profile(
        &w,
        &rule,
        &base,
        &cfg.radii,
        cfg.pairs_per_radius,
        seed_of(cfg.seed, &[PROFILE, 0]),
    )?;
    let independent = independent_overlap(&w, &rule, &base, cfg.pairs_per_radius, seed_of(cfg.seed, &[PROFILE, 1]))?;
    Ok(LshReport {
        d,
        k,
        bins: profile.bins,
        independent,
    })
}

impl LshReport {
    pub const HEADER: [&'static str; 6] = ["row_kind", "bin_lo", "bin_hi", "mean", "std", "count"];

    pub fn to_csv(&self, cfg: &ExperimentConfig) -> String {
        let bin_row = |kind: &str, b: &OverlapBin| {
            vec![
                cell(kind),
                cell(b.lo),
                cell(b.hi),
                cell(b.mean),
                cell(b.std),
                cell(b.count),
            ]
        };
        let mut rows: Vec<Vec<String>> = self.bins.iter().map(|b| bin_row("bin", b)).collect();
        rows.push(vec![
            cell("chance_k2_over_d"),
            blank(),
            blank(),
            cell(self.chance_overlap()),
            blank(),
            blank(),
        ]);
        rows.push(bin_row("independent_inputs", &self.independent));
        render_csv(cfg, &Self::HEADER, &rows)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Report {
    Scaling(ScalingReport),
    Pruning(PruningReport),
    Dropout(DropoutReport),
    Memorization(MemorizationReport),
    LshProfile(LshReport),
}

/// A finished run: its typed report and the CSV text.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub report: Report,
    pub csv: String,
}

impl ExperimentOutput {
    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, &self.csv).map_err(|e| Error::io(path, e))
    }
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let (report, csv) = match cfg.experiment {
        ExperimentKind::Scaling => {
            let r = run_scaling(cfg)?;
            let csv = r.to_csv(cfg);
            (Report::Scaling(r), csv)
        }
        ExperimentKind::Pruning => {
            let r = run_pruning(cfg)?;
            let csv = r.to_csv(cfg);
            (Report::Pruning(r), csv)
        }
        ExperimentKind::Dropout => {
            let r = run_dropout(cfg)?;
            let csv = r.to_csv(cfg);
            (Report::Dropout(r), csv)
        }
        ExperimentKind::Memorization => {
            let r = run_memorization(cfg)?;
            let csv = r.to_csv(cfg);
            (Report::Memorization(r), csv)
        }
        ExperimentKind::LshProfile => {
            let r = run_lsh_profile(cfg)?;
            let csv = r.to_csv(cfg);
            (Report::LshProfile(r), csv)
        }
    };
    Ok(ExperimentOutput { report, csv })
}
