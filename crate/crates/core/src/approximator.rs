//! Single hidden layer approximator: binary expand-and-sparsify code followed by
//! a weighted-average readout whose weights are region means of the target.
//!
//! Unit `j` owns the region `U_j = {u : <w_j, u> >= tau_j}`; its readout weight is
//! the mean target over the fitting samples that fall in `U_j`, and a prediction
//! averages the weights of the units active for the input.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_finite, check_len, Error, Result};
use crate::projection::ProjectionMatrix;
use crate::rng::{derive_seed, seeded_rng};
use crate::sparsifier::{binary_code, encode_batch, SparseCode, ThresholdVector};

/// Whether units that saw no fitting sample still count in the prediction denominator.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeadUnitPolicy {
    #[default]
    CountInDenominator,
    Exclude,
}

/// What `evaluate` does for inputs that activate no unit.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoActiveFallback {
    Error,
    #[default]
    GlobalMean,
}

/// Options for fitting a readout.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FitOptions {
    /// Drop each active unit of each fitting code with this probability.
    pub dropout_rate: Option<f64>,
    pub dropout_seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EasApproximator {
    projection: ProjectionMatrix,
    thresholds: ThresholdVector,
    readout: Vec<f64>,
    counts: Vec<u64>,
    dead_mask: Vec<bool>,
    global_mean: f64,
    dead_policy: DeadUnitPolicy,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalReport {
    pub mean_abs_err: f64,
    pub max_abs_err: f64,
    pub rmse: f64,
    pub no_active_count: usize,
}

fn check_model_shape(w: &ProjectionMatrix, tau: &ThresholdVector) -> Result<()> {
    check_len(w.d(), tau.d(), "threshold vector vs projection rows")
}

/// Codes for fitting, with optional per-sample dropout.
fn fitting_codes(
    w: &ProjectionMatrix,
    tau: &ThresholdVector,
    inputs: &[Vec<f64>],
    opts: FitOptions,
) -> Result<Vec<SparseCode>> {
    let codes = encode_batch(w, tau, inputs)?;
    Ok(match opts.dropout_rate {
        Some(rate) if rate > 0.0 => {
            if rate >= 1.0 {
                return Err(Error::Config(format!("dropout rate must lie in [0, 1), got {rate}")));
            }
            codes
                .iter()
                .enumerate()
                .map(|(i, c)| crate::sparsifier::apply_dropout(c, rate, derive_seed(opts.dropout_seed, i as u64)))
                .collect()
        }
        _ => codes,
    })
}

impl EasApproximator {
    /// Fits region-mean readout weights.
    pub fn fit(w: ProjectionMatrix, tau: ThresholdVector, inputs: &[Vec<f64>], targets: &[f64]) -> Result<Self> {
        Self::fit_with(w, tau, inputs, targets, FitOptions::default())
    }

    pub fn fit_with(
        w: ProjectionMatrix,
        tau: ThresholdVector,
        inputs: &[Vec<f64>],
        targets: &[f64],
        opts: FitOptions,
    ) -> Result<Self> {
        if inputs.is_empty() {
            return Err(Error::Fit("no fitting samples".into()));
        }
        check_len(inputs.len(), targets.len(), "targets vs inputs")?;
        check_finite(targets, "targets")?;
        check_model_shape(&w, &tau)?;
        let codes = fitting_codes(&w, &tau, inputs, opts)?;

        let d = w.d();
        let mut sums = vec![0.0; d];
        let mut counts = vec![0u64; d];
        for (code, &y) in codes.iter().zip(targets) {
            for &j in code.active() {
                sums[j] += y;
                counts[j] += 1;
            }
        }
        let readout = sums
            .iter()
            .zip(&counts)
            .map(|(&s, &c)| if c == 0 { 0.0 } else { s / c as f64 })
            .collect();
        let dead_mask = counts.iter().map(|&c| c == 0).collect();
        let global_mean = targets.iter().sum::<f64>() / targets.len() as f64;
        Ok(Self {
            projection: w,
            thresholds: tau,
            readout,
            counts,
            dead_mask,
            global_mean,
            dead_policy: DeadUnitPolicy::default(),
        })
    }

    /// Reassembles a fitted model from stored parts.
    pub fn from_parts(
        projection: ProjectionMatrix,
        thresholds: ThresholdVector,
        readout: Vec<f64>,
        counts: Vec<u64>,
        global_mean: f64,
        dead_policy: DeadUnitPolicy,
    ) -> Result<Self> {
        check_model_shape(&projection, &thresholds)?;
        let d = projection.d();
        check_len(d, readout.len(), "readout weights")?;
        check_len(d, counts.len(), "activation counts")?;
        check_finite(&readout, "readout weights")?;
        if !global_mean.is_finite() {
            return Err(Error::Input("global mean is not finite".into()));
        }
        if let Some(j) = (0..d).find(|&j| counts[j] == 0 && readout[j] != 0.0) {
            return Err(Error::Input(format!("dead unit {j} carries a non-zero weight")));
        }
        let dead_mask = counts.iter().map(|&c| c == 0).collect();
        Ok(Self {
            projection,
            thresholds,
            readout,
            counts,
            dead_mask,
            global_mean,
            dead_policy,
        })
    }

    pub fn with_dead_policy(mut self, policy: DeadUnitPolicy) -> Self {
        self.dead_policy = policy;
        self
    }

    pub fn projection(&self) -> &ProjectionMatrix {
        &self.projection
    }

    pub fn thresholds(&self) -> &ThresholdVector {
        &self.thresholds
    }

    pub fn readout(&self) -> &[f64] {
        &self.readout
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn dead_mask(&self) -> &[bool] {
        &self.dead_mask
    }

    pub fn dead_count(&self) -> usize {
        self.dead_mask.iter().filter(|&&d| d).count()
    }

    /// Mean of the fitting targets; the fallback prediction.
    pub fn global_mean(&self) -> f64 {
        self.global_mean
    }

    pub fn dead_policy(&self) -> DeadUnitPolicy {
        self.dead_policy
    }

    pub fn d(&self) -> usize {
        self.projection.d()
    }

    pub fn n(&self) -> usize {
        self.projection.n()
    }

    pub fn code(&self, u: &[f64]) -> Result<SparseCode> {
        crate::sparsifier::encode(&self.projection, &self.thresholds, u)
    }

    /// Weighted average of the readout weights over the active units.
    pub fn predict_code(&self, code: &SparseCode) -> Result<f64> {
        let mut numerator = 0.0;
        let mut denominator = 0u64;
        for &j in code.active() {
            if self.dead_policy == DeadUnitPolicy::Exclude && self.dead_mask[j] {
                continue;
            }
            numerator += self.readout[j];
            denominator += 1;
        }
        if denominator == 0 {
            Err(Error::NoActiveUnits)
        } else {
            Ok(numerator / denominator as f64)
        }
    }

    pub fn predict(&self, u: &[f64]) -> Result<f64> {
        self.predict_code(&self.code(u)?)
    }

    /// Prediction with the global-mean fallback; the flag reports whether it was used.
    pub fn predict_or_mean(&self, u: &[f64]) -> Result<(f64, bool)> {
        match self.predict(u) {
            Ok(y) => Ok((y, false)),
            Err(Error::NoActiveUnits) => Ok((self.global_mean, true)),
            Err(e) => Err(e),
        }
    }

    /// Absolute-error summary over a labeled test set.
    pub fn evaluate(&self, inputs: &[Vec<f64>], targets: &[f64], fallback: NoActiveFallback) -> Result<EvalReport> {
        if inputs.is_empty() {
            return Err(Error::Input("evaluation set is empty".into()));
        }
        check_len(inputs.len(), targets.len(), "targets vs inputs")?;
        check_finite(targets, "targets")?;
        for u in inputs {
            self.projection.check_input(u)?;
        }
        let outcomes: Vec<Result<(f64, bool)>> = inputs
            .par_iter()
            .map_init(
                || vec![0.0; self.d()],
                |p, u| {
                    self.projection.project_into(u, p);
                    match self.predict_code(&binary_code(p, &self.thresholds.taus)) {
                        Ok(y) => Ok((y, false)),
                        Err(Error::NoActiveUnits) if fallback == NoActiveFallback::GlobalMean => {
                            Ok((self.global_mean, true))
                        }
                        Err(e) => Err(e),
                    }
                },
            )
            .collect();
        let mut abs_sum = 0.0;
        let mut sq_sum = 0.0;
        let mut max_abs_err: f64 = 0.0;
        let mut no_active_count = 0;
        for (outcome, &y) in outcomes.into_iter().zip(targets) {
            let (pred, fell_back) = outcome?;
            let err = (pred - y).abs();
            abs_sum += err;
            sq_sum += err * err;
            max_abs_err = max_abs_err.max(err);
            no_active_count += usize::from(fell_back);
        }
        let count = inputs.len() as f64;
        Ok(EvalReport {
            mean_abs_err: abs_sum / count,
            max_abs_err,
            rmse: (sq_sum / count).sqrt(),
            no_active_count,
        })
    }

    /// Removes units that no reference input activates. Predictions on the
    /// reference inputs are unchanged bit for bit.
    pub fn prune_dead(&self, reference_inputs: &[Vec<f64>]) -> Result<(Self, usize)> {
        if reference_inputs.is_empty() {
            return Err(Error::Input("pruning needs at least one reference input".into()));
        }
        let codes = encode_batch(&self.projection, &self.thresholds, reference_inputs)?;
        let mut used = vec![false; self.d()];
        for code in &codes {
            for &j in code.active() {
                used[j] = true;
            }
        }
        let keep: Vec<usize> = (0..self.d()).filter(|&j| used[j]).collect();
        let removed = self.d() - keep.len();
        if removed == 0 {
            return Ok((self.clone(), 0));
        }
        if keep.is_empty() {
            return Err(Error::Fit(
                "no reference input activates any unit; nothing would remain".into(),
            ));
        }
        let pruned = Self {
            projection: self.projection.select_rows(&keep),
            thresholds: self.thresholds.select(&keep),
            readout: keep.iter().map(|&j| self.readout[j]).collect(),
            counts: keep.iter().map(|&j| self.counts[j]).collect(),
            dead_mask: keep.iter().map(|&j| self.dead_mask[j]).collect(),
            global_mean: self.global_mean,
            dead_policy: self.dead_policy,
        };
        Ok((pruned, removed))
    }

    /// Applies the permutation `order` (new position -> old unit) to the hidden units.
    pub fn permute_units(&self, order: &[usize]) -> Result<Self> {
        check_len(self.d(), order.len(), "permutation length")?;
        let mut seen = vec![false; self.d()];
        for &j in order {
            if j >= self.d() || std::mem::replace(&mut seen[j], true) {
                return Err(Error::Input("not a permutation of the hidden units".into()));
            }
        }
        Ok(Self {
            projection: self.projection.select_rows(order),
            thresholds: self.thresholds.select(order),
            readout: order.iter().map(|&j| self.readout[j]).collect(),
            counts: order.iter().map(|&j| self.counts[j]).collect(),
            dead_mask: order.iter().map(|&j| self.dead_mask[j]).collect(),
            global_mean: self.global_mean,
            dead_policy: self.dead_policy,
        })
    }
}

/// One readout per class (region class frequencies); prediction is the argmax.
#[derive(Debug, Clone, PartialEq)]
pub struct EasClassifier {
    projection: ProjectionMatrix,
    thresholds: ThresholdVector,
    classes: usize,
    /// `class_readout[c][j]`: fraction of unit `j`'s fitting samples labeled `c`.
    class_readout: Vec<Vec<f64>>,
    counts: Vec<u64>,
    majority_class: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassifierReport {
    pub accuracy: f64,
    pub no_active_count: usize,
}

impl EasClassifier {
    pub fn fit(
        w: ProjectionMatrix,
        tau: ThresholdVector,
        inputs: &[Vec<f64>],
        labels: &[usize],
        classes: usize,
    ) -> Result<Self> {
        if inputs.is_empty() {
            return Err(Error::Fit("no fitting samples".into()));
        }
        if classes == 0 {
            return Err(Error::Config("class count must be positive".into()));
        }
        check_len(inputs.len(), labels.len(), "labels vs inputs")?;
        if let Some(&bad) = labels.iter().find(|&&c| c >= classes) {
            return Err(Error::Input(format!("label {bad} out of range for {classes} classes")));
        }
        check_model_shape(&w, &tau)?;
        let codes = encode_batch(&w, &tau, inputs)?;
        let d = w.d();
        let mut hits = vec![vec![0u64; d]; classes];
        let mut counts = vec![0u64; d];
        for (code, &c) in codes.iter().zip(labels) {
            for &j in code.active() {
                hits[c][j] += 1;
                counts[j] += 1;
            }
        }
        let class_readout = hits
            .iter()
            .map(|row| {
                row.iter()
                    .zip(&counts)
                    .map(|(&h, &n)| if n == 0 { 0.0 } else { h as f64 / n as f64 })
                    .collect()
            })
            .collect();
        let mut histogram = vec![0usize; classes];
        labels.iter().for_each(|&c| histogram[c] += 1);
        let majority_class = argmax(histogram.iter().map(|&h| h as f64));
        Ok(Self {
            projection: w,
            thresholds: tau,
            classes,
            class_readout,
            counts,
            majority_class,
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn dead_count(&self) -> usize {
        self.counts.iter().filter(|&&c| c == 0).count()
    }

    pub fn majority_class(&self) -> usize {
        self.majority_class
    }

    /// Per-class weighted averages over the active units.
    pub fn scores_code(&self, code: &SparseCode) -> Result<Vec<f64>> {
        if code.is_empty() {
            return Err(Error::NoActiveUnits);
        }
        let denom = code.len() as f64;
        Ok(self
            .class_readout
            .iter()
            .map(|row| code.active().iter().map(|&j| row[j]).sum::<f64>() / denom)
            .collect())
    }

    /// Highest-scoring class, ties toward the lowest class index.
    pub fn predict_class(&self, u: &[f64]) -> Result<usize> {
        let code = crate::sparsifier::encode(&self.projection, &self.thresholds, u)?;
        self.scores_code(&code).map(|s| argmax(s.into_iter()))
    }

    /// Accuracy over a labeled set; inputs with no active unit get the majority class.
    pub fn accuracy(&self, inputs: &[Vec<f64>], labels: &[usize]) -> Result<ClassifierReport> {
        if inputs.is_empty() {
            return Err(Error::Input("evaluation set is empty".into()));
        }
        check_len(inputs.len(), labels.len(), "labels vs inputs")?;
        let codes = encode_batch(&self.projection, &self.thresholds, inputs)?;
        let mut correct = 0usize;
        let mut no_active_count = 0usize;
        for (code, &label) in codes.iter().zip(labels) {
            let predicted = match self.scores_code(code) {
                Ok(scores) => argmax(scores.into_iter()),
                Err(_) => {
                    no_active_count += 1;
                    self.majority_class
                }
            };
            correct += usize::from(predicted == label);
        }
        Ok(ClassifierReport {
            accuracy: correct as f64 / inputs.len() as f64,
            no_active_count,
        })
    }
}

fn argmax(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

/// Uniform random permutation of `0..d` drawn with `seed`.
pub fn random_permutation(d: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..d).collect();
    order.shuffle(&mut seeded_rng(seed));
    order
}
