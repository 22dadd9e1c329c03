//! Sparsification of projected vectors: per-unit percentile thresholds
//! (binary and ReLU-valued) and deterministic top-k.

use std::cmp::Ordering;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_finite, check_len, Error, Result};
use crate::projection::{dot, ProjectionMatrix};
use crate::rng::seeded_rng;
use crate::stats::mean_and_std;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SparsifyMode {
    ThresholdBinary,
    ThresholdRelu,
    TopK,
}

/// How top-k breaks ties between equal entries.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieRule {
    #[default]
    LowestIndex,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SparsifyConfig {
    pub mode: SparsifyMode,
    pub k: usize,
    #[serde(default)]
    pub tie_rule: TieRule,
    /// Post-sparsification dropout, used only by experiments.
    #[serde(default)]
    pub dropout_rate: Option<f64>,
}

impl SparsifyConfig {
    pub fn new(mode: SparsifyMode, k: usize) -> Self {
        Self {
            mode,
            k,
            tie_rule: TieRule::LowestIndex,
            dropout_rate: None,
        }
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        check_k(self.k, d)?;
        if let Some(p) = self.dropout_rate {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::Config(format!("dropout rate must lie in [0, 1), got {p}")));
            }
        }
        Ok(())
    }

    /// Sparsifies a projection according to the configured mode, then applies
    /// dropout (if configured) with `dropout_seed`. Threshold modes need `tau`.
    pub fn apply(&self, p: &[f64], tau: Option<&ThresholdVector>, dropout_seed: u64) -> Result<SparseCode> {
        self.validate(p.len())?;
        let need_tau = || tau.ok_or_else(|| Error::Config("threshold sparsification needs a threshold vector".into()));
        let code = match self.mode {
            SparsifyMode::ThresholdBinary => sparsify_binary(p, need_tau()?)?,
            SparsifyMode::ThresholdRelu => sparsify_relu(p, need_tau()?)?,
            SparsifyMode::TopK => sparsify_topk(p, self.k, self.tie_rule, false)?,
        };
        Ok(match self.dropout_rate {
            Some(rate) if rate > 0.0 => apply_dropout(&code, rate, dropout_seed),
            _ => code,
        })
    }
}

fn check_k(k: usize, d: usize) -> Result<()> {
    if k == 0 || k > d {
        Err(Error::Config(format!(
            "sparsity k must satisfy 1 <= k <= d (k = {k}, d = {d})"
        )))
    } else {
        Ok(())
    }
}

/// Per-unit activation thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdVector {
    pub taus: Vec<f64>,
    /// Target sparsity the thresholds were calibrated for.
    pub k: usize,
    /// `1 - k/d` at calibration time.
    pub quantile_level: f64,
    pub sample_size: usize,
    pub source_seed: u64,
}

impl ThresholdVector {
    /// Thresholds given directly, e.g. for tests or loaded models.
    pub fn new(taus: Vec<f64>, k: usize, quantile_level: f64, sample_size: usize, source_seed: u64) -> Result<Self> {
        check_finite(&taus, "threshold vector")?;
        if taus.is_empty() {
            return Err(Error::Config("threshold vector must not be empty".into()));
        }
        if !(0.0..1.0).contains(&quantile_level) {
            return Err(Error::Config(format!(
                "quantile level must lie in [0, 1), got {quantile_level}"
            )));
        }
        Ok(Self {
            taus,
            k,
            quantile_level,
            sample_size,
            source_seed,
        })
    }

    /// Uncalibrated thresholds for unit tests and hand-built models.
    pub fn from_taus(taus: Vec<f64>) -> Result<Self> {
        let d = taus.len();
        Self::new(taus, d, 0.0, 0, 0)
    }

    pub fn d(&self) -> usize {
        self.taus.len()
    }

    pub(crate) fn select(&self, keep: &[usize]) -> Self {
        Self {
            taus: keep.iter().map(|&j| self.taus[j]).collect(),
            ..self.clone()
        }
    }
}

/// 1-based rank of the calibration value used as threshold: `floor(S (1 - k/d)) + 1`.
///
/// Computed in integer arithmetic so divisible sizes give the exact in-sample
/// activation fraction `k/d`.
pub fn threshold_rank(sample_size: usize, k: usize, d: usize) -> usize {
    (sample_size as u128 * (d - k) as u128 / d as u128) as usize + 1
}

/// Estimates `tau_j` as the `r`-th smallest calibration projection of unit `j`,
/// with `r = floor(S (1 - k/d)) + 1`.
pub fn estimate_thresholds(w: &ProjectionMatrix, calibration: &[Vec<f64>], k: usize) -> Result<ThresholdVector> {
    let s = calibration.len();
    if s < 2 {
        return Err(Error::Calibration(format!(
            "need at least 2 calibration inputs, got {s}"
        )));
    }
    let d = w.d();
    check_k(k, d)?;
    for u in calibration {
        w.check_input(u)?;
    }
    let rank = threshold_rank(s, k, d);
    let taus: Vec<f64> = (0..d)
        .into_par_iter()
        .map_init(
            || Vec::with_capacity(s),
            |values, j| {
                let row = w.row(j);
                values.clear();
                values.extend(calibration.iter().map(|u| dot(row, u)));
                let (_, tau, _) = values.select_nth_unstable_by(rank - 1, f64::total_cmp);
                *tau
            },
        )
        .collect();
    Ok(ThresholdVector {
        taus,
        k,
        quantile_level: (d - k) as f64 / d as f64,
        sample_size: s,
        source_seed: w.seed(),
    })
}

/// Sparse code over `d` units: sorted active indices with optional values.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseCode {
    d: usize,
    active: Vec<usize>,
    values: Option<Vec<f64>>,
}

impl SparseCode {
    pub fn new(d: usize, active: Vec<usize>, values: Option<Vec<f64>>) -> Result<Self> {
        if active.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Input("active indices must be strictly increasing".into()));
        }
        if let Some(&last) = active.last() {
            if last >= d {
                return Err(Error::Input(format!("active index {last} out of range for d = {d}")));
            }
        }
        if let Some(v) = &values {
            check_len(active.len(), v.len(), "sparse code values")?;
            check_finite(v, "sparse code values")?;
        }
        Ok(Self { d, active, values })
    }

    pub fn empty(d: usize) -> Self {
        Self {
            d,
            active: Vec::new(),
            values: None,
        }
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn active(&self) -> &[usize] {
        &self.active
    }

    pub fn values(&self) -> Option<&[f64]> {
        self.values.as_deref()
    }

    /// Number of active units.
    pub fn len(&self) -> usize {
        self.active.len()
    }

    pub fn is_empty(&self) -> bool {
        self.active.is_empty()
    }

    pub fn is_active(&self, j: usize) -> bool {
        self.active.binary_search(&j).is_ok()
    }

    /// Dense vector: the stored value, or 1 for binary codes, at active indices.
    pub fn to_dense(&self) -> Vec<f64> {
        let mut dense = vec![0.0; self.d];
        for (i, &j) in self.active.iter().enumerate() {
            dense[j] = self.values.as_ref().map_or(1.0, |v| v[i]);
        }
        dense
    }

    /// Active indices joined by `;`, for CSV debugging output.
    pub fn to_index_list(&self) -> String {
        let parts: Vec<String> = self.active.iter().map(usize::to_string).collect();
        parts.join(";")
    }
}

/// Unit `j` is active iff `p_j >= tau_j`.
pub fn sparsify_binary(p: &[f64], tau: &ThresholdVector) -> Result<SparseCode> {
    check_len(tau.d(), p.len(), "projection vs threshold length")?;
    Ok(binary_code(p, &tau.taus))
}

pub(crate) fn binary_code(p: &[f64], taus: &[f64]) -> SparseCode {
    let active = p
        .iter()
        .zip(taus)
        .enumerate()
        .filter(|(_, (x, t))| x >= t)
        .map(|(j, _)| j)
        .collect();
    SparseCode {
        d: p.len(),
        active,
        values: None,
    }
}

/// `ReLU(p - tau)`, keeping only strictly positive entries.
pub fn sparsify_relu(p: &[f64], tau: &ThresholdVector) -> Result<SparseCode> {
    check_len(tau.d(), p.len(), "projection vs threshold length")?;
    let (active, values) = p
        .iter()
        .zip(&tau.taus)
        .enumerate()
        .filter_map(|(j, (x, t))| {
            let v = x - t;
            (v > 0.0).then_some((j, v))
        })
        .unzip();
    Ok(SparseCode {
        d: p.len(),
        active,
        values: Some(values),
    })
}

/// Keeps exactly the `k` largest entries, ties broken toward the lowest index.
/// With `keep_values` the raw projection values are stored (they may be negative).
pub fn sparsify_topk(p: &[f64], k: usize, tie_rule: TieRule, keep_values: bool) -> Result<SparseCode> {
    check_k(k, p.len())?;
    check_finite(p, "projection")?;
    let TieRule::LowestIndex = tie_rule;
    // Larger value first; equal values ordered by index.
    let order = |&a: &usize, &b: &usize| -> Ordering { p[b].total_cmp(&p[a]).then(a.cmp(&b)) };
    let mut idx: Vec<usize> = (0..p.len()).collect();
    if k < idx.len() {
        idx.select_nth_unstable_by(k - 1, order);
        idx.truncate(k);
    }
    idx.sort_unstable();
    let values = keep_values.then(|| idx.iter().map(|&j| p[j]).collect());
    Ok(SparseCode {
        d: p.len(),
        active: idx,
        values,
    })
}

/// Drops each active unit independently with probability `rate`.
pub fn apply_dropout(code: &SparseCode, rate: f64, seed: u64) -> SparseCode {
    let mut rng = seeded_rng(seed);
    let mut active = Vec::with_capacity(code.len());
    let mut values = code.values.as_ref().map(|_| Vec::with_capacity(code.len()));
    for (i, &j) in code.active.iter().enumerate() {
        if rng.random::<f64>() >= rate {
            active.push(j);
            if let (Some(out), Some(src)) = (values.as_mut(), code.values.as_ref()) {
                out.push(src[i]);
            }
        }
    }
    SparseCode {
        d: code.d,
        active,
        values,
    }
}

/// Binary code of `u` under `(W, tau)`.
pub fn encode(w: &ProjectionMatrix, tau: &ThresholdVector, u: &[f64]) -> Result<SparseCode> {
    check_len(w.d(), tau.d(), "threshold vector vs projection rows")?;
    let p = w.project(u)?;
    Ok(binary_code(&p, &tau.taus))
}

/// Binary codes of many inputs, in input order.
pub fn encode_batch(w: &ProjectionMatrix, tau: &ThresholdVector, inputs: &[Vec<f64>]) -> Result<Vec<SparseCode>> {
    check_len(w.d(), tau.d(), "threshold vector vs projection rows")?;
    for u in inputs {
        w.check_input(u)?;
    }
    Ok(inputs
        .par_iter()
        .map_init(
            || vec![0.0; w.d()],
            |p, u| {
                w.project_into(u, p);
                binary_code(p, &tau.taus)
            },
        )
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparsityStats {
    pub mean_active: f64,
    /// Population standard deviation of the active count.
    pub std_active: f64,
    pub per_unit_activation_rate: Vec<f64>,
}

/// Active-count statistics of the binary codes of `eval_inputs`.
pub fn measure_sparsity(
    w: &ProjectionMatrix,
    tau: &ThresholdVector,
    eval_inputs: &[Vec<f64>],
) -> Result<SparsityStats> {
    if eval_inputs.is_empty() {
        return Err(Error::Input("sparsity evaluation needs at least one input".into()));
    }
    let codes = encode_batch(w, tau, eval_inputs)?;
    let count = codes.len() as f64;
    let mut per_unit = vec![0u64; w.d()];
    for code in &codes {
        for &j in code.active() {
            per_unit[j] += 1;
        }
    }
    let sizes: Vec<f64> = codes.iter().map(|c| c.len() as f64).collect();
    let (mean_active, std_active) = mean_and_std(&sizes);
    Ok(SparsityStats {
        mean_active,
        std_active,
        per_unit_activation_rate: per_unit.into_iter().map(|c| c as f64 / count).collect(),
    })
}
