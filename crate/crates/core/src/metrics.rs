//! Locality-sensitivity diagnostics for sparse codes and a greedy probe that
//! searches for small input perturbations with large code changes.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_finite, check_len, Error, Result};
use crate::projection::{dot, ProjectionMatrix};
use crate::rng::{derive_seed, seeded_rng};
use crate::sparsifier::{binary_code, sparsify_topk, SparseCode, ThresholdVector, TieRule};
use crate::stats::mean_and_std;

/// `|active(a) ∩ active(b)|`, the dot product of the two binary codes.
pub fn code_overlap(a: &SparseCode, b: &SparseCode) -> Result<usize> {
    check_len(a.d(), b.d(), "code dimension")?;
    let (mut i, mut j, mut shared) = (0, 0, 0);
    let (x, y) = (a.active(), b.active());
    while i < x.len() && j < y.len() {
        match x[i].cmp(&y[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                shared += 1;
                i += 1;
                j += 1;
            }
        }
    }
    Ok(shared)
}

/// Number of units whose binary state differs.
pub fn code_hamming(a: &SparseCode, b: &SparseCode) -> Result<usize> {
    Ok(a.len() + b.len() - 2 * code_overlap(a, b)?)
}

/// How inputs are turned into binary codes for the overlap statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CodeRule {
    /// Per-unit thresholds; the active count varies between inputs.
    Threshold { thresholds: ThresholdVector },
    /// Exactly `k` active units per input.
    TopK { k: usize },
}

impl CodeRule {
    fn validate(&self, w: &ProjectionMatrix) -> Result<()> {
        match self {
            CodeRule::Threshold { thresholds } => {
                check_len(w.d(), thresholds.d(), "threshold vector vs projection rows")
            }
            CodeRule::TopK { k } if *k == 0 || *k > w.d() => Err(Error::Config(format!(
                "top-k needs 1 <= k <= d (k = {k}, d = {})",
                w.d()
            ))),
            CodeRule::TopK { .. } => Ok(()),
        }
    }

    /// Code of an already projected vector.
    pub fn code_of_projection(&self, p: &[f64]) -> SparseCode {
        match self {
            CodeRule::Threshold { thresholds } => binary_code(p, &thresholds.taus),
            CodeRule::TopK { k } => sparsify_topk(p, *k, TieRule::LowestIndex, false).expect("k validated against d"),
        }
    }

    pub fn encode(&self, w: &ProjectionMatrix, u: &[f64]) -> Result<SparseCode> {
        self.validate(w)?;
        Ok(self.code_of_projection(&w.project(u)?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverlapBin {
    pub lo: f64,
    pub hi: f64,
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

impl OverlapBin {
    pub fn standard_error(&self) -> f64 {
        self.std / (self.count as f64).sqrt()
    }
}

/// Code-overlap statistics per input-distance bin, ordered by distance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapProfile {
    pub bins: Vec<OverlapBin>,
}

impl OverlapProfile {
    pub const CSV_HEADER: &'static str = "bin_lo,bin_hi,mean,std,count";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for b in &self.bins {
            out.push_str(&format!("{},{},{},{},{}\n", b.lo, b.hi, b.mean, b.std, b.count));
        }
        out
    }
}

/// Uniform direction on the unit sphere in `R^n`.
pub fn random_unit_direction<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let norm = dot(&v, &v).sqrt();
        if norm > 0.0 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Mean overlap between codes of `u` and `u + eps * dir` for each radius `eps`,
/// with `dir` uniform on the sphere. Radii must be non-negative and strictly
/// increasing; each bin is the degenerate interval `[eps, eps]`.
pub fn similarity_profile(
    w: &ProjectionMatrix,
    rule: &CodeRule,
    base_inputs: &[Vec<f64>],
    radii: &[f64],
    pairs_per_radius: usize,
    seed: u64,
) -> Result<OverlapProfile> {
    if base_inputs.is_empty() {
        return Err(Error::Input("similarity profile needs at least one base input".into()));
    }
    if pairs_per_radius == 0 {
        return Err(Error::Config("pairs_per_radius must be at least 1".into()));
    }
    check_finite(radii, "radii")?;
    if radii.iter().any(|&r| r < 0.0) || radii.windows(2).any(|p| p[0] >= p[1]) {
        return Err(Error::Config(
            "radii must be non-negative and strictly increasing".into(),
        ));
    }
    rule.validate(w)?;
    for u in base_inputs {
        w.check_input(u)?;
    }
    let n = w.n();
    let mut bins = Vec::with_capacity(radii.len());
    for (b, &eps) in radii.iter().enumerate() {
        let bin_seed = derive_seed(seed, b as u64);
        let overlaps: Vec<f64> = (0..pairs_per_radius)
            .into_par_iter()
            .map_init(
                || vec![0.0; w.d()],
                |p, pair| {
                    let mut rng = seeded_rng(derive_seed(bin_seed, pair as u64));
                    let u = &base_inputs[rng.random_range(0..base_inputs.len())];
                    let dir = random_unit_direction(n, &mut rng);
                    let moved: Vec<f64> = u.iter().zip(&dir).map(|(x, e)| x + eps * e).collect();
                    w.project_into(u, p);
                    let a = rule.code_of_projection(p);
                    w.project_into(&moved, p);
                    let b = rule.code_of_projection(p);
                    code_overlap(&a, &b).expect("same d") as f64
                },
            )
            .collect();
        let (mean, std) = mean_and_std(&overlaps);
        bins.push(OverlapBin {
            lo: eps,
            hi: eps,
            mean,
            std,
            count: overlaps.len(),
        });
    }
    Ok(OverlapProfile { bins })
}

/// Overlap between codes of two distinct, independently chosen inputs.
pub fn independent_overlap(
    w: &ProjectionMatrix,
    rule: &CodeRule,
    inputs: &[Vec<f64>],
    pairs: usize,
    seed: u64,
) -> Result<OverlapBin> {
    if inputs.len() < 2 {
        return Err(Error::Input("independent overlap needs at least two inputs".into()));
    }
    rule.validate(w)?;
    let codes: Vec<SparseCode> = inputs.par_iter().map(|u| rule.encode(w, u)).collect::<Result<_>>()?;
    let mut rng = seeded_rng(seed);
    let overlaps: Vec<f64> = (0..pairs)
        .map(|_| {
            let i = rng.random_range(0..codes.len());
            let mut j = rng.random_range(0..codes.len() - 1);
            if j >= i {
                j += 1;
            }
            code_overlap(&codes[i], &codes[j]).expect("same d") as f64
        })
        .collect();
    let (mean, std) = mean_and_std(&overlaps);
    Ok(OverlapBin {
        lo: f64::INFINITY,
        hi: f64::INFINITY,
        mean,
        std,
        count: pairs,
    })
}

/// Signed input-space distance from `u` to unit `j`'s activation boundary:
/// positive when the unit is inactive (how far `u` must move to switch it on).
pub fn threshold_margin(w: &ProjectionMatrix, tau: &ThresholdVector, u: &[f64], j: usize) -> Result<f64> {
    w.check_input(u)?;
    let row = w.row(j);
    let norm = dot(row, row).sqrt();
    if norm == 0.0 {
        return Err(Error::Input(format!("row {j} is zero")));
    }
    Ok((tau.taus[j] - dot(row, u)) / norm)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeResult {
    pub perturbed: Vec<f64>,
    pub input_distance: f64,
    pub code_hamming: usize,
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Greedy coordinate search: each step moves one coordinate by `±step`, choosing
/// the move that flips the most code bits (relative to the code of `u`) per unit
/// of step length; ties go to the move that stays closest to `u`, then to the
/// first candidate in a seeded scan order.
pub fn adversarial_probe(
    w: &ProjectionMatrix,
    tau: &ThresholdVector,
    u: &[f64],
    step: f64,
    max_steps: usize,
    seed: u64,
) -> Result<ProbeResult> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::Config(format!("probe step must be positive, got {step}")));
    }
    check_len(w.d(), tau.d(), "threshold vector vs projection rows")?;
    let mut p = w.project(u)?;
    let (n, d) = (w.n(), w.d());
    let taus = &tau.taus;
    let original: Vec<bool> = p.iter().zip(taus).map(|(x, t)| x >= t).collect();
    let mut current = u.to_vec();
    let mut hamming = 0usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeded_rng(seed));
    let weights = w.weights();

    for _ in 0..max_steps {
        // (flip gain, resulting distance, coordinate, signed step)
        let mut best: Option<(f64, f64, usize, f64)> = None;
        for &i in &order {
            for delta in [step, -step] {
                let flipped = (0..d)
                    .filter(|&j| (p[j] + delta * weights[j * n + i] >= taus[j]) != original[j])
                    .count();
                let gain = (flipped as f64 - hamming as f64) / step;
                current[i] += delta;
                let dist = euclidean(&current, u);
                current[i] -= delta;
                let better = match best {
                    None => true,
                    Some((g, dd, _, _)) => gain > g || (gain == g && dist < dd),
                };
                if better {
                    best = Some((gain, dist, i, delta));
                }
            }
        }
        let Some((_, _, i, delta)) = best else { break };
        current[i] += delta;
        w.project_into(&current, &mut p);
        hamming = p
            .iter()
            .zip(taus)
            .zip(&original)
            .filter(|((x, t), &o)| (*x >= *t) != o)
            .count();
    }
    Ok(ProbeResult {
        input_distance: euclidean(&current, u),
        perturbed: current,
        code_hamming: hamming,
    })
}

/// Baseline for the probe: a uniformly random direction at exactly `distance` from `u`.
pub fn random_direction_probe(
    w: &ProjectionMatrix,
    tau: &ThresholdVector,
    u: &[f64],
    distance: f64,
    seed: u64,
) -> Result<ProbeResult> {
    check_len(w.d(), tau.d(), "threshold vector vs projection rows")?;
    let before = binary_code(&w.project(u)?, &tau.taus);
    let dir = random_unit_direction(w.n(), &mut seeded_rng(seed));
    let moved: Vec<f64> = u.iter().zip(&dir).map(|(x, e)| x + distance * e).collect();
    let after = binary_code(&w.project(&moved)?, &tau.taus);
    Ok(ProbeResult {
        input_distance: euclidean(&moved, u),
        perturbed: moved,
        code_hamming: code_hamming(&before, &after)?,
    })
}
