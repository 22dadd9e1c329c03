//! The random expansion matrix and its application to inputs.
//!
//! Rows are generated from a counter-based stream keyed by `(seed, row_id)`, so
//! any subset of rows (for instance what survives pruning) can be regenerated
//! from the seed alone. Inner products are always accumulated in `f64`,
//! left to right, through [`dot`]; every code path that projects an input goes
//! through that function, which keeps batch and per-vector results bit-identical.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_finite, check_len, Error, Result};
use crate::rng::{derive_seed, seeded_rng, CounterStream};

/// Distribution of each row of the projection matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RowDistribution {
    /// i.i.d. zero-mean Gaussian entries with standard deviation `sigma`.
    Gaussian { sigma: f64 },
    /// Gaussian rows normalized to unit Euclidean norm.
    UnitSphere,
    /// Rows supplied by the caller; cannot be regenerated from a seed.
    Explicit,
}

impl RowDistribution {
    /// Gaussian with `sigma = 1/sqrt(n)`: unit-norm inputs project to unit-variance entries.
    pub fn default_gaussian(n: usize) -> Self {
        RowDistribution::Gaussian {
            sigma: 1.0 / (n.max(1) as f64).sqrt(),
        }
    }

    /// Parses `gaussian`, `gaussian:<sigma>` or `unit_sphere`. Plain `gaussian`
    /// resolves to [`RowDistribution::default_gaussian`] for dimension `n`.
    pub fn parse(tag: &str, n: usize) -> Result<Self> {
        let tag = tag.trim();
        match tag {
            "gaussian" => Ok(Self::default_gaussian(n)),
            "unit_sphere" => Ok(RowDistribution::UnitSphere),
            _ => {
                let sigma = tag
                    .strip_prefix("gaussian:")
                    .and_then(|s| s.parse::<f64>().ok())
                    .ok_or_else(|| Error::Config(format!("unknown row distribution `{tag}`")))?;
                let dist = RowDistribution::Gaussian { sigma };
                dist.validate()?;
                Ok(dist)
            }
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            RowDistribution::Gaussian { sigma } if !(sigma > 0.0 && sigma.is_finite()) => Err(Error::Config(format!(
                "gaussian sigma must be positive and finite, got {sigma}"
            ))),
            _ => Ok(()),
        }
    }
}

impl fmt::Display for RowDistribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RowDistribution::Gaussian { sigma } => write!(f, "gaussian:{sigma}"),
            RowDistribution::UnitSphere => f.write_str("unit_sphere"),
            RowDistribution::Explicit => f.write_str("explicit"),
        }
    }
}

impl FromStr for RowDistribution {
    type Err = Error;

    /// Like [`RowDistribution::parse`] but requires an explicit sigma for Gaussian rows.
    fn from_str(s: &str) -> Result<Self> {
        if s.trim() == "gaussian" {
            return Err(Error::Config(
                "`gaussian` needs a dimension to pick its default sigma; use gaussian:<sigma>".into(),
            ));
        }
        Self::parse(s, 1)
    }
}

/// Inner product accumulated left to right in `f64`.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// The `d x n` matrix whose rows are the random directions, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionMatrix {
    n: usize,
    dist: RowDistribution,
    seed: u64,
    /// Position of each row in the original seeded sequence.
    row_ids: Vec<u64>,
    weights: Vec<f64>,
}

/// Summary of `|cos|` between distinct rows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coherence {
    pub max_abs_cosine: f64,
    pub mean_abs_cosine: f64,
    pub pairs: usize,
    pub exhaustive: bool,
}

fn generate_row(n: usize, dist: RowDistribution, seed: u64, row_id: u64, out: &mut [f64]) {
    let mut stream = CounterStream::new(derive_seed(seed, row_id));
    match dist {
        RowDistribution::Gaussian { sigma } => {
            for w in out.iter_mut() {
                *w = sigma * stream.next_normal();
            }
        }
        RowDistribution::UnitSphere => loop {
            for w in out.iter_mut() {
                *w = stream.next_normal();
            }
            let norm = dot(out, out).sqrt();
            if norm > 0.0 {
                out.iter_mut().for_each(|w| *w /= norm);
                break;
            }
        },
        RowDistribution::Explicit => unreachable!("explicit rows are never generated"),
    }
    debug_assert_eq!(out.len(), n);
}

impl ProjectionMatrix {
    /// Draws `d` rows in `R^n`. Row `j` depends only on `(seed, j)`.
    pub fn sample(n: usize, d: usize, dist: RowDistribution, seed: u64) -> Result<Self> {
        if n == 0 || d == 0 {
            return Err(Error::Config(format!(
                "projection dimensions must be positive (n = {n}, d = {d})"
            )));
        }
        dist.validate()?;
        if dist == RowDistribution::Explicit {
            return Err(Error::Config("explicit rows cannot be sampled".into()));
        }
        let row_ids: Vec<u64> = (0..d as u64).collect();
        Ok(Self::generate(n, dist, seed, row_ids))
    }

    fn generate(n: usize, dist: RowDistribution, seed: u64, row_ids: Vec<u64>) -> Self {
        let mut weights = vec![0.0; row_ids.len() * n];
        weights
            .par_chunks_mut(n)
            .zip(row_ids.par_iter())
            .for_each(|(row, &id)| generate_row(n, dist, seed, id, row));
        Self {
            n,
            dist,
            seed,
            row_ids,
            weights,
        }
    }

    /// Wraps caller-supplied rows.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let d = rows.len();
        let n = rows.first().map_or(0, Vec::len);
        if n == 0 || d == 0 {
            return Err(Error::Config(
                "explicit projection needs at least one non-empty row".into(),
            ));
        }
        let mut weights = Vec::with_capacity(n * d);
        for row in &rows {
            check_len(n, row.len(), "projection row length")?;
            check_finite(row, "projection row")?;
            weights.extend_from_slice(row);
        }
        Ok(Self {
            n,
            dist: RowDistribution::Explicit,
            seed: 0,
            row_ids: (0..d as u64).collect(),
            weights,
        })
    }

    /// Reassembles a matrix from stored parts (model files).
    pub fn from_parts(
        n: usize,
        dist: RowDistribution,
        seed: u64,
        row_ids: Vec<u64>,
        weights: Vec<f64>,
    ) -> Result<Self> {
        if n == 0 || row_ids.is_empty() {
            return Err(Error::Config("projection dimensions must be positive".into()));
        }
        dist.validate()?;
        check_len(n * row_ids.len(), weights.len(), "projection weights")?;
        check_finite(&weights, "projection weights")?;
        Ok(Self {
            n,
            dist,
            seed,
            row_ids,
            weights,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.row_ids.len()
    }

    pub fn dist(&self) -> RowDistribution {
        self.dist
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn row_ids(&self) -> &[u64] {
        &self.row_ids
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.weights[j * self.n..(j + 1) * self.n]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.weights.chunks_exact(self.n)
    }

    /// Regenerates the same rows from `(n, dist, seed, row_ids)`.
    /// Returns `None` for explicit matrices.
    pub fn regenerate(&self) -> Option<Self> {
        match self.dist {
            RowDistribution::Explicit => None,
            dist => Some(Self::generate(self.n, dist, self.seed, self.row_ids.clone())),
        }
    }

    /// Keeps the rows at `keep` (in the given order), preserving their ids.
    pub fn select_rows(&self, keep: &[usize]) -> Self {
        let mut weights = Vec::with_capacity(keep.len() * self.n);
        for &j in keep {
            weights.extend_from_slice(self.row(j));
        }
        Self {
            n: self.n,
            dist: self.dist,
            seed: self.seed,
            row_ids: keep.iter().map(|&j| self.row_ids[j]).collect(),
            weights,
        }
    }

    pub(crate) fn check_input(&self, u: &[f64]) -> Result<()> {
        check_len(self.n, u.len(), "input dimension")?;
        check_finite(u, "input")
    }

    /// Writes `W u` into `out` without validating `u`.
    pub(crate) fn project_into(&self, u: &[f64], out: &mut [f64]) {
        for (o, row) in out.iter_mut().zip(self.rows()) {
            *o = dot(row, u);
        }
    }

    /// `W u`: entry `j` is the inner product of row `j` with `u`.
    pub fn project(&self, u: &[f64]) -> Result<Vec<f64>> {
        self.check_input(u)?;
        let mut out = vec![0.0; self.d()];
        self.project_into(u, &mut out);
        Ok(out)
    }

    pub fn project_batch(&self, inputs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        for u in inputs {
            self.check_input(u)?;
        }
        Ok(inputs
            .par_iter()
            .map(|u| {
                let mut out = vec![0.0; self.d()];
                self.project_into(u, &mut out);
                out
            })
            .collect())
    }

    /// Statistics of `|cos|` between distinct rows. Exhaustive when the number of
    /// distinct pairs is at most `sample_pairs`; otherwise `sample_pairs` pairs are
    /// drawn with `seed`.
    pub fn pairwise_coherence(&self, sample_pairs: usize, seed: u64) -> Result<Coherence> {
        let d = self.d();
        if d < 2 {
            return Err(Error::Config("coherence needs at least two rows".into()));
        }
        if sample_pairs == 0 {
            return Err(Error::Config("sample_pairs must be at least 1".into()));
        }
        let norms: Vec<f64> = self.rows().map(|r| dot(r, r).sqrt()).collect();
        let cosine = |i: usize, j: usize| {
            let denom = norms[i] * norms[j];
            if denom == 0.0 {
                0.0
            } else {
                (dot(self.row(i), self.row(j)) / denom).abs()
            }
        };
        let total_pairs = d * (d - 1) / 2;
        let exhaustive = total_pairs <= sample_pairs;
        let values: Vec<f64> = if exhaustive {
            (0..d)
                .into_par_iter()
                .flat_map_iter(|i| ((i + 1)..d).map(move |j| (i, j)))
                .map(|(i, j)| cosine(i, j))
                .collect()
        } else {
            let mut rng = seeded_rng(seed);
            let pairs: Vec<(usize, usize)> = (0..sample_pairs)
                .map(|_| {
                    let i = rng.random_range(0..d);
                    let mut j = rng.random_range(0..d - 1);
                    if j >= i {
                        j += 1;
                    }
                    (i, j)
                })
                .collect();
            pairs.par_iter().map(|&(i, j)| cosine(i, j)).collect()
        };
        let max_abs_cosine = values.iter().copied().fold(0.0, f64::max);
        let mean_abs_cosine = values.iter().sum::<f64>() / values.len() as f64;
        Ok(Coherence {
            max_abs_cosine,
            mean_abs_cosine,
            pairs: values.len(),
            exhaustive,
        })
    }
}
