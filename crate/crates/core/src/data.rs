//! Synthetic manifold-supported datasets, target functions, label scrambling
//! and CSV ingestion/export.

use std::f64::consts::TAU;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_finite, Error, Result};
use crate::projection::dot;
use crate::rng::{derive_seed, seeded_rng};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingKind {
    /// Random finite trigonometric series in the latent coordinates.
    #[default]
    RandomTrig,
    /// `(cos 2πt, sin 2πt, 0, ...)`; requires `m = 1`.
    Circle,
}

/// An `m`-dimensional smooth submanifold of `R^n`, parameterized by latent
/// coordinates on the torus `[0, 1)^m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifoldSpec {
    pub m: usize,
    pub n: usize,
    pub embedding_seed: u64,
    /// Trigonometric components per ambient coordinate.
    pub frequency_count: usize,
    /// Root-mean-square norm of the embedded points.
    pub amplitude: f64,
    #[serde(default = "default_max_frequency")]
    pub max_frequency: u32,
    #[serde(default)]
    pub embedding: EmbeddingKind,
}

fn default_max_frequency() -> u32 {
    2
}

impl ManifoldSpec {
    pub fn random_trig(m: usize, n: usize, embedding_seed: u64) -> Self {
        Self {
            m,
            n,
            embedding_seed,
            frequency_count: 3,
            amplitude: 1.0,
            max_frequency: default_max_frequency(),
            embedding: EmbeddingKind::RandomTrig,
        }
    }

    pub fn circle(n: usize) -> Self {
        Self {
            m: 1,
            n,
            embedding_seed: 0,
            frequency_count: 1,
            amplitude: 1.0,
            max_frequency: 1,
            embedding: EmbeddingKind::Circle,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.m >= self.n {
            return Err(Error::Config(format!(
                "manifold needs 1 <= m < n (m = {}, n = {})",
                self.m, self.n
            )));
        }
        if self.frequency_count == 0 || self.max_frequency == 0 {
            return Err(Error::Config(
                "frequency_count and max_frequency must be positive".into(),
            ));
        }
        if !(self.amplitude > 0.0 && self.amplitude.is_finite()) {
            return Err(Error::Config(format!(
                "amplitude must be positive, got {}",
                self.amplitude
            )));
        }
        if self.embedding == EmbeddingKind::Circle && self.m != 1 {
            return Err(Error::Config("the circle embedding has m = 1".into()));
        }
        Ok(())
    }

    /// Builds the embedding map described by this spec.
    pub fn embedding(&self) -> Result<Embedding> {
        self.validate()?;
        if self.embedding == EmbeddingKind::Circle {
            return Ok(Embedding {
                m: 1,
                n: self.n,
                terms: vec![
                    vec![Term {
                        amplitude: self.amplitude,
                        frequency: vec![1],
                        phase: 0.0,
                    }],
                    vec![Term {
                        amplitude: self.amplitude,
                        frequency: vec![1],
                        phase: -TAU / 4.0,
                    }],
                ]
                .into_iter()
                .chain(std::iter::repeat_with(Vec::new))
                .take(self.n)
                .collect(),
            });
        }
        let mut rng = seeded_rng(self.embedding_seed);
        let amp = self.amplitude * (2.0 / (self.n * self.frequency_count) as f64).sqrt();
        let fmax = self.max_frequency as i32;
        let terms = (0..self.n)
            .map(|i| {
                (0..self.frequency_count)
                    .map(|c| {
                        // The first term of coordinate i has unit frequency along latent
                        // axis i mod m, which makes the map injective on the torus.
                        let frequency = if c == 0 {
                            (0..self.m).map(|a| i32::from(a == i % self.m)).collect()
                        } else {
                            loop {
                                let f: Vec<i32> = (0..self.m).map(|_| rng.random_range(-fmax..=fmax)).collect();
                                if f.iter().any(|&x| x != 0) {
                                    break f;
                                }
                            }
                        };
                        Term {
                            amplitude: amp,
                            frequency,
                            phase: rng.random_range(0.0..TAU),
                        }
                    })
                    .collect()
            })
            .collect();
        Ok(Embedding {
            m: self.m,
            n: self.n,
            terms,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Term {
    amplitude: f64,
    frequency: Vec<i32>,
    phase: f64,
}

/// Smooth map from latent coordinates to `R^n`.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    m: usize,
    n: usize,
    terms: Vec<Vec<Term>>,
}

impl Embedding {
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Coordinate `i` is `sum_c a_c cos(2π <f_c, t> + φ_c)`.
    pub fn embed(&self, latent: &[f64]) -> Vec<f64> {
        assert_eq!(latent.len(), self.m);
        self.terms
            .iter()
            .map(|coord| {
                coord
                    .iter()
                    .map(|t| {
                        let arg: f64 = t.frequency.iter().zip(latent).map(|(&f, &x)| f as f64 * x).sum();
                        t.amplitude * (TAU * arg + t.phase).cos()
                    })
                    .sum()
            })
            .collect()
    }
}

/// Points on a manifold with the latent coordinates they were generated from.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifoldSample {
    pub latents: Vec<Vec<f64>>,
    pub points: Vec<Vec<f64>>,
}

/// Draws latent coordinates uniformly on `[0, 1)^m` and embeds them.
pub fn sample_manifold(spec: &ManifoldSpec, count: usize, seed: u64) -> Result<ManifoldSample> {
    if count == 0 {
        return Err(Error::Config("sample count must be at least 1".into()));
    }
    let embedding = spec.embedding()?;
    let mut rng = seeded_rng(seed);
    let latents: Vec<Vec<f64>> = (0..count)
        .map(|_| (0..spec.m).map(|_| rng.random::<f64>()).collect())
        .collect();
    let points = latents.iter().map(|t| embedding.embed(t)).collect();
    Ok(ManifoldSample { latents, points })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetTag {
    LipschitzTrig,
    RegionConstant { regions: usize },
    Linear,
}

impl FromStr for TargetTag {
    type Err = Error;

    /// `lipschitz_trig`, `linear`, `region_constant` (8 regions) or `region_constant:<regions>`.
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "lipschitz_trig" => Ok(TargetTag::LipschitzTrig),
            "linear" => Ok(TargetTag::Linear),
            "region_constant" => Ok(TargetTag::RegionConstant { regions: 8 }),
            other => other
                .strip_prefix("region_constant:")
                .and_then(|r| r.parse().ok())
                .filter(|&r: &usize| r > 0)
                .map(|regions| TargetTag::RegionConstant { regions })
                .ok_or_else(|| Error::Config(format!("unknown target tag `{other}`"))),
        }
    }
}

impl fmt::Display for TargetTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TargetTag::LipschitzTrig => f.write_str("lipschitz_trig"),
            TargetTag::Linear => f.write_str("linear"),
            TargetTag::RegionConstant { regions } => write!(f, "region_constant:{regions}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum TargetKind {
    Linear {
        weights: Vec<f64>,
    },
    Trig {
        amplitudes: Vec<f64>,
        frequencies: Vec<Vec<f64>>,
        phases: Vec<f64>,
    },
    RegionConstant {
        centers: Vec<Vec<f64>>,
        values: Vec<f64>,
    },
}

/// A deterministic scalar function on `R^n`.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetFunction {
    kind: TargetKind,
    lipschitz: Option<f64>,
}

const TRIG_COMPONENTS: usize = 4;

impl TargetFunction {
    pub fn linear(weights: Vec<f64>) -> Self {
        let lipschitz = Some(dot(&weights, &weights).sqrt());
        Self {
            kind: TargetKind::Linear { weights },
            lipschitz,
        }
    }

    /// Piecewise constant: the value of the nearest center (lowest index on ties).
    pub fn region_constant(centers: Vec<Vec<f64>>, values: Vec<f64>) -> Result<Self> {
        if centers.is_empty() || centers.len() != values.len() {
            return Err(Error::Config("region_constant needs one value per center".into()));
        }
        Ok(Self {
            kind: TargetKind::RegionConstant { centers, values },
            lipschitz: None,
        })
    }

    pub fn eval(&self, u: &[f64]) -> f64 {
        match &self.kind {
            TargetKind::Linear { weights } => dot(weights, u),
            TargetKind::Trig {
                amplitudes,
                frequencies,
                phases,
            } => amplitudes
                .iter()
                .zip(frequencies)
                .zip(phases)
                .map(|((a, b), c)| a * (dot(b, u) + c).sin())
                .sum(),
            TargetKind::RegionConstant { centers, values } => {
                let mut best = (0, f64::INFINITY);
                for (i, c) in centers.iter().enumerate() {
                    let dist: f64 = c.iter().zip(u).map(|(x, y)| (x - y).powi(2)).sum();
                    if dist < best.1 {
                        best = (i, dist);
                    }
                }
                values[best.0]
            }
        }
    }

    /// Analytic Lipschitz constant, when the function has one.
    pub fn lipschitz_constant(&self) -> Option<f64> {
        self.lipschitz
    }
}

/// Builds a seeded target function on the ambient space of `spec`.
pub fn make_target(tag: TargetTag, spec: &ManifoldSpec, seed: u64) -> Result<TargetFunction> {
    spec.validate()?;
    let n = spec.n;
    let mut rng = seeded_rng(seed);
    let mut gaussian = |count: usize, scale: f64| -> Vec<f64> {
        (0..count)
            .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
            .collect()
    };
    Ok(match tag {
        TargetTag::Linear => {
            let w = gaussian(n, 1.0);
            let norm = dot(&w, &w).sqrt();
            TargetFunction::linear(w.into_iter().map(|x| x / norm).collect())
        }
        TargetTag::LipschitzTrig => {
            // Frequency vectors of norm about 2 relative to unit-scale inputs.
            let frequencies: Vec<Vec<f64>> = (0..TRIG_COMPONENTS)
                .map(|_| gaussian(n, 2.0 / (n as f64).sqrt()))
                .collect();
            let phases = gaussian(TRIG_COMPONENTS, TAU);
            let amplitudes = vec![1.0 / TRIG_COMPONENTS as f64; TRIG_COMPONENTS];
            let lipschitz = amplitudes
                .iter()
                .zip(&frequencies)
                .map(|(a, b)| a.abs() * dot(b, b).sqrt())
                .sum();
            TargetFunction {
                kind: TargetKind::Trig {
                    amplitudes,
                    frequencies,
                    phases,
                },
                lipschitz: Some(lipschitz),
            }
        }
        TargetTag::RegionConstant { regions } => {
            if regions == 0 {
                return Err(Error::Config("region_constant needs at least one region".into()));
            }
            let centers = sample_manifold(spec, regions, derive_seed(seed, 1))?.points;
            let values = uniform_values(derive_seed(seed, 2), regions);
            TargetFunction::region_constant(centers, values)?
        }
    })
}

fn uniform_values(seed: u64, count: usize) -> Vec<f64> {
    let mut rng = seeded_rng(seed);
    (0..count).map(|_| rng.random_range(-1.0..1.0)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Regression(Vec<f64>),
    Classification { labels: Vec<usize>, classes: usize },
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Regression(v) => v.len(),
            Targets::Classification { labels, .. } => labels.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    #[default]
    Regression,
    Classification,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Provenance {
    Synthetic { spec: ManifoldSpec, target: String },
    Csv { path: PathBuf, columns: ColumnMap },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Vec<Vec<f64>>,
    pub targets: Targets,
    /// Latent manifold coordinates of synthetic points (never fed to models).
    pub latents: Option<Vec<Vec<f64>>>,
    pub provenance: Provenance,
    pub seed: u64,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn n(&self) -> usize {
        self.inputs.first().map_or(0, Vec::len)
    }

    pub fn regression_targets(&self) -> Result<&[f64]> {
        match &self.targets {
            Targets::Regression(v) => Ok(v),
            Targets::Classification { .. } => Err(Error::DatasetKind("expected a regression dataset".into())),
        }
    }

    pub fn labels(&self) -> Result<(&[usize], usize)> {
        match &self.targets {
            Targets::Classification { labels, classes } => Ok((labels, *classes)),
            Targets::Regression(_) => Err(Error::DatasetKind("expected a classification dataset".into())),
        }
    }

    /// Writes the dataset in the ingestion format: header `x0,...,x{n-1},target`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv_string()).map_err(|e| Error::io(path, e))
    }

    pub fn to_csv_string(&self) -> String {
        let n = self.n();
        let mut out: Vec<String> = (0..n).map(|i| format!("x{i}")).collect();
        out.push("target".into());
        let mut text = out.join(",");
        text.push('\n');
        for (i, u) in self.inputs.iter().enumerate() {
            let mut cells: Vec<String> = u.iter().map(f64::to_string).collect();
            cells.push(match &self.targets {
                Targets::Regression(v) => v[i].to_string(),
                Targets::Classification { labels, .. } => labels[i].to_string(),
            });
            text.push_str(&cells.join(","));
            text.push('\n');
        }
        text
    }
}

/// Manifold points with regression targets `f(u)`.
pub fn synthetic_regression(spec: &ManifoldSpec, target: &TargetFunction, count: usize, seed: u64) -> Result<Dataset> {
    let sample = sample_manifold(spec, count, seed)?;
    let targets = sample.points.iter().map(|u| target.eval(u)).collect();
    Ok(Dataset {
        inputs: sample.points,
        targets: Targets::Regression(targets),
        latents: Some(sample.latents),
        provenance: Provenance::Synthetic {
            spec: spec.clone(),
            target: "regression".into(),
        },
        seed,
    })
}

/// Manifold points labeled by which of `classes` equal bands of the first latent
/// coordinate they fall in.
pub fn synthetic_classification(spec: &ManifoldSpec, count: usize, classes: usize, seed: u64) -> Result<Dataset> {
    if classes == 0 {
        return Err(Error::Config("class count must be positive".into()));
    }
    let sample = sample_manifold(spec, count, seed)?;
    let labels = sample
        .latents
        .iter()
        .map(|t| ((t[0] * classes as f64) as usize).min(classes - 1))
        .collect();
    Ok(Dataset {
        inputs: sample.points,
        targets: Targets::Classification { labels, classes },
        latents: Some(sample.latents),
        provenance: Provenance::Synthetic {
            spec: spec.clone(),
            target: format!("bands:{classes}"),
        },
        seed,
    })
}

/// Replaces every label by an i.i.d. uniform draw from the label alphabet.
pub fn scramble_labels(ds: &Dataset, seed: u64) -> Result<Dataset> {
    let (labels, classes) = ds.labels()?;
    let mut rng = seeded_rng(seed);
    let scrambled = labels.iter().map(|_| rng.random_range(0..classes)).collect();
    Ok(Dataset {
        targets: Targets::Classification {
            labels: scrambled,
            classes,
        },
        seed,
        ..ds.clone()
    })
}

/// Which CSV columns hold features and target.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ColumnMap {
    /// Feature column names; empty means every column except the target.
    #[serde(default)]
    pub features: Vec<String>,
    pub target: String,
    #[serde(default)]
    pub kind: DatasetKind,
    /// Rescale each feature column to mean 0 and variance 1.
    #[serde(default)]
    pub standardize: bool,
}

impl ColumnMap {
    pub fn regression(target: &str) -> Self {
        Self {
            target: target.into(),
            ..Self::default()
        }
    }
}

/// Reads a UTF-8, comma-separated file with a header row.
///
/// Error locations use 1-based file rows (the header is row 1) and 1-based columns.
/// Classification targets must be non-negative integers; the class count is the
/// largest label plus one.
pub fn load_csv(path: &Path, columns: &ColumnMap) -> Result<Dataset> {
    let ingest = |row: usize, column: usize, message: String| Error::Ingest {
        path: path.to_path_buf(),
        row,
        column,
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => ingest(1, 1, format!("{other:?}")),
        })?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| ingest(1, 1, e.to_string()))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let find = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| ingest(1, 1, format!("no column named `{name}`")))
    };
    let target_col = find(&columns.target)?;
    let feature_cols: Vec<usize> = if columns.features.is_empty() {
        (0..header.len()).filter(|&c| c != target_col).collect()
    } else {
        columns.features.iter().map(|f| find(f)).collect::<Result<_>>()?
    };
    if feature_cols.is_empty() {
        return Err(ingest(1, 1, "no feature columns".into()));
    }

    let mut inputs = Vec::new();
    let mut raw_targets = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 2;
        let record = record.map_err(|e| ingest(row, 1, e.to_string()))?;
        if record.len() != header.len() {
            return Err(ingest(
                row,
                record.len().min(header.len()) + 1,
                format!("expected {} cells, found {}", header.len(), record.len()),
            ));
        }
        let cell = |c: usize| -> Result<f64> {
            let text = record[c].trim();
            text.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| ingest(row, c + 1, format!("`{text}` is not a finite number")))
        };
        inputs.push(feature_cols.iter().map(|&c| cell(c)).collect::<Result<Vec<f64>>>()?);
        raw_targets.push((row, cell(target_col)?));
    }
    if inputs.is_empty() {
        return Err(ingest(2, 1, "file has no data rows".into()));
    }

    let targets = match columns.kind {
        DatasetKind::Regression => Targets::Regression(raw_targets.iter().map(|&(_, v)| v).collect()),
        DatasetKind::Classification => {
            let labels = raw_targets
                .iter()
                .map(|&(row, v)| {
                    if v >= 0.0 && v.fract() == 0.0 && v < u32::MAX as f64 {
                        Ok(v as usize)
                    } else {
                        Err(ingest(
                            row,
                            target_col + 1,
                            format!("label {v} is not a non-negative integer"),
                        ))
                    }
                })
                .collect::<Result<Vec<usize>>>()?;
            let classes = labels.iter().max().map_or(0, |m| m + 1);
            Targets::Classification { labels, classes }
        }
    };
    if columns.standardize {
        standardize(&mut inputs);
    }
    for u in &inputs {
        check_finite(u, "features")?;
    }
    Ok(Dataset {
        inputs,
        targets,
        latents: None,
        provenance: Provenance::Csv {
            path: path.to_path_buf(),
            columns: columns.clone(),
        },
        seed: 0,
    })
}

/// Centers each column and scales it to unit population variance (constant columns are only centered).
pub fn standardize(inputs: &mut [Vec<f64>]) {
    let Some(n) = inputs.first().map(Vec::len) else { return };
    let count = inputs.len() as f64;
    for c in 0..n {
        let mean = inputs.iter().map(|u| u[c]).sum::<f64>() / count;
        let var = inputs.iter().map(|u| (u[c] - mean).powi(2)).sum::<f64>() / count;
        let scale = if var > 0.0 { var.sqrt() } else { 1.0 };
        for u in inputs.iter_mut() {
            u[c] = (u[c] - mean) / scale;
        }
    }
}
