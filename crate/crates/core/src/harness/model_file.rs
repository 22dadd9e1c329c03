//! Versioned, checksummed storage for fitted approximators.
//!
//! A file is one header line followed by the payload:
//!
//! ```text
//! expsparse-model <version> <text|binary> <payload bytes> <sha256 of payload>
//! ```
//!
//! The text payload has one `key value...` line per field with floats in
//! shortest round-trip exponent form; the binary payload is the same fields as
//! little-endian words. Both reproduce every `f64` bit for bit.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::approximator::{DeadUnitPolicy, EasApproximator};
use crate::error::{Error, Result};
use crate::projection::{ProjectionMatrix, RowDistribution};
use crate::sparsifier::ThresholdVector;

pub const MODEL_MAGIC: &str = "expsparse-model";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum ModelEncoding {
    #[default]
    Text,
    Binary,
}

impl ModelEncoding {
    fn as_str(self) -> &'static str {
        match self {
            ModelEncoding::Text => "text",
            ModelEncoding::Binary => "binary",
        }
    }
}

impl FromStr for ModelEncoding {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "text" => Ok(ModelEncoding::Text),
            "binary" => Ok(ModelEncoding::Binary),
            other => Err(Error::Config(format!("unknown model encoding `{other}`"))),
        }
    }
}

/// Flat view of everything a model file stores.
struct Fields {
    n: usize,
    d: usize,
    dist: RowDistribution,
    seed: u64,
    k: usize,
    quantile_level: f64,
    sample_size: usize,
    source_seed: u64,
    global_mean: f64,
    dead_policy: DeadUnitPolicy,
    row_ids: Vec<u64>,
    weights: Vec<f64>,
    taus: Vec<f64>,
    readout: Vec<f64>,
    counts: Vec<u64>,
}

impl Fields {
    fn of(model: &EasApproximator) -> Self {
        let w = model.projection();
        let tau = model.thresholds();
        Fields {
            n: w.n(),
            d: w.d(),
            dist: w.dist(),
            seed: w.seed(),
            k: tau.k,
            quantile_level: tau.quantile_level,
            sample_size: tau.sample_size,
            source_seed: tau.source_seed,
            global_mean: model.global_mean(),
            dead_policy: model.dead_policy(),
            row_ids: w.row_ids().to_vec(),
            weights: w.weights().to_vec(),
            taus: tau.taus.clone(),
            readout: model.readout().to_vec(),
            counts: model.counts().to_vec(),
        }
    }

    fn into_model(self) -> Result<EasApproximator> {
        if self.row_ids.len() != self.d {
            return Err(Error::Format(format!(
                "expected {} row ids, found {}",
                self.d,
                self.row_ids.len()
            )));
        }
        let w = ProjectionMatrix::from_parts(self.n, self.dist, self.seed, self.row_ids, self.weights)?;
        let tau = ThresholdVector::new(
            self.taus,
            self.k,
            self.quantile_level,
            self.sample_size,
            self.source_seed,
        )?;
        EasApproximator::from_parts(w, tau, self.readout, self.counts, self.global_mean, self.dead_policy)
    }
}

fn policy_str(p: DeadUnitPolicy) -> &'static str {
    match p {
        DeadUnitPolicy::CountInDenominator => "count_in_denominator",
        DeadUnitPolicy::Exclude => "exclude",
    }
}

fn parse_policy(s: &str) -> Result<DeadUnitPolicy> {
    match s {
        "count_in_denominator" => Ok(DeadUnitPolicy::CountInDenominator),
        "exclude" => Ok(DeadUnitPolicy::Exclude),
        other => Err(Error::Format(format!("unknown dead-unit policy `{other}`"))),
    }
}

// Gaussian sigma travels separately so its bits survive.
fn dist_parts(dist: RowDistribution) -> (u8, f64) {
    match dist {
        RowDistribution::Gaussian { sigma } => (0, sigma),
        RowDistribution::UnitSphere => (1, 0.0),
        RowDistribution::Explicit => (2, 0.0),
    }
}

fn dist_from_parts(tag: u8, sigma: f64) -> Result<RowDistribution> {
    match tag {
        0 => Ok(RowDistribution::Gaussian { sigma }),
        1 => Ok(RowDistribution::UnitSphere),
        2 => Ok(RowDistribution::Explicit),
        other => Err(Error::Format(format!("unknown row distribution tag {other}"))),
    }
}

fn encode_text(f: &Fields) -> Vec<u8> {
    let (dist_tag, sigma) = dist_parts(f.dist);
    let mut s = String::new();
    let floats = |xs: &[f64]| xs.iter().map(|x| format!("{x:e}")).collect::<Vec<_>>().join(" ");
    let ints = |xs: &[u64]| xs.iter().map(u64::to_string).collect::<Vec<_>>().join(" ");
    let _ = writeln!(s, "n {}", f.n);
    let _ = writeln!(s, "d {}", f.d);
    let _ = writeln!(s, "dist {dist_tag} {sigma:e}");
    let _ = writeln!(s, "seed {}", f.seed);
    let _ = writeln!(s, "k {}", f.k);
    let _ = writeln!(s, "quantile_level {:e}", f.quantile_level);
    let _ = writeln!(s, "sample_size {}", f.sample_size);
    let _ = writeln!(s, "source_seed {}", f.source_seed);
    let _ = writeln!(s, "global_mean {:e}", f.global_mean);
    let _ = writeln!(s, "dead_policy {}", policy_str(f.dead_policy));
    let _ = writeln!(s, "row_ids {}", ints(&f.row_ids));
    let _ = writeln!(s, "weights {}", floats(&f.weights));
    let _ = writeln!(s, "taus {}", floats(&f.taus));
    let _ = writeln!(s, "readout {}", floats(&f.readout));
    let _ = writeln!(s, "counts {}", ints(&f.counts));
    s.into_bytes()
}

struct TextReader<'a> {
    lines: std::str::Lines<'a>,
}

impl<'a> TextReader<'a> {
    fn field(&mut self, key: &str) -> Result<Vec<&'a str>> {
        let line = self
            .lines
            .next()
            .ok_or_else(|| Error::Format(format!("missing field `{key}`")))?;
        let mut tokens = line.split(' ').filter(|t| !t.is_empty());
        match tokens.next() {
            Some(k) if k == key => Ok(tokens.collect()),
            found => Err(Error::Format(format!(
                "expected field `{key}`, found `{}`",
                found.unwrap_or("")
            ))),
        }
    }

    fn parsed<T: FromStr>(&mut self, key: &str) -> Result<Vec<T>> {
        self.field(key)?
            .into_iter()
            .map(|t| {
                t.parse()
                    .map_err(|_| Error::Format(format!("bad value `{t}` in field `{key}`")))
            })
            .collect()
    }

    fn one<T: FromStr>(&mut self, key: &str) -> Result<T> {
        let mut v = self.parsed(key)?;
        if v.len() != 1 {
            return Err(Error::Format(format!("field `{key}` takes one value")));
        }
        Ok(v.remove(0))
    }
}

fn decode_text(payload: &[u8]) -> Result<Fields> {
    let text = std::str::from_utf8(payload).map_err(|_| Error::Format("text payload is not UTF-8".into()))?;
    let mut r = TextReader { lines: text.lines() };
    let n = r.one("n")?;
    let d = r.one("d")?;
    let dist_field = r.field("dist")?;
    let [tag, sigma] = dist_field[..] else {
        return Err(Error::Format("field `dist` takes a tag and a sigma".into()));
    };
    let tag: u8 = tag
        .parse()
        .map_err(|_| Error::Format(format!("bad distribution tag `{tag}`")))?;
    let sigma: f64 = sigma
        .parse()
        .map_err(|_| Error::Format(format!("bad sigma `{sigma}`")))?;
    let fields = Fields {
        n,
        d,
        dist: dist_from_parts(tag, sigma)?,
        seed: r.one("seed")?,
        k: r.one("k")?,
        quantile_level: r.one("quantile_level")?,
        sample_size: r.one("sample_size")?,
        source_seed: r.one("source_seed")?,
        global_mean: r.one("global_mean")?,
        dead_policy: parse_policy(&r.one::<String>("dead_policy")?)?,
        row_ids: r.parsed("row_ids")?,
        weights: r.parsed("weights")?,
        taus: r.parsed("taus")?,
        readout: r.parsed("readout")?,
        counts: r.parsed("counts")?,
    };
    if r.lines.next().is_some() {
        return Err(Error::Format("trailing data after the last field".into()));
    }
    Ok(fields)
}

fn encode_binary(f: &Fields) -> Vec<u8> {
    let (dist_tag, sigma) = dist_parts(f.dist);
    let mut out = Vec::with_capacity(8 * (f.weights.len() + 4 * f.d + 16));
    let put_u64 = |out: &mut Vec<u8>, x: u64| out.extend_from_slice(&x.to_le_bytes());
    let put_f64 = |out: &mut Vec<u8>, x: f64| out.extend_from_slice(&x.to_le_bytes());
    put_u64(&mut out, f.n as u64);
    put_u64(&mut out, f.d as u64);
    out.push(dist_tag);
    put_f64(&mut out, sigma);
    put_u64(&mut out, f.seed);
    put_u64(&mut out, f.k as u64);
    put_f64(&mut out, f.quantile_level);
    put_u64(&mut out, f.sample_size as u64);
    put_u64(&mut out, f.source_seed);
    put_f64(&mut out, f.global_mean);
    out.push(match f.dead_policy {
        DeadUnitPolicy::CountInDenominator => 0,
        DeadUnitPolicy::Exclude => 1,
    });
    f.row_ids.iter().for_each(|&x| put_u64(&mut out, x));
    f.weights.iter().for_each(|&x| put_f64(&mut out, x));
    f.taus.iter().for_each(|&x| put_f64(&mut out, x));
    f.readout.iter().for_each(|&x| put_f64(&mut out, x));
    f.counts.iter().for_each(|&x| put_u64(&mut out, x));
    out
}

struct ByteReader<'a> {
    bytes: &'a [u8],
}

impl ByteReader<'_> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        if self.bytes.len() < N {
            return Err(Error::Format("binary payload ends early".into()));
        }
        let (head, rest) = self.bytes.split_at(N);
        self.bytes = rest;
        Ok(head.try_into().expect("split at N"))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take::<1>()?[0])
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take()?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take()?))
    }

    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Format("size does not fit in usize".into()))
    }

    fn many<T>(&mut self, count: usize, mut one: impl FnMut(&mut Self) -> Result<T>) -> Result<Vec<T>> {
        if count > self.bytes.len() / 8 {
            return Err(Error::Format("binary payload ends early".into()));
        }
        (0..count).map(|_| one(self)).collect()
    }
}

fn decode_binary(payload: &[u8]) -> Result<Fields> {
    let mut r = ByteReader { bytes: payload };
    let n = r.usize()?;
    let d = r.usize()?;
    let dist_tag = r.u8()?;
    let sigma = r.f64()?;
    let seed = r.u64()?;
    let k = r.usize()?;
    let quantile_level = r.f64()?;
    let sample_size = r.usize()?;
    let source_seed = r.u64()?;
    let global_mean = r.f64()?;
    let dead_policy = match r.u8()? {
        0 => DeadUnitPolicy::CountInDenominator,
        1 => DeadUnitPolicy::Exclude,
        other => return Err(Error::Format(format!("unknown dead-unit policy tag {other}"))),
    };
    let weight_count = n
        .checked_mul(d)
        .ok_or_else(|| Error::Format("projection size overflows".into()))?;
    let fields = Fields {
        n,
        d,
        dist: dist_from_parts(dist_tag, sigma)?,
        seed,
        k,
        quantile_level,
        sample_size,
        source_seed,
        global_mean,
        dead_policy,
        row_ids: r.many(d, ByteReader::u64)?,
        weights: r.many(weight_count, ByteReader::f64)?,
        taus: r.many(d, ByteReader::f64)?,
        readout: r.many(d, ByteReader::f64)?,
        counts: r.many(d, ByteReader::u64)?,
    };
    if !r.bytes.is_empty() {
        return Err(Error::Format("trailing data after the last field".into()));
    }
    Ok(fields)
}

/// Serializes a fitted model, header included.
pub fn model_to_bytes(model: &EasApproximator, encoding: ModelEncoding) -> Vec<u8> {
    let fields = Fields::of(model);
    let payload = match encoding {
        ModelEncoding::Text => encode_text(&fields),
        ModelEncoding::Binary => encode_binary(&fields),
    };
    let digest = hex::encode(Sha256::digest(&payload));
    let mut out = format!(
        "{MODEL_MAGIC} {MODEL_VERSION} {} {} {digest}\n",
        encoding.as_str(),
        payload.len()
    )
    .into_bytes();
    out.extend_from_slice(&payload);
    out
}

/// Parses a model file. Checks run in order: magic, version, length, checksum, fields.
pub fn model_from_bytes(bytes: &[u8]) -> Result<EasApproximator> {
    let newline = bytes
        .iter()
        .take(512)
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Format("missing header line".into()))?;
    let header = std::str::from_utf8(&bytes[..newline]).map_err(|_| Error::Format("header is not UTF-8".into()))?;
    let payload = &bytes[newline + 1..];
    let tokens: Vec<&str> = header.split(' ').collect();
    if tokens.first() != Some(&MODEL_MAGIC) {
        return Err(Error::Format("not an expsparse model file".into()));
    }
    let version: u32 = tokens
        .get(1)
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::Format("header has no version".into()))?;
    if version != MODEL_VERSION {
        return Err(Error::Version {
            found: version,
            supported: MODEL_VERSION,
        });
    }
    let [_, _, encoding, len, digest] = tokens[..] else {
        return Err(Error::Format(
            "header needs magic, version, encoding, length and digest".into(),
        ));
    };
    let encoding: ModelEncoding = encoding
        .parse()
        .map_err(|_| Error::Format(format!("unknown encoding `{encoding}`")))?;
    let len: usize = len
        .parse()
        .map_err(|_| Error::Format(format!("bad payload length `{len}`")))?;
    if payload.len() != len {
        return Err(Error::Checksum(format!(
            "payload is {} bytes, header says {len} (truncated or padded file)",
            payload.len()
        )));
    }
    if hex::encode(Sha256::digest(payload)) != digest {
        return Err(Error::Checksum("payload does not match its SHA-256 digest".into()));
    }
    let fields = match encoding {
        ModelEncoding::Text => decode_text(payload)?,
        ModelEncoding::Binary => decode_binary(payload)?,
    };
    fields.into_model()
}

pub fn save_model(model: &EasApproximator, path: &Path, encoding: ModelEncoding) -> Result<()> {
    std::fs::write(path, model_to_bytes(model, encoding)).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<EasApproximator> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    model_from_bytes(&bytes)
}
