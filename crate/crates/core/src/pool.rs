//! Feature pools: validation, the `BLAF` binary format, CSV ingestion and the
//! synthetic Gaussian-mixture generator.
//!
//! Binary layout (little-endian):
//!
//! | bytes | field                      |
//! |-------|----------------------------|
//! | 0..4  | magic `BLAF`               |
//! | 4..8  | `u32` version (1)          |
//! | 8..12 | `u32` N                    |
//! | 12..16| `u32` d                    |
//! | 16    | `u8` normalize flag        |
//! | 17    | `u8` has-labels flag       |
//! | 18..20| zero padding               |
//!
//! followed by `N·d` row-major `f32` values and, when labelled, `N` `u32` labels.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::rng_from_seed;

pub const MAGIC: &[u8; 4] = b"BLAF";
pub const FORMAT_VERSION: u32 = 1;
pub const HEADER_LEN: usize = 20;

/// Maximum deviation of a row norm from 1 for a pool flagged as normalized.
pub const NORM_TOLERANCE: f64 = 1e-4;

/// Rows whose norm is already this close to 1 are left untouched at load time,
/// which keeps save/load bitwise stable.
const RENORMALIZE_SLACK: f64 = 1e-6;

/// An `N × d` matrix of embedding vectors with optional ground-truth labels.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePool {
    features: Vec<f32>,
    n: usize,
    dim: usize,
    labels: Option<Vec<u32>>,
    normalized: bool,
}

impl FeaturePool {
    /// Builds a pool from row-major features.
    ///
    /// When `normalized` is true the rows are L2-normalized first.
    pub fn new(
        features: Vec<f32>,
        dim: usize,
        labels: Option<Vec<u32>>,
        normalized: bool,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::DimensionMismatch("dim must be at least 1".into()));
        }
        if features.is_empty() || features.len() % dim != 0 {
            return Err(Error::DimensionMismatch(format!(
                "{} values do not form rows of dim {dim}",
                features.len()
            )));
        }
        let n = features.len() / dim;
        if let Some(pos) = features.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                location: format!("row {} column {}", pos / dim, pos % dim),
            });
        }
        if let Some(l) = &labels {
            if l.len() != n {
                return Err(Error::DimensionMismatch(format!(
                    "{} labels for {n} rows",
                    l.len()
                )));
            }
        }
        let mut pool = FeaturePool {
            features,
            n,
            dim,
            labels,
            normalized,
        };
        if normalized {
            pool.normalize_rows()?;
        }
        Ok(pool)
    }

    fn normalize_rows(&mut self) -> Result<()> {
        for (i, row) in self.features.chunks_mut(self.dim).enumerate() {
            let norm = row.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt();
            if norm == 0.0 {
                return Err(Error::DimensionMismatch(format!(
                    "row {i} has zero norm and cannot be normalized"
                )));
            }
            if (norm - 1.0).abs() <= RENORMALIZE_SLACK {
                continue;
            }
            for v in row.iter_mut() {
                *v = (*v as f64 / norm) as f32;
            }
        }
        self.normalized = true;
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn labels(&self) -> Option<&[u32]> {
        self.labels.as_deref()
    }

    pub fn features(&self) -> &[f32] {
        &self.features
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f32] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.features.chunks(self.dim)
    }

    /// Number of distinct classes implied by the labels (`max + 1`).
    pub fn num_classes(&self) -> Option<usize> {
        self.labels
            .as_ref()
            .map(|l| l.iter().copied().max().map_or(0, |m| m as usize + 1))
    }

    pub fn max_norm_deviation(&self) -> f64 {
        self.rows()
            .map(|r| {
                let n = r.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
                (n - 1.0).abs()
            })
            .fold(0.0, f64::max)
    }

    /// Returns the pool with its labels removed.
    pub fn without_labels(mut self) -> Self {
        self.labels = None;
        self
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(
            HEADER_LEN + self.features.len() * 4 + self.labels.as_ref().map_or(0, |l| l.len() * 4),
        );
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.n as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.push(self.normalized as u8);
        out.push(self.labels.is_some() as u8);
        out.extend_from_slice(&[0, 0]);
        for v in &self.features {
            out.extend_from_slice(&v.to_le_bytes());
        }
        if let Some(labels) = &self.labels {
            for l in labels {
                out.extend_from_slice(&l.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::MalformedHeader {
                offset: bytes.len(),
                reason: format!("header needs {HEADER_LEN} bytes, file has {}", bytes.len()),
            });
        }
        if &bytes[0..4] != MAGIC {
            return Err(Error::MalformedHeader {
                offset: 0,
                reason: format!("bad magic {:?}", &bytes[0..4]),
            });
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let version = u32_at(4);
        if version != FORMAT_VERSION {
            return Err(Error::MalformedHeader {
                offset: 4,
                reason: format!("unsupported version {version}"),
            });
        }
        let n = u32_at(8) as usize;
        let dim = u32_at(12) as usize;
        if n == 0 || dim == 0 {
            return Err(Error::MalformedHeader {
                offset: if n == 0 { 8 } else { 12 },
                reason: format!("N={n}, d={dim}; both must be at least 1"),
            });
        }
        let flag = |o: usize| match bytes[o] {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(Error::MalformedHeader {
                offset: o,
                reason: format!("flag byte must be 0 or 1, found {other}"),
            }),
        };
        let normalize = flag(16)?;
        let has_labels = flag(17)?;
        if bytes[18] != 0 || bytes[19] != 0 {
            return Err(Error::MalformedHeader {
                offset: 18,
                reason: "padding bytes must be zero".into(),
            });
        }

        let feat_bytes = n * dim * 4;
        let label_bytes = if has_labels { n * 4 } else { 0 };
        let payload = bytes.len() - HEADER_LEN;
        if payload < feat_bytes + label_bytes {
            return Err(Error::TruncatedPayload {
                offset: HEADER_LEN,
                expected: feat_bytes + label_bytes,
                found: payload,
            });
        }
        if payload > feat_bytes + label_bytes {
            return Err(Error::DimensionMismatch(format!(
                "{} trailing bytes after byte {}",
                payload - feat_bytes - label_bytes,
                HEADER_LEN + feat_bytes + label_bytes
            )));
        }

        let mut features = Vec::with_capacity(n * dim);
        for (i, chunk) in bytes[HEADER_LEN..HEADER_LEN + feat_bytes].chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes(chunk.try_into().unwrap());
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    location: format!("byte offset {}", HEADER_LEN + i * 4),
                });
            }
            features.push(v);
        }
        let labels = has_labels.then(|| {
            bytes[HEADER_LEN + feat_bytes..]
                .chunks_exact(4)
                .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
                .collect()
        });
        FeaturePool::new(features, dim, labels, normalize)
    }

    /// Parses comma-separated rows, with an optional trailing `label:<int>` column.
    pub fn from_csv(text: &str, normalize: bool) -> Result<Self> {
        let mut features = Vec::new();
        let mut labels: Vec<u32> = Vec::new();
        let mut dim: Option<usize> = None;
        let mut labelled: Option<bool> = None;

        for (lineno, line) in text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())) {
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut fields: Vec<&str> = line.split(',').map(str::trim).collect();
            let label = match fields.last().and_then(|f| f.strip_prefix("label:")) {
                Some(l) => {
                    let parsed = l.parse::<u32>().map_err(|_| Error::Csv {
                        line: lineno,
                        reason: format!("bad label {l:?}"),
                    })?;
                    fields.pop();
                    Some(parsed)
                }
                None => None,
            };
            match labelled {
                None => labelled = Some(label.is_some()),
                Some(had) if had != label.is_some() => {
                    return Err(Error::Csv {
                        line: lineno,
                        reason: "label column present on some rows but not others".into(),
                    })
                }
                _ => {}
            }
            if let Some(l) = label {
                labels.push(l);
            }
            match dim {
                None => dim = Some(fields.len()),
                Some(d) if d != fields.len() => {
                    return Err(Error::Csv {
                        line: lineno,
                        reason: format!("expected {d} columns, found {}", fields.len()),
                    })
                }
                _ => {}
            }
            for f in fields {
                let v: f32 = f.parse().map_err(|_| Error::Csv {
                    line: lineno,
                    reason: format!("not a number: {f:?}"),
                })?;
                if !v.is_finite() {
                    return Err(Error::NonFinite {
                        location: format!("line {lineno}"),
                    });
                }
                features.push(v);
            }
        }
        let dim = dim.ok_or_else(|| Error::Csv {
            line: 0,
            reason: "no data rows".into(),
        })?;
        let labels = labelled.unwrap_or(false).then_some(labels);
        FeaturePool::new(features, dim, labels, normalize)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for (i, row) in self.rows().enumerate() {
            let cols: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            out.push_str(&cols.join(","));
            if let Some(l) = &self.labels {
                out.push_str(&format!(",label:{}", l[i]));
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PoolFormat {
    Binary,
    Csv { normalize: bool },
}

impl PoolFormat {
    /// `.csv` files are read as CSV (normalized); anything else as binary.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("csv") => PoolFormat::Csv { normalize: true },
            _ => PoolFormat::Binary,
        }
    }
}

pub fn load_pool(path: impl AsRef<Path>, format: PoolFormat) -> Result<FeaturePool> {
    let path = path.as_ref();
    match format {
        PoolFormat::Binary => {
            let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
            FeaturePool::from_bytes(&bytes)
        }
        PoolFormat::Csv { normalize } => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            FeaturePool::from_csv(&text, normalize)
        }
    }
}

/// Writes the pool in the binary format.
pub fn save_pool(pool: &FeaturePool, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&pool.to_bytes())
        .map_err(|e| Error::io(path, e))
}

/// Parameters of the synthetic Gaussian mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub num_classes: usize,
    pub samples_per_class: usize,
    pub dim: usize,
    pub center_separation: f64,
    pub intra_std: f64,
    pub noise_fraction: f64,
    pub seed: u64,
}

impl Default for MixtureSpec {
    fn default() -> Self {
        MixtureSpec {
            num_classes: 10,
            samples_per_class: 500,
            dim: 32,
            center_separation: DEFAULT_SEPARATION,
            intra_std: DEFAULT_INTRA_STD,
            noise_fraction: 0.0,
            seed: 0,
        }
    }
}

pub const DEFAULT_INTRA_STD: f64 = 1.0;
pub const DEFAULT_SEPARATION: f64 = 2.0;

/// Proposal draws per class center before giving up.
const PLACEMENT_RETRIES: usize = 10_000;

/// Raw (pre-normalization) draw from a mixture.
#[derive(Debug, Clone)]
pub struct MixtureDraw {
    pub dim: usize,
    /// `num_classes × dim` class centers.
    pub centers: Vec<f64>,
    /// `N × dim` samples before normalization.
    pub samples: Vec<f64>,
    pub labels: Vec<u32>,
    /// Whether each sample was drawn with the inflated noise std.
    pub is_noise: Vec<bool>,
}

impl MixtureSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 || self.samples_per_class == 0 || self.dim == 0 {
            return Err(Error::Config(
                "num_classes, samples_per_class and dim must be positive".into(),
            ));
        }
        if !(self.center_separation > 0.0) || !(self.intra_std > 0.0) {
            return Err(Error::Config(
                "center_separation and intra_std must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.noise_fraction) {
            return Err(Error::Config("noise_fraction must lie in [0, 1)".into()));
        }
        Ok(())
    }

    /// Samples centers and points without normalizing.
    ///
    /// Centers are drawn uniformly from the cube `[-s, s]^d` (with `s` the
    /// separation) and rejected when closer than `s` to an accepted center.
    pub fn draw(&self) -> Result<MixtureDraw> {
        self.validate()?;
        let mut rng = rng_from_seed(self.seed);
        let dim = self.dim;
        let sep = self.center_separation;

        let mut centers: Vec<f64> = Vec::with_capacity(self.num_classes * dim);
        for _ in 0..self.num_classes {
            let mut placed = false;
            for _ in 0..PLACEMENT_RETRIES {
                let candidate: Vec<f64> = (0..dim).map(|_| rng.random_range(-sep..=sep)).collect();
                let far_enough = centers.chunks(dim).all(|c| {
                    c.iter()
                        .zip(&candidate)
                        .map(|(a, b)| (a - b).powi(2))
                        .sum::<f64>()
                        .sqrt()
                        >= sep
                });
                if far_enough {
                    centers.extend_from_slice(&candidate);
                    placed = true;
                    break;
                }
            }
            if !placed {
                return Err(Error::SeparationInfeasible {
                    classes: self.num_classes,
                    separation: sep,
                    dim,
                });
            }
        }

        let clean = Normal::new(0.0, self.intra_std).expect("positive std");
        let noisy = Normal::new(0.0, 3.0 * self.intra_std).expect("positive std");
        let n_noise = crate::util::ratio_count(self.noise_fraction, self.samples_per_class);
        let total = self.num_classes * self.samples_per_class;
        let mut samples = Vec::with_capacity(total * dim);
        let mut labels = Vec::with_capacity(total);
        let mut is_noise = Vec::with_capacity(total);
        for (c, center) in centers.chunks(dim).enumerate() {
            for s in 0..self.samples_per_class {
                let noise = s >= self.samples_per_class - n_noise;
                let dist = if noise { &noisy } else { &clean };
                samples.extend(center.iter().map(|&m| m + dist.sample(&mut rng)));
                labels.push(c as u32);
                is_noise.push(noise);
            }
        }
        Ok(MixtureDraw {
            dim,
            centers,
            samples,
            labels,
            is_noise,
        })
    }
}

/// Draws a labelled, L2-normalized pool from the mixture.
pub fn generate_mixture(spec: &MixtureSpec) -> Result<FeaturePool> {
    let draw = spec.draw()?;
    let dim = draw.dim;
    let mut features = Vec::with_capacity(draw.samples.len());
    for row in draw.samples.chunks(dim) {
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        // A zero row has probability zero under a Gaussian; keep it finite anyway.
        let norm = if norm > 0.0 { norm } else { 1.0 };
        features.extend(row.iter().map(|v| (v / norm) as f32));
    }
    FeaturePool::new(features, dim, Some(draw.labels), true)
}
