//! Dataset ingestion and the synthetic generator.
//!
//! The on-disk format is one CSV with header `f0..f{d-1},y0..y{C-1},split`,
//! where labels are 0/1 (each row needs at least one 1) and split is one of
//! `train`, `query`, `db`. Floats use `.` as the decimal separator; values
//! are written with Rust's shortest round-trip formatting, so save/load is
//! an identity.

use crate::error::{Error, Result};
use crate::seeding::{derive_rng, stream};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Query,
    Db,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Query => "query",
            Split::Db => "db",
        })
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "query" => Ok(Split::Query),
            "db" => Ok(Split::Db),
            other => Err(format!("unknown split '{other}' (expected train, query or db)")),
        }
    }
}

/// Immutable sample store: row-major features (n x d), multi-hot labels
/// (n x C) and a split tag per sample. Every sample carries at least one
/// label and all features are finite.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    labels: Vec<u8>,
    splits: Vec<Split>,
    dim: usize,
    classes: usize,
}

impl Dataset {
    pub fn new(
        features: Vec<f64>,
        labels: Vec<u8>,
        splits: Vec<Split>,
        dim: usize,
        classes: usize,
    ) -> Result<Self> {
        if dim == 0 || classes == 0 {
            return Err(Error::config("dataset dimensions must be positive"));
        }
        let n = splits.len();
        if features.len() != n * dim || labels.len() != n * classes {
            return Err(Error::config("dataset buffers do not match declared shape"));
        }
        if !features.iter().all(|v| v.is_finite()) {
            return Err(Error::config("dataset features must be finite"));
        }
        for i in 0..n {
            let row = &labels[i * classes..(i + 1) * classes];
            if row.iter().any(|&l| l > 1) {
                return Err(Error::config(format!("sample {i} has a non-binary label")));
            }
            if row.iter().all(|&l| l == 0) {
                return Err(Error::config(format!("sample {i} carries no label")));
            }
        }
        Ok(Dataset {
            features,
            labels,
            splits,
            dim,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.splits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.splits.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn feature(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> &[u8] {
        &self.labels[i * self.classes..(i + 1) * self.classes]
    }

    pub fn split(&self, i: usize) -> Split {
        self.splits[i]
    }
}

/// Disjoint covering index sets by split tag.
#[derive(Debug, Clone)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub query: Vec<usize>,
    pub db: Vec<usize>,
}

/// Partitions sample indices by their split tags. The training and query
/// splits must be nonempty (a run cannot train or evaluate otherwise).
pub fn split_indices(dataset: &Dataset) -> Result<SplitIndices> {
    let mut out = SplitIndices {
        train: Vec::new(),
        query: Vec::new(),
        db: Vec::new(),
    };
    for i in 0..dataset.len() {
        match dataset.split(i) {
            Split::Train => out.train.push(i),
            Split::Query => out.query.push(i),
            Split::Db => out.db.push(i),
        }
    }
    if out.train.is_empty() {
        return Err(Error::config("dataset has no training samples"));
    }
    if out.query.is_empty() {
        return Err(Error::config("dataset has no query samples"));
    }
    Ok(out)
}

fn parse_error(line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

/// Loads the CSV format described in the module docs. Line numbers in errors
/// are 1-based and count the header line.
pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_path(path.as_ref())
        .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;

    let headers = reader
        .headers()
        .map_err(|e| parse_error(1, e.to_string()))?
        .clone();
    let mut dim = 0;
    let mut classes = 0;
    {
        let mut fields = headers.iter();
        let mut pending = fields.next();
        while let Some(h) = pending {
            if h == format!("f{dim}") {
                dim += 1;
                pending = fields.next();
            } else {
                break;
            }
        }
        while let Some(h) = pending {
            if h == format!("y{classes}") {
                classes += 1;
                pending = fields.next();
            } else {
                break;
            }
        }
        match pending {
            Some("split") if fields.next().is_none() && dim > 0 && classes > 0 => {}
            _ => {
                return Err(parse_error(
                    1,
                    "header must be f0..f{d-1},y0..y{C-1},split".to_string(),
                ))
            }
        }
    }

    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut splits = Vec::new();
    for record in reader.records() {
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                let line = e
                    .position()
                    .map(|p| p.line())
                    .unwrap_or(splits.len() as u64 + 2);
                return Err(parse_error(line, e.to_string()));
            }
        };
        let line = record
            .position()
            .map(|p| p.line())
            .unwrap_or(splits.len() as u64 + 2);
        if record.len() != dim + classes + 1 {
            return Err(parse_error(
                line,
                format!("expected {} fields, found {}", dim + classes + 1, record.len()),
            ));
        }
        let mut any_label = false;
        for (j, field) in record.iter().enumerate() {
            if j < dim {
                let v: f64 = field
                    .parse()
                    .map_err(|_| parse_error(line, format!("bad float '{field}'")))?;
                if !v.is_finite() {
                    return Err(parse_error(line, format!("non-finite feature '{field}'")));
                }
                features.push(v);
            } else if j < dim + classes {
                match field {
                    "0" => labels.push(0),
                    "1" => {
                        labels.push(1);
                        any_label = true;
                    }
                    other => {
                        return Err(parse_error(line, format!("non-binary label '{other}'")))
                    }
                }
            } else {
                let split = Split::from_str(field).map_err(|e| parse_error(line, e))?;
                splits.push(split);
            }
        }
        if !any_label {
            return Err(parse_error(line, "sample carries no label"));
        }
    }
    Dataset::new(features, labels, splits, dim, classes)
}

/// Writes the dataset in the same CSV format; `load_csv` of the result is
/// identical to the input.
pub fn save_csv(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path.as_ref())?;
    let mut w = std::io::BufWriter::new(file);
    let mut header = String::new();
    for i in 0..dataset.dim() {
        header.push_str(&format!("f{i},"));
    }
    for i in 0..dataset.classes() {
        header.push_str(&format!("y{i},"));
    }
    header.push_str("split");
    writeln!(w, "{header}")?;
    for i in 0..dataset.len() {
        let mut row = String::new();
        for v in dataset.feature(i) {
            row.push_str(&format!("{v},"));
        }
        for l in dataset.label(i) {
            row.push_str(&format!("{l},"));
        }
        row.push_str(&dataset.split(i).to_string());
        writeln!(w, "{row}")?;
    }
    w.flush()?;
    Ok(())
}

fn default_overlap() -> f64 {
    0.1
}

fn default_sigma() -> f64 {
    // Wide enough clusters that retrieval is hard and the loss-term ablations
    // separate; tighter clusters saturate every variant near perfect mAP.
    1.2
}

fn default_train_frac() -> f64 {
    0.6
}

fn default_query_frac() -> f64 {
    0.1
}

/// Recipe for a synthetic multi-label blob dataset: one Gaussian cluster per
/// class with seeded uniform centers in [-1, 1]^d. With probability
/// `overlap_p` a sample carries a second label and sits between the two
/// class centers. Splits are assigned by seeded shuffle using the given
/// fractions (the remainder is the retrieval database).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub dim: usize,
    pub per_class: usize,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    #[serde(default = "default_overlap")]
    pub overlap_p: f64,
    pub seed: u64,
    #[serde(default = "default_train_frac")]
    pub train_frac: f64,
    #[serde(default = "default_query_frac")]
    pub query_frac: f64,
}

impl SyntheticSpec {
    /// The default desk-scale benchmark: 6 classes, 32 dims, 200 per class.
    pub fn benchmark(seed: u64) -> Self {
        SyntheticSpec {
            classes: 6,
            dim: 32,
            per_class: 200,
            sigma: default_sigma(),
            overlap_p: default_overlap(),
            seed,
            train_frac: default_train_frac(),
            query_frac: default_query_frac(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.classes < 2 || self.dim == 0 || self.per_class == 0 {
            return Err(Error::config(
                "synthetic spec needs >= 2 classes and positive dim and per_class",
            ));
        }
        if !(0.0..=1.0).contains(&self.overlap_p) {
            return Err(Error::config("overlap_p must be in [0, 1]"));
        }
        if self.sigma < 0.0 {
            return Err(Error::config("sigma must be >= 0"));
        }
        if self.train_frac <= 0.0
            || self.query_frac <= 0.0
            || self.train_frac + self.query_frac >= 1.0
        {
            return Err(Error::config(
                "split fractions must be positive and leave room for the database",
            ));
        }
        Ok(())
    }
}

/// Generates the dataset described by `spec`, deterministically in its seed.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = derive_rng(spec.seed, &[stream::SYNTH_DATA]);
    let d = spec.dim;
    let c = spec.classes;
    let centers: Vec<Vec<f64>> = (0..c)
        .map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let n = c * spec.per_class;
    let mut features = Vec::with_capacity(n * d);
    let mut labels = vec![0u8; n * c];
    for class in 0..c {
        for _ in 0..spec.per_class {
            let i = features.len() / d;
            labels[i * c + class] = 1;
            let second = if spec.overlap_p > 0.0 && rng.gen_bool(spec.overlap_p) {
                let mut other = rng.gen_range(0..c - 1);
                if other >= class {
                    other += 1;
                }
                labels[i * c + other] = 1;
                Some(other)
            } else {
                None
            };
            for j in 0..d {
                let mean = match second {
                    Some(o) => 0.5 * (centers[class][j] + centers[o][j]),
                    None => centers[class][j],
                };
                features.push(mean + spec.sigma * noise.sample(&mut rng));
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let n_train = ((n as f64) * spec.train_frac).round() as usize;
    let n_query = ((n as f64) * spec.query_frac).round() as usize;
    if n_train == 0 || n_query == 0 || n_train + n_query >= n {
        return Err(Error::config(
            "split fractions leave an empty train, query or db split",
        ));
    }
    let mut splits = vec![Split::Db; n];
    for &i in &order[..n_train] {
        splits[i] = Split::Train;
    }
    for &i in &order[n_train..n_train + n_query] {
        splits[i] = Split::Query;
    }
    Dataset::new(features, labels, splits, d, c)
}
