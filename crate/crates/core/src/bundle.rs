//! On-disk formats: the dataset bundle, training history and learned
//! embeddings.
//!
//! A bundle is a directory with `meta.json`, `users.csv`, optional
//! `items_truth.csv`, `distances.csv` and `matching.csv`. Matrix files are
//! headerless, comma separated, one row per line, with every real written to
//! 17 significant digits so values survive a round trip bit for bit.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::datagen::GenConfig;
use crate::error::{Error, Result};
use crate::model::{CapacityVector, Dataset, DistanceMatrix, EmbeddingMatrix, PureMatching};
use crate::trainer::{EpochRecord, TrainHistory};

pub const META_FILE: &str = "meta.json";
pub const USERS_FILE: &str = "users.csv";
pub const ITEMS_TRUTH_FILE: &str = "items_truth.csv";
pub const DISTANCES_FILE: &str = "distances.csv";
pub const MATCHING_FILE: &str = "matching.csv";
pub const HISTORY_FILE: &str = "history.csv";
pub const ITEMS_LEARNED_FILE: &str = "items_learned.csv";
pub const USERS_LEARNED_FILE: &str = "users_learned.csv";

pub const HISTORY_HEADER: [&str; 6] = [
    "epoch",
    "loss",
    "f1_micro",
    "f1_macro",
    "mean_embed_dist",
    "grad_norm",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BundleMeta {
    pub n: usize,
    pub m: usize,
    pub d: usize,
    pub k: usize,
    pub alpha: f64,
    pub seed: u64,
    pub capacities: Vec<usize>,
    pub generator: GenConfig,
}

/// Formats a real with 17 significant digits.
pub fn format_real(x: f64) -> String {
    format!("{x:.16e}")
}

pub(crate) fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    write_file(path, &(text + "\n"))
}

pub(crate) fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

pub fn matrix_to_csv(values: ArrayView2<'_, f64>) -> String {
    let mut out = String::new();
    for row in values.rows() {
        let line: Vec<String> = row.iter().map(|&x| format_real(x)).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

pub fn write_matrix(path: &Path, values: ArrayView2<'_, f64>) -> Result<()> {
    write_file(path, &matrix_to_csv(values))
}

fn headerless_reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(path)
        .map_err(|e| csv_error(path, e))
}

fn csv_error(path: &Path, err: csv::Error) -> Error {
    let line = err.position().map_or(0, |p| p.line() as usize);
    match err.into_kind() {
        csv::ErrorKind::Io(source) => Error::io(path, source),
        other => Error::Parse {
            path: path.to_path_buf(),
            line,
            message: format!("{other:?}"),
        },
    }
}

fn parse_error(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Reads a headerless real matrix; `expected_cols` enforces the width.
pub fn read_matrix(path: &Path, expected_cols: Option<usize>) -> Result<Array2<f64>> {
    let mut reader = headerless_reader(path)?;
    let mut values = Vec::new();
    let mut width = expected_cols;
    let mut rows = 0;
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map_or(rows + 1, |p| p.line() as usize);
        match width {
            Some(w) if w != record.len() => {
                return Err(parse_error(path, line, format!("expected {w} columns, found {}", record.len())));
            }
            None => width = Some(record.len()),
            _ => {}
        }
        for field in record.iter() {
            let x: f64 = field
                .trim()
                .parse()
                .map_err(|_| parse_error(path, line, format!("`{field}` is not a number")))?;
            values.push(x);
        }
        rows += 1;
    }
    Array2::from_shape_vec((rows, width.unwrap_or(0)), values)
        .map_err(|e| parse_error(path, 0, e.to_string()))
}

pub fn write_matching(path: &Path, matching: &PureMatching) -> Result<()> {
    let mut out = String::new();
    for (i, j) in matching.as_slice().iter().enumerate() {
        out.push_str(&format!("{i},{j}\n"));
    }
    write_file(path, &out)
}

/// Reads `user,item` rows; users must appear as `0..n` in order.
pub fn read_matching(path: &Path) -> Result<PureMatching> {
    let mut reader = headerless_reader(path)?;
    let mut assign = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map_or(assign.len() + 1, |p| p.line() as usize);
        if record.len() != 2 {
            return Err(parse_error(path, line, "expected `user,item`"));
        }
        let parse = |s: &str| -> Result<usize> {
            s.trim()
                .parse()
                .map_err(|_| parse_error(path, line, format!("`{s}` is not an index")))
        };
        let user = parse(&record[0])?;
        if user != assign.len() {
            return Err(parse_error(path, line, format!("expected user {}, found {user}", assign.len())));
        }
        assign.push(parse(&record[1])?);
    }
    Ok(PureMatching::new(assign))
}

pub fn write_bundle(dir: &Path, dataset: &Dataset, generator: &GenConfig) -> Result<()> {
    dataset.validate()?;
    let meta = BundleMeta {
        n: dataset.n_users(),
        m: dataset.n_items(),
        d: dataset.dim(),
        k: generator.k,
        alpha: dataset.alpha,
        seed: dataset.seed,
        capacities: dataset.capacities.as_slice().to_vec(),
        generator: generator.clone(),
    };
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_json(&dir.join(META_FILE), &meta)?;
    write_matrix(&dir.join(USERS_FILE), dataset.users.values())?;
    let truth = dir.join(ITEMS_TRUTH_FILE);
    match &dataset.items_truth {
        Some(items) => write_matrix(&truth, items.values())?,
        None if truth.exists() => fs::remove_file(&truth).map_err(|e| Error::io(&truth, e))?,
        None => {}
    }
    write_matrix(&dir.join(DISTANCES_FILE), dataset.distances.values())?;
    write_matching(&dir.join(MATCHING_FILE), &dataset.matching)
}

fn shape_check(path: &Path, got: (usize, usize), expected: (usize, usize)) -> Result<()> {
    if got != expected {
        return Err(parse_error(
            path,
            0,
            format!("expected a {}x{} matrix, found {}x{}", expected.0, expected.1, got.0, got.1),
        ));
    }
    Ok(())
}

pub fn read_bundle(dir: &Path) -> Result<(Dataset, BundleMeta)> {
    let meta: BundleMeta = read_json(&dir.join(META_FILE))?;
    let path = |name: &str| -> PathBuf { dir.join(name) };

    let users = read_matrix(&path(USERS_FILE), Some(meta.d))?;
    shape_check(&path(USERS_FILE), users.dim(), (meta.n, meta.d))?;
    let truth_path = path(ITEMS_TRUTH_FILE);
    let items_truth = if truth_path.exists() {
        let items = read_matrix(&truth_path, Some(meta.d))?;
        shape_check(&truth_path, items.dim(), (meta.m, meta.d))?;
        Some(EmbeddingMatrix::new(items)?)
    } else {
        None
    };
    let distances = read_matrix(&path(DISTANCES_FILE), Some(meta.m))?;
    shape_check(&path(DISTANCES_FILE), distances.dim(), (meta.n, meta.m))?;
    let matching = read_matching(&path(MATCHING_FILE))?;
    if meta.capacities.len() != meta.m {
        return Err(parse_error(&path(META_FILE), 0, "capacities length differs from m"));
    }

    let dataset = Dataset {
        users: EmbeddingMatrix::new(users)?,
        items_truth,
        distances: DistanceMatrix::new(distances)?,
        capacities: CapacityVector::new(meta.capacities.clone())?,
        matching,
        alpha: meta.alpha,
        seed: meta.seed,
    };
    dataset.validate()?;
    Ok((dataset, meta))
}

fn format_optional(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

pub fn history_to_csv(history: &TrainHistory) -> String {
    let mut out = HISTORY_HEADER.join(",");
    out.push('\n');
    for r in &history.records {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.epoch,
            r.loss,
            r.f1_micro,
            r.f1_macro,
            format_optional(r.mean_embed_dist),
            r.grad_norm
        ));
    }
    out
}

pub fn write_history(path: &Path, history: &TrainHistory) -> Result<()> {
    write_file(path, &history_to_csv(history))
}

pub fn read_history(path: &Path) -> Result<TrainHistory> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let header = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    if header.iter().ne(HISTORY_HEADER) {
        return Err(parse_error(path, 1, format!("unexpected header `{}`", header.iter().collect::<Vec<_>>().join(","))));
    }
    let mut records = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let real = |idx: usize| -> Result<f64> {
            record[idx]
                .trim()
                .parse()
                .map_err(|_| parse_error(path, line, format!("`{}` is not a number in column {}", &record[idx], HISTORY_HEADER[idx])))
        };
        let epoch = record[0]
            .trim()
            .parse()
            .map_err(|_| parse_error(path, line, "epoch is not an integer"))?;
        let mean_embed_dist = if record[4].trim().is_empty() { None } else { Some(real(4)?) };
        records.push(EpochRecord {
            epoch,
            loss: real(1)?,
            f1_micro: real(2)?,
            f1_macro: real(3)?,
            mean_embed_dist,
            grad_norm: real(5)?,
        });
    }
    Ok(TrainHistory { records })
}
