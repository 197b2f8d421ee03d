//! Per-(subject, item) feature tables, modality fusion and item aggregation.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FeatureError {
    #[error("header mismatch: expected `{expected}`, found `{found}`")]
    HeaderMismatch { expected: String, found: String },
    #[error("line {line}: expected {expected} fields, found {found}")]
    RaggedRow {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("line {line}, column `{column}`: non-numeric cell `{cell}`")]
    NonNumeric {
        line: usize,
        column: String,
        cell: String,
    },
    #[error("line {line}, column `{column}`: non-finite value `{cell}`")]
    NonFinite {
        line: usize,
        column: String,
        cell: String,
    },
    #[error("duplicate row key ({subject_id}, {item_id})")]
    DuplicateKey { subject_id: String, item_id: String },
    #[error("duplicate feature name `{0}`")]
    DuplicateFeatureName(String),
    #[error("row ({subject_id}, {item_id}) has {found} values, schema dimension is {expected}")]
    DimensionMismatch {
        subject_id: String,
        item_id: String,
        expected: usize,
        found: usize,
    },
    #[error("key sets differ; only in first: {only_left:?}; only in second: {only_right:?}")]
    KeyMismatch {
        only_left: Vec<(String, String)>,
        only_right: Vec<(String, String)>,
    },
    #[error("missing feature row ({subject_id}, {item_id})")]
    MissingKey { subject_id: String, item_id: String },
    #[error("cannot aggregate an empty item list")]
    EmptyItemList,
    #[error("unknown modality `{0}`")]
    UnknownModality(String),
    #[error("empty feature source")]
    Empty,
}

pub type Result<T> = std::result::Result<T, FeatureError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Audio,
    Video,
    Fused,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Audio, Modality::Video, Modality::Fused];

    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Audio => "audio",
            Modality::Video => "video",
            Modality::Fused => "fused",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Modality {
    type Err = FeatureError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "audio" | "a" => Ok(Modality::Audio),
            "video" | "v" => Ok(Modality::Video),
            "fused" | "audio-video" | "av" | "a-v" => Ok(Modality::Fused),
            other => Err(FeatureError::UnknownModality(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSchema {
    modality: Modality,
    feature_names: Vec<String>,
}

impl FeatureSchema {
    pub fn new(modality: Modality, feature_names: Vec<String>) -> Result<Self> {
        let mut seen = HashSet::new();
        for n in &feature_names {
            if !seen.insert(n.as_str()) {
                return Err(FeatureError::DuplicateFeatureName(n.clone()));
            }
        }
        Ok(Self {
            modality,
            feature_names,
        })
    }

    /// Reads one feature name per non-empty line.
    pub fn from_name_list(modality: Modality, source: &str) -> Result<Self> {
        Self::new(
            modality,
            source
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(str::to_string)
                .collect(),
        )
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn dimension(&self) -> usize {
        self.feature_names.len()
    }

    fn header(&self) -> String {
        let mut h = String::from("subject_id,item_id");
        for n in &self.feature_names {
            h.push(',');
            h.push_str(n);
        }
        h
    }
}

pub type RowKey = (String, String);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct FeatureTable<T: Scalar> {
    schema: FeatureSchema,
    rows: BTreeMap<RowKey, Vec<T>>,
}

impl<T: Scalar> FeatureTable<T> {
    /// Builds a table, checking dimensions and finiteness of every row.
    pub fn new(schema: FeatureSchema, rows: BTreeMap<RowKey, Vec<T>>) -> Result<Self> {
        for ((subject_id, item_id), v) in &rows {
            if v.len() != schema.dimension() {
                return Err(FeatureError::DimensionMismatch {
                    subject_id: subject_id.clone(),
                    item_id: item_id.clone(),
                    expected: schema.dimension(),
                    found: v.len(),
                });
            }
            if let Some((j, x)) = v.iter().enumerate().find(|(_, x)| !x.is_finite()) {
                return Err(FeatureError::NonFinite {
                    line: 0,
                    column: schema.feature_names[j].clone(),
                    cell: x.to_string(),
                });
            }
        }
        Ok(Self { schema, rows })
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    pub fn dimension(&self) -> usize {
        self.schema.dimension()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn get(&self, subject_id: &str, item_id: &str) -> Option<&[T]> {
        self.rows
            .get(&(subject_id.to_string(), item_id.to_string()))
            .map(Vec::as_slice)
    }

    pub fn row(&self, subject_id: &str, item_id: &str) -> Result<&[T]> {
        self.get(subject_id, item_id)
            .ok_or_else(|| FeatureError::MissingKey {
                subject_id: subject_id.to_string(),
                item_id: item_id.to_string(),
            })
    }

    pub fn rows(&self) -> impl Iterator<Item = (&RowKey, &Vec<T>)> {
        self.rows.iter()
    }

    pub fn keys(&self) -> impl Iterator<Item = &RowKey> {
        self.rows.keys()
    }

    pub fn subject_ids(&self) -> BTreeSet<&str> {
        self.rows.keys().map(|(s, _)| s.as_str()).collect()
    }

    /// Writes the table as CSV, keys in sorted order, values with 9
    /// significant digits.
    pub fn save(&self) -> String {
        let mut out = self.schema.header();
        out.push('\n');
        for ((subject, item), v) in &self.rows {
            out.push_str(subject);
            out.push(',');
            out.push_str(item);
            for x in v {
                out.push(',');
                out.push_str(&format_sig9(*x));
            }
            out.push('\n');
        }
        out
    }
}

/// Formats a value with 9 significant digits in scientific notation.
pub fn format_sig9<T: Scalar>(x: T) -> String {
    format!("{:.8e}", x.to_f64_lossy())
}

/// Rounds a value to what [`format_sig9`] followed by a parse yields.
pub fn quantize_sig9<T: Scalar>(x: T) -> T {
    format_sig9(x).parse::<T>().unwrap_or(x)
}

fn parse_rows<T: Scalar>(
    schema: &FeatureSchema,
    lines: impl Iterator<Item = (usize, String)>,
) -> Result<BTreeMap<RowKey, Vec<T>>> {
    let width = schema.dimension() + 2;
    let mut rows = BTreeMap::new();
    for (line, row) in lines {
        let cells: Vec<&str> = row.split(',').map(str::trim).collect();
        if cells.len() != width {
            return Err(FeatureError::RaggedRow {
                line,
                expected: width,
                found: cells.len(),
            });
        }
        let mut v = Vec::with_capacity(schema.dimension());
        for (cell, name) in cells[2..].iter().zip(&schema.feature_names) {
            let x: T = cell.parse().map_err(|_| FeatureError::NonNumeric {
                line,
                column: name.clone(),
                cell: cell.to_string(),
            })?;
            if !x.is_finite() {
                return Err(FeatureError::NonFinite {
                    line,
                    column: name.clone(),
                    cell: cell.to_string(),
                });
            }
            v.push(x);
        }
        let key = (cells[0].to_string(), cells[1].to_string());
        if rows.contains_key(&key) {
            return Err(FeatureError::DuplicateKey {
                subject_id: key.0,
                item_id: key.1,
            });
        }
        rows.insert(key, v);
    }
    Ok(rows)
}

fn numbered_lines(source: &str) -> impl Iterator<Item = (usize, String)> + '_ {
    source
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r').to_string()))
        .filter(|(_, l)| !l.trim().is_empty())
}

/// Parses a feature CSV whose header must list exactly `schema`'s names.
pub fn load_feature_table<T: Scalar>(source: &str, schema: FeatureSchema) -> Result<FeatureTable<T>> {
    let mut lines = numbered_lines(source);
    let (_, header) = lines.next().ok_or(FeatureError::Empty)?;
    let expected = schema.header();
    let found: Vec<&str> = header.split(',').map(str::trim).collect();
    if found.join(",") != expected {
        return Err(FeatureError::HeaderMismatch {
            expected,
            found: header,
        });
    }
    let rows = parse_rows(&schema, lines)?;
    Ok(FeatureTable { schema, rows })
}

/// Parses a feature CSV, taking the schema from its header.
pub fn load_feature_table_inferred<T: Scalar>(
    source: &str,
    modality: Modality,
) -> Result<FeatureTable<T>> {
    let (_, header) = numbered_lines(source).next().ok_or(FeatureError::Empty)?;
    let cells: Vec<&str> = header.split(',').map(str::trim).collect();
    if cells.len() < 2 || cells[0] != "subject_id" || cells[1] != "item_id" {
        return Err(FeatureError::HeaderMismatch {
            expected: "subject_id,item_id,<features...>".into(),
            found: header,
        });
    }
    let schema = FeatureSchema::new(modality, cells[2..].iter().map(|s| s.to_string()).collect())?;
    load_feature_table(source, schema)
}

/// Feature-level fusion: concatenates audio then video vectors per key.
pub fn fuse<T: Scalar>(audio: &FeatureTable<T>, video: &FeatureTable<T>) -> Result<FeatureTable<T>> {
    let left: BTreeSet<&RowKey> = audio.rows.keys().collect();
    let right: BTreeSet<&RowKey> = video.rows.keys().collect();
    if left != right {
        return Err(FeatureError::KeyMismatch {
            only_left: left.difference(&right).map(|k| (*k).clone()).collect(),
            only_right: right.difference(&left).map(|k| (*k).clone()).collect(),
        });
    }
    let names = audio
        .schema
        .feature_names
        .iter()
        .chain(&video.schema.feature_names)
        .cloned()
        .collect();
    let schema = FeatureSchema::new(Modality::Fused, names)?;
    let rows = audio
        .rows
        .iter()
        .map(|(k, a)| {
            let mut v = a.clone();
            v.extend_from_slice(&video.rows[k]);
            (k.clone(), v)
        })
        .collect();
    Ok(FeatureTable { schema, rows })
}

/// Componentwise mean of one subject's item vectors.
pub fn aggregate_items<T: Scalar, S: AsRef<str>>(
    table: &FeatureTable<T>,
    subject_id: &str,
    item_ids: &[S],
) -> Result<Vec<T>> {
    if item_ids.is_empty() {
        return Err(FeatureError::EmptyItemList);
    }
    let mut acc = vec![T::zero(); table.dimension()];
    for item in item_ids {
        let row = table.row(subject_id, item.as_ref())?;
        for (a, x) in acc.iter_mut().zip(row) {
            *a = *a + *x;
        }
    }
    let n = T::from_usize_lossy(item_ids.len());
    Ok(acc.into_iter().map(|a| a / n).collect())
}

/// Per-feature z-scoring fitted on training rows only.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer<T: Scalar> {
    means: Vec<T>,
    scales: Vec<T>,
}

impl<T: Scalar> Standardizer<T> {
    /// Zero-variance columns keep scale 1 so they map to 0.
    pub fn fit(rows: &[Vec<T>]) -> Option<Self> {
        let first = rows.first()?;
        let d = first.len();
        let n = T::from_usize_lossy(rows.len());
        let mut means = vec![T::zero(); d];
        for r in rows {
            for (m, x) in means.iter_mut().zip(r) {
                *m = *m + *x;
            }
        }
        means.iter_mut().for_each(|m| *m = *m / n);
        let mut scales = vec![T::zero(); d];
        for r in rows {
            for ((s, x), m) in scales.iter_mut().zip(r).zip(&means) {
                *s = *s + (*x - *m) * (*x - *m);
            }
        }
        for s in scales.iter_mut() {
            let sd = (*s / n).sqrt();
            *s = if sd > T::zero() { sd } else { T::one() };
        }
        Some(Self { means, scales })
    }

    pub fn transform(&self, x: &[T]) -> Vec<T> {
        x.iter()
            .zip(&self.means)
            .zip(&self.scales)
            .map(|((x, m), s)| (*x - *m) / *s)
            .collect()
    }
}
