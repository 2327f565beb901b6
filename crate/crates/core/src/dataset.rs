//! Image/score manifest: a CSV with header `id,path,split,score,region,noise`.

use std::collections::HashSet;
use std::fmt;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::{load_image, ImageBuffer, ImageError};

pub const MANIFEST_HEADER: [&str; 6] = ["id", "path", "split", "score", "region", "noise"];
pub const SCORE_MIN: f64 = 0.0;
pub const SCORE_MAX: f64 = 4.0;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read manifest {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest header is missing column `{column}` (expected `{}`)", MANIFEST_HEADER.join(","))]
    MissingColumn { column: String },
    #[error("manifest header has unexpected column layout: `{0}`")]
    BadHeader(String),
    #[error("row {row}: duplicate id `{id}`")]
    DuplicateId { row: usize, id: String },
    #[error("row {row}: score {score} outside [0, 4]")]
    ScoreOutOfRange { row: usize, score: f64 },
    #[error("row {row}: {reason}")]
    BadRow { row: usize, reason: String },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(format!("split must be `train` or `test`, got `{other}`")),
        }
    }
}

/// One CT slice with its radiologist mean score and optional metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub id: String,
    pub path: PathBuf,
    pub split: Split,
    pub score: Option<f64>,
    pub region: Option<String>,
    pub noise: Option<f64>,
}

impl ImageRecord {
    pub fn has_metadata(&self) -> bool {
        self.region.is_some() && self.noise.is_some()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub records: Vec<ImageRecord>,
    pub root: PathBuf,
}

impl Dataset {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &ImageRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    /// `(train, test)` record counts.
    pub fn counts(&self) -> (usize, usize) {
        let train = self.split(Split::Train).count();
        (train, self.records.len() - train)
    }

    pub fn resolve(&self, record: &ImageRecord) -> PathBuf {
        if record.path.is_absolute() {
            record.path.clone()
        } else {
            self.root.join(&record.path)
        }
    }

    pub fn load_image(&self, record: &ImageRecord) -> Result<ImageBuffer, ImageError> {
        load_image(&self.resolve(record))
    }

    pub fn get(&self, id: &str) -> Option<&ImageRecord> {
        self.records.iter().find(|r| r.id == id)
    }
}

/// Loads a manifest; relative image paths resolve against the manifest's directory.
pub fn load_manifest(path: &Path) -> Result<Dataset, DatasetError> {
    let file = std::fs::File::open(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    parse_manifest(file, root)
}

pub fn parse_manifest<R: Read>(reader: R, root: PathBuf) -> Result<Dataset, DatasetError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = rdr.headers()?.clone();
    for column in MANIFEST_HEADER {
        if !header.iter().any(|h| h == column) {
            return Err(DatasetError::MissingColumn {
                column: column.to_string(),
            });
        }
    }
    if header.len() != MANIFEST_HEADER.len() || header.iter().zip(MANIFEST_HEADER).any(|(a, b)| a != b) {
        return Err(DatasetError::BadHeader(header.iter().collect::<Vec<_>>().join(",")));
    }

    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (i, row) in rdr.records().enumerate() {
        // row numbers are 1-based data rows
        let row_no = i + 1;
        let row = row?;
        let bad = |reason: String| DatasetError::BadRow { row: row_no, reason };
        let id = row[0].trim().to_string();
        if id.is_empty() {
            return Err(bad("empty id".into()));
        }
        if !seen.insert(id.clone()) {
            return Err(DatasetError::DuplicateId { row: row_no, id });
        }
        let split: Split = row[2].trim().parse().map_err(bad)?;
        let score = parse_opt_f64(&row[3]).map_err(|e| bad(format!("score: {e}")))?;
        if let Some(s) = score {
            if !(SCORE_MIN..=SCORE_MAX).contains(&s) {
                return Err(DatasetError::ScoreOutOfRange { row: row_no, score: s });
            }
        } else if split == Split::Train {
            return Err(bad("training rows require a score".into()));
        }
        let region = Some(row[4].trim()).filter(|s| !s.is_empty()).map(str::to_string);
        let noise = parse_opt_f64(&row[5]).map_err(|e| bad(format!("noise: {e}")))?;
        if matches!(noise, Some(n) if n < 0.0) {
            return Err(bad("noise must be non-negative".into()));
        }
        records.push(ImageRecord {
            id,
            path: PathBuf::from(row[1].trim()),
            split,
            score,
            region,
            noise,
        });
    }
    Ok(Dataset { records, root })
}

fn parse_opt_f64(s: &str) -> Result<Option<f64>, String> {
    let s = s.trim();
    if s.is_empty() {
        return Ok(None);
    }
    let v: f64 = s.parse().map_err(|_| format!("`{s}` is not a number"))?;
    if !v.is_finite() {
        return Err(format!("`{s}` is not finite"));
    }
    Ok(Some(v))
}

/// Writes records in manifest order. Numbers use Rust's shortest round-trip
/// formatting, so reading the file back yields equal values.
pub fn write_manifest<W: Write>(writer: W, records: &[ImageRecord]) -> Result<(), DatasetError> {
    let mut wtr = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(writer);
    wtr.write_record(MANIFEST_HEADER)?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in records {
        wtr.write_record([
            r.id.as_str(),
            &r.path.to_string_lossy(),
            &r.split.to_string(),
            &opt(r.score),
            r.region.as_deref().unwrap_or(""),
            &opt(r.noise),
        ])?;
    }
    wtr.flush().map_err(|e| DatasetError::Csv(e.into()))?;
    Ok(())
}

pub fn save_manifest(path: &Path, records: &[ImageRecord]) -> Result<(), DatasetError> {
    let io_err = |source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut buf = Vec::new();
    write_manifest(&mut buf, records)?;
    std::fs::write(path, buf).map_err(io_err)
}
