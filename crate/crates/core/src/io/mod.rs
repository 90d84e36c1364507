//! File formats and report rendering.

mod render;
mod scores;

pub use render::{render_markdown, render_plots, write_bundle, PlotFile, ReportBundle};
pub use scores::{
    assemble_dataset, boundary_from_json, boundary_to_json, dataset_tables, format_score,
    parse_counterfactual_csv, parse_features_csv, parse_latents_csv, parse_scores_csv,
    write_counterfactual_csv, write_features_csv, write_latents_csv, write_scores_csv,
    BoundaryFile, CounterfactualScores, COUNTERFACTUAL_HEADER, SCORES_HEADER,
};

use std::io::Write;
use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("line {line}, column `{column}`: {reason}")]
    Schema {
        line: u64,
        column: String,
        reason: String,
    },
    #[error("malformed JSON: {0}")]
    Json(String),
    #[error("report is missing {0}")]
    IncompleteReport(String),
}

impl IoError {
    pub(crate) fn schema(line: u64, column: &str, reason: impl Into<String>) -> Self {
        IoError::Schema {
            line,
            column: column.to_string(),
            reason: reason.into(),
        }
    }

    pub(crate) fn file(path: &Path, source: std::io::Error) -> Self {
        IoError::File {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// Write a file by writing a sibling temporary file and renaming it over
/// the destination.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    if let Some(dir) = dir {
        std::fs::create_dir_all(dir)?;
    }
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    let tmp = path.with_file_name(format!(".{name}.tmp{}", std::process::id()));
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)
}

pub fn read_text(path: &Path) -> Result<String, IoError> {
    std::fs::read_to_string(path).map_err(|e| IoError::file(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<(), IoError> {
    write_atomic(path, text.as_bytes()).map_err(|e| IoError::file(path, e))
}

/// Pretty JSON with a trailing newline.
pub fn to_json<T: serde::Serialize>(value: &T) -> Result<String, IoError> {
    serde_json::to_string_pretty(value)
        .map(|s| s + "\n")
        .map_err(|e| IoError::Json(e.to_string()))
}

pub fn from_json<T: serde::de::DeserializeOwned>(text: &str) -> Result<T, IoError> {
    serde_json::from_str(text).map_err(|e| IoError::Json(e.to_string()))
}

/// Serde adapter for ratios that may be `+inf`, written as the string
/// `"inf"` since JSON has no infinity.
pub mod ratio {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Finite(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else if *v < 0.0 {
            s.serialize_str("-inf")
        } else {
            s.serialize_str("nan")
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Finite(v) => Ok(v),
            Repr::Text(t) => match t.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(serde::de::Error::custom(format!("not a ratio: {other}"))),
            },
        }
    }

    /// The same for values inside maps.
    pub mod map {
        use std::collections::BTreeMap;

        use serde::ser::SerializeMap;
        use serde::{Deserialize, Deserializer, Serialize, Serializer};

        #[derive(Serialize, Deserialize)]
        #[serde(transparent)]
        struct R(#[serde(with = "super")] f64);

        pub fn serialize<K: Serialize + Ord, S: Serializer>(
            m: &BTreeMap<K, f64>,
            s: S,
        ) -> Result<S::Ok, S::Error> {
            let mut out = s.serialize_map(Some(m.len()))?;
            for (k, v) in m {
                out.serialize_entry(k, &R(*v))?;
            }
            out.end()
        }

        pub fn deserialize<'de, K, D>(d: D) -> Result<BTreeMap<K, f64>, D::Error>
        where
            K: Deserialize<'de> + Ord,
            D: Deserializer<'de>,
        {
            let m: BTreeMap<K, R> = BTreeMap::deserialize(d)?;
            Ok(m.into_iter().map(|(k, r)| (k, r.0)).collect())
        }
    }
}
