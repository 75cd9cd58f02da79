//! Loading CE pairs from CSV or JSONL.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use crate::model::{CEPair, Dataset, Group, ModelError};

#[derive(Debug, Error)]
pub enum InputError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Invalid {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("duplicate CE pair id {0:?}")]
    DuplicateId(String),
    #[error("{0} contains no CE pairs")]
    Empty(PathBuf),
}

#[derive(Deserialize)]
struct CsvRow {
    id: String,
    cause: String,
    effect: String,
    #[serde(default)]
    dataset: String,
    #[serde(default)]
    message: String,
    #[serde(default)]
    group: String,
}

fn row_to_pair(row: CsvRow) -> Result<CEPair, ModelError> {
    let dataset: Dataset = row.dataset.parse()?;
    let mut pair = CEPair::new(row.id.trim(), row.cause, row.effect, dataset)?;
    if !row.message.trim().is_empty() {
        pair = pair.with_message(row.message);
    }
    if !row.group.trim().is_empty() {
        pair = pair.with_group(row.group.parse::<Group>()?);
    }
    Ok(pair)
}

/// Parses CSV text with header `id,cause,effect,dataset,message,group`.
/// `dataset`, `message` and `group` may be empty.
pub fn parse_ce_pairs_csv(text: &str, path: &Path) -> Result<Vec<CEPair>, InputError> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::Headers).from_reader(text.as_bytes());
    let mut pairs = Vec::new();
    for (i, row) in reader.deserialize::<CsvRow>().enumerate() {
        // Header is line 1.
        let line = i + 2;
        let invalid = |message: String| InputError::Invalid {
            path: path.to_path_buf(),
            line,
            message,
        };
        let row = row.map_err(|e| invalid(e.to_string()))?;
        pairs.push(row_to_pair(row).map_err(|e| invalid(e.to_string()))?);
    }
    Ok(pairs)
}

pub fn parse_ce_pairs_jsonl(text: &str, path: &Path) -> Result<Vec<CEPair>, InputError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str::<CEPair>(l).map_err(|e| InputError::Invalid {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Loads CE pairs, choosing the format by extension (`.csv`, otherwise JSONL).
/// Returns the pairs and the raw bytes for digesting.
pub fn load_ce_pairs(path: &Path) -> Result<(Vec<CEPair>, Vec<u8>), InputError> {
    let bytes = std::fs::read(path).map_err(|source| InputError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let text = String::from_utf8_lossy(&bytes);
    let is_csv = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    let pairs = if is_csv {
        parse_ce_pairs_csv(&text, path)?
    } else {
        parse_ce_pairs_jsonl(&text, path)?
    };
    if pairs.is_empty() {
        return Err(InputError::Empty(path.to_path_buf()));
    }
    let mut seen = std::collections::HashSet::new();
    for p in &pairs {
        if !seen.insert(p.id.as_str()) {
            return Err(InputError::DuplicateId(p.id.clone()));
        }
    }
    Ok((pairs, bytes))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_with_optional_columns() {
        let text = "id,cause,effect,dataset,message,group\n\
            t1,CO2 emissions,Ocean acidification,PolarIs4CAUS,\"Ocean acidification (pH inverse) is accelerating, a direct result of CO2 emissions.\",\n\
            t2,Business,Climate change,,,believer\n";
        let pairs = parse_ce_pairs_csv(text, Path::new("x.csv")).unwrap();
        assert_eq!(pairs.len(), 2);
        assert_eq!(pairs[0].dataset, Dataset::PolarIs4CAUS);
        assert!(pairs[0].source_message.as_deref().unwrap().contains("pH inverse"));
        assert_eq!(pairs[1].dataset, Dataset::Other);
        assert_eq!(pairs[1].group, Some(Group::Believer));
    }

    #[test]
    fn csv_errors_carry_line_numbers() {
        let text = "id,cause,effect,dataset,message,group\nt1,,x,,,\n";
        match parse_ce_pairs_csv(text, Path::new("x.csv")) {
            Err(InputError::Invalid { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn jsonl_and_duplicates() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pairs.jsonl");
        let line = r#"{"id":"a","cause_text":"x","effect_text":"y","dataset":"PolarIs3CAUS"}"#;
        std::fs::write(&path, format!("{line}\n\n")).unwrap();
        let (pairs, bytes) = load_ce_pairs(&path).unwrap();
        assert_eq!(pairs.len(), 1);
        assert!(!bytes.is_empty());
        std::fs::write(&path, format!("{line}\n{line}\n")).unwrap();
        assert!(matches!(load_ce_pairs(&path), Err(InputError::DuplicateId(_))));
    }
}
