use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::HumanEvalError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum YesNo {
    Yes,
    No,
}

impl YesNo {
    pub fn is_yes(self) -> bool {
        self == YesNo::Yes
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub session_id: String,
    pub annotator_id: String,
    pub chain_id: String,
    pub integrity_judgment: YesNo,
    pub coherence_judgment: YesNo,
    pub submitted_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurveyRecord {
    pub annotator_id: String,
    /// Likert 1 to 5.
    pub difficulty: u8,
    pub can_construct_chain: YesNo,
    pub comparison_note: String,
}

fn to_csv<T: Serialize>(rows: &[T]) -> Result<String, HumanEvalError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row).map_err(|e| HumanEvalError::Csv(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| HumanEvalError::Csv(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| HumanEvalError::Csv(e.to_string()))
}

fn from_csv<T: for<'de> Deserialize<'de>>(text: &str) -> Result<Vec<T>, HumanEvalError> {
    csv::ReaderBuilder::new()
        .trim(csv::Trim::Headers)
        .from_reader(text.as_bytes())
        .deserialize()
        .enumerate()
        .map(|(i, row)| row.map_err(|e| HumanEvalError::Csv(format!("row {}: {e}", i + 1))))
        .collect()
}

pub fn annotations_to_csv(records: &[AnnotationRecord]) -> Result<String, HumanEvalError> {
    if records.is_empty() {
        return Ok("session_id,annotator_id,chain_id,integrity_judgment,coherence_judgment,submitted_at\n".into());
    }
    to_csv(records)
}

pub fn annotations_from_csv(text: &str) -> Result<Vec<AnnotationRecord>, HumanEvalError> {
    from_csv(text)
}

pub fn surveys_to_csv(records: &[SurveyRecord]) -> Result<String, HumanEvalError> {
    if records.is_empty() {
        return Ok("annotator_id,difficulty,can_construct_chain,comparison_note\n".into());
    }
    to_csv(records)
}

/// Parses surveys and rejects out-of-range difficulty ratings.
pub fn surveys_from_csv(text: &str) -> Result<Vec<SurveyRecord>, HumanEvalError> {
    let rows: Vec<SurveyRecord> = from_csv(text)?;
    if let Some(bad) = rows.iter().find(|r| !(1..=5).contains(&r.difficulty)) {
        return Err(HumanEvalError::InvalidDifficulty(bad.difficulty));
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    #[test]
    fn annotations_round_trip() {
        let rec = AnnotationRecord {
            session_id: "s".into(),
            annotator_id: "a1".into(),
            chain_id: "ce:p/m@t:0".into(),
            integrity_judgment: YesNo::Yes,
            coherence_judgment: YesNo::No,
            submitted_at: Utc.with_ymd_and_hms(2025, 3, 1, 12, 0, 0).unwrap(),
        };
        let text = annotations_to_csv(std::slice::from_ref(&rec)).unwrap();
        assert!(text.starts_with("session_id,annotator_id,chain_id,integrity_judgment"));
        assert!(text.contains(",yes,no,2025-03-01T12:00:00Z"));
        assert_eq!(annotations_from_csv(&text).unwrap(), vec![rec]);
        assert!(annotations_from_csv(&annotations_to_csv(&[]).unwrap()).unwrap().is_empty());
    }

    #[test]
    fn surveys_round_trip_and_validate() {
        let rec = SurveyRecord {
            annotator_id: "a1".into(),
            difficulty: 3,
            can_construct_chain: YesNo::Yes,
            comparison_note: "shorter, with fewer steps".into(),
        };
        let text = surveys_to_csv(std::slice::from_ref(&rec)).unwrap();
        assert_eq!(surveys_from_csv(&text).unwrap(), vec![rec]);
        let bad = "annotator_id,difficulty,can_construct_chain,comparison_note\na,6,no,x\n";
        assert_eq!(surveys_from_csv(bad), Err(HumanEvalError::InvalidDifficulty(6)));
        assert!(matches!(
            annotations_from_csv("session_id,annotator_id\ns,a\n"),
            Err(HumanEvalError::Csv(_))
        ));
    }
}
