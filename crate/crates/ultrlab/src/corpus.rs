//! Data model and on-disk formats: corpora, click logs, LETOR feature files,
//! TREC-style run files, and graded truth files.
//!
//! All record files are line-delimited (one JSON record per line, UTF-8)
//! except feature files, which use the LETOR interchange format
//! `<label> qid:<qid> 1:<v> ... 24:<v> # <doc_id>`.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fixed SERP length: every click log holds exactly this many positions.
pub const LIST_LEN: usize = 10;
/// Dimension of the heuristic feature vector.
pub const NUM_FEATURES: usize = 24;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub title: String,
    #[serde(rename = "abstract")]
    pub abstract_: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub qid: String,
    pub text: String,
}

/// One logged impression: a ranked list of 10 documents and its click vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClickLog {
    pub qid: String,
    pub docs: Vec<String>,
    pub clicks: Vec<u8>,
}

impl ClickLog {
    pub fn validate(&self) -> Result<()> {
        if self.docs.len() != LIST_LEN {
            return Err(Error::invalid(
                format!("qid={}", self.qid),
                format!("expected {} docs, got {}", LIST_LEN, self.docs.len()),
            ));
        }
        if self.clicks.len() != LIST_LEN {
            return Err(Error::invalid(
                format!("qid={}", self.qid),
                format!("expected {} clicks, got {}", LIST_LEN, self.clicks.len()),
            ));
        }
        if let Some(c) = self.clicks.iter().find(|c| **c > 1) {
            return Err(Error::invalid(
                format!("qid={}", self.qid),
                format!("click flag {} not in {{0,1}}", c),
            ));
        }
        Ok(())
    }

    pub fn last_click_position(&self) -> Option<usize> {
        self.clicks.iter().rposition(|&c| c == 1)
    }
}

/// A list with (possibly corrected) real-valued labels. `propensity_eligible`
/// is 1 exactly for the items that were originally clicked.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledList {
    pub qid: String,
    pub doc_ids: Vec<String>,
    pub labels: Vec<f64>,
    pub propensity_eligible: Vec<u8>,
}

impl LabeledList {
    pub fn validate(&self) -> Result<()> {
        if self.doc_ids.len() != self.labels.len()
            || self.doc_ids.len() != self.propensity_eligible.len()
        {
            return Err(Error::invalid(
                format!("qid={}", self.qid),
                "doc_ids, labels and propensity_eligible lengths differ",
            ));
        }
        if self.labels.iter().any(|l| !l.is_finite()) {
            return Err(Error::invalid(
                format!("qid={}", self.qid),
                "non-finite label",
            ));
        }
        Ok(())
    }

    /// Lift a raw click log into a labeled list (labels = clicks).
    pub fn from_clicks(log: &ClickLog) -> Self {
        LabeledList {
            qid: log.qid.clone(),
            doc_ids: log.docs.clone(),
            labels: log.clicks.iter().map(|&c| c as f64).collect(),
            propensity_eligible: log.clicks.clone(),
        }
    }
}

/// One LETOR feature line: graded label, query, 24 features, doc id.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub label: u32,
    pub qid: String,
    pub features: Vec<f64>,
    pub doc_id: String,
}

/// Graded relevance truth, one record per (query, document) pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub qid: String,
    pub doc_id: String,
    pub grade: u32,
}

/// (qid, doc_id) -> grade lookup. Pairs absent from the table have grade 0.
#[derive(Debug, Clone, Default)]
pub struct TruthTable {
    grades: HashMap<(String, String), u32>,
}

impl TruthTable {
    pub fn from_records(records: Vec<TruthRecord>) -> Self {
        let mut grades = HashMap::with_capacity(records.len());
        for r in records {
            grades.insert((r.qid, r.doc_id), r.grade);
        }
        TruthTable { grades }
    }

    pub fn grade(&self, qid: &str, doc_id: &str) -> u32 {
        self.grades
            .get(&(qid.to_string(), doc_id.to_string()))
            .copied()
            .unwrap_or(0)
    }

    pub fn get(&self, qid: &str, doc_id: &str) -> Option<u32> {
        self.grades.get(&(qid.to_string(), doc_id.to_string())).copied()
    }

    pub fn len(&self) -> usize {
        self.grades.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grades.is_empty()
    }

    pub fn records(&self) -> Vec<TruthRecord> {
        let sorted: BTreeMap<_, _> = self.grades.iter().collect();
        sorted
            .into_iter()
            .map(|((qid, doc_id), grade)| TruthRecord {
                qid: qid.clone(),
                doc_id: doc_id.clone(),
                grade: *grade,
            })
            .collect()
    }
}

/// Parse one LETOR line: `<label> qid:<qid> 1:<v> ... 24:<v> # <doc_id>`.
/// Feature indices must be 1..=24 and contiguous.
pub fn parse_letor_line(line: &str) -> Result<FeatureRow> {
    parse_letor_line_at(line, 1)
}

/// Same as [`parse_letor_line`], reporting `line_no` in errors.
pub fn parse_letor_line_at(line: &str, line_no: usize) -> Result<FeatureRow> {
    let err = |column: usize, msg: String| Error::Parse {
        line: line_no,
        column,
        msg,
    };
    let (body, comment) = match line.split_once('#') {
        Some((b, c)) => (b, c.trim()),
        None => return Err(err(line.len(), "missing `# <doc_id>` comment".into())),
    };
    if comment.is_empty() {
        return Err(err(line.len(), "empty doc_id after `#`".into()));
    }
    let doc_id = comment.to_string();

    let mut tokens = body.split_whitespace();
    // Track a 1-based column as the byte offset of each token.
    let col_of = |tok: &str| body.find(tok).map(|o| o + 1).unwrap_or(1);

    let label_tok = tokens.next().ok_or_else(|| err(1, "empty line".into()))?;
    let label: u32 = label_tok
        .parse()
        .map_err(|_| err(col_of(label_tok), format!("invalid label `{}`", label_tok)))?;

    let qid_tok = tokens
        .next()
        .ok_or_else(|| err(body.len(), "missing qid field".into()))?;
    let qid = qid_tok
        .strip_prefix("qid:")
        .ok_or_else(|| err(col_of(qid_tok), format!("expected `qid:<id>`, got `{}`", qid_tok)))?;
    if qid.is_empty() {
        return Err(err(col_of(qid_tok), "empty qid".into()));
    }

    let mut features = Vec::with_capacity(NUM_FEATURES);
    for tok in tokens {
        let column = col_of(tok);
        let (idx_s, val_s) = tok
            .split_once(':')
            .ok_or_else(|| err(column, format!("expected `<index>:<value>`, got `{}`", tok)))?;
        let idx: usize = idx_s
            .parse()
            .map_err(|_| err(column, format!("invalid feature index `{}`", idx_s)))?;
        if idx != features.len() + 1 {
            return Err(err(
                column,
                format!("feature index {} out of order, expected {}", idx, features.len() + 1),
            ));
        }
        let val: f64 = val_s
            .parse()
            .map_err(|_| err(column, format!("invalid feature value `{}`", val_s)))?;
        if !val.is_finite() {
            return Err(err(column, format!("non-finite feature value `{}`", val_s)));
        }
        features.push(val);
    }
    if features.len() != NUM_FEATURES {
        return Err(err(
            body.len(),
            format!("expected {} features, got {}", NUM_FEATURES, features.len()),
        ));
    }
    Ok(FeatureRow {
        label,
        qid: qid.to_string(),
        features,
        doc_id,
    })
}

pub fn format_letor_line(row: &FeatureRow) -> String {
    let mut s = format!("{} qid:{}", row.label, row.qid);
    for (i, v) in row.features.iter().enumerate() {
        s.push_str(&format!(" {}:{}", i + 1, v));
    }
    s.push_str(&format!(" # {}", row.doc_id));
    s
}

/// Write `content` to `path` atomically (write to a sibling temp file, then rename).
pub fn write_atomic(path: &Path, content: &str) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let tmp = dir.join(format!(
        ".{}.tmp",
        path.file_name().map(|n| n.to_string_lossy()).unwrap_or_default()
    ));
    {
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(content.as_bytes()).map_err(|e| Error::io(&tmp, e))?;
        f.flush().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(content.lines().map(|l| l.to_string()).collect())
}

/// Load a line-delimited JSON record file.
pub fn load_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in read_lines(path)?.into_iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: T = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            column: e.column(),
            msg: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

/// Serialize records as line-delimited JSON and write atomically.
pub fn save_jsonl<T: Serialize>(records: &[T], path: &Path) -> Result<()> {
    let mut content = String::new();
    for r in records {
        content.push_str(&serde_json::to_string(r).expect("record serializes"));
        content.push('\n');
    }
    write_atomic(path, &content)
}

pub fn load_documents(path: &Path) -> Result<Vec<Document>> {
    let docs: Vec<Document> = load_jsonl(path)?;
    let mut seen = HashSet::new();
    for d in &docs {
        if d.doc_id.is_empty() {
            return Err(Error::invalid(path.display().to_string(), "empty doc_id"));
        }
        if !seen.insert(d.doc_id.clone()) {
            return Err(Error::DuplicateDoc(d.doc_id.clone()));
        }
    }
    Ok(docs)
}

pub fn load_queries(path: &Path) -> Result<Vec<Query>> {
    let queries: Vec<Query> = load_jsonl(path)?;
    let mut seen = HashSet::new();
    for q in &queries {
        if q.qid.is_empty() {
            return Err(Error::invalid(path.display().to_string(), "empty qid"));
        }
        if !seen.insert(q.qid.clone()) {
            return Err(Error::DuplicateQuery(q.qid.clone()));
        }
    }
    Ok(queries)
}

/// Load and validate a click log file. Record order is preserved.
pub fn load_click_log(path: &Path) -> Result<Vec<ClickLog>> {
    let logs: Vec<ClickLog> = load_jsonl(path)?;
    let mut seen = HashSet::new();
    for log in &logs {
        log.validate()?;
        if !seen.insert(log.qid.clone()) {
            return Err(Error::DuplicateQuery(log.qid.clone()));
        }
    }
    Ok(logs)
}

pub fn load_labeled_lists(path: &Path) -> Result<Vec<LabeledList>> {
    let lists: Vec<LabeledList> = load_jsonl(path)?;
    for l in &lists {
        l.validate()?;
    }
    Ok(lists)
}

pub fn load_truth(path: &Path) -> Result<TruthTable> {
    Ok(TruthTable::from_records(load_jsonl(path)?))
}

pub fn load_feature_file(path: &Path) -> Result<Vec<FeatureRow>> {
    let mut rows = Vec::new();
    for (i, line) in read_lines(path)?.into_iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        rows.push(parse_letor_line_at(&line, i + 1)?);
    }
    Ok(rows)
}

pub fn save_feature_file(rows: &[FeatureRow], path: &Path) -> Result<()> {
    let mut content = String::new();
    for r in rows {
        content.push_str(&format_letor_line(r));
        content.push('\n');
    }
    write_atomic(path, &content)
}

/// Feature lookup keyed by (qid, doc_id).
#[derive(Debug, Clone, Default)]
pub struct FeatureStore {
    rows: HashMap<(String, String), FeatureRow>,
}

impl FeatureStore {
    pub fn from_rows(rows: Vec<FeatureRow>) -> Self {
        let mut map = HashMap::with_capacity(rows.len());
        for r in rows {
            map.insert((r.qid.clone(), r.doc_id.clone()), r);
        }
        FeatureStore { rows: map }
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(Self::from_rows(load_feature_file(path)?))
    }

    pub fn get(&self, qid: &str, doc_id: &str) -> Option<&FeatureRow> {
        self.rows.get(&(qid.to_string(), doc_id.to_string()))
    }

    pub fn features(&self, qid: &str, doc_id: &str) -> Result<&[f64]> {
        self.get(qid, doc_id)
            .map(|r| r.features.as_slice())
            .ok_or_else(|| Error::MissingGrade {
                qid: qid.to_string(),
                doc_id: doc_id.to_string(),
            })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Write a TREC-style run file: `<qid> Q0 <doc_id> <rank> <score> <tag>`.
/// Ranks ascend from 1 within a query, ordered by descending score, ties
/// broken by doc_id ascending.
pub fn write_run_file(
    rankings: &[(String, Vec<(String, f64)>)],
    tag: &str,
    path: &Path,
) -> Result<()> {
    let mut content = String::new();
    for (qid, scored) in rankings {
        for (doc_id, score) in scored {
            if !score.is_finite() {
                return Err(Error::invalid(
                    format!("qid={}", qid),
                    format!("non-finite score for doc {}", doc_id),
                ));
            }
        }
        let mut scored = scored.clone();
        scored.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .expect("finite scores")
                .then_with(|| a.0.cmp(&b.0))
        });
        for (rank, (doc_id, score)) in scored.iter().enumerate() {
            content.push_str(&format!("{} Q0 {} {} {} {}\n", qid, doc_id, rank + 1, score, tag));
        }
    }
    write_atomic(path, &content)
}

/// Parse a run file back into per-query ranked doc lists (rank order).
pub fn load_run_file(path: &Path) -> Result<Vec<(String, Vec<(String, f64)>)>> {
    let mut out: Vec<(String, Vec<(String, f64)>)> = Vec::new();
    for (i, line) in read_lines(path)?.into_iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 6 {
            return Err(Error::Parse {
                line: i + 1,
                column: 1,
                msg: format!("expected 6 fields, got {}", fields.len()),
            });
        }
        let qid = fields[0];
        let doc_id = fields[2].to_string();
        let score: f64 = fields[4].parse().map_err(|_| Error::Parse {
            line: i + 1,
            column: 1,
            msg: format!("invalid score `{}`", fields[4]),
        })?;
        match out.last_mut() {
            Some((last_qid, docs)) if last_qid == qid => docs.push((doc_id, score)),
            _ => out.push((qid.to_string(), vec![(doc_id, score)])),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use tempfile::tempdir;

    fn sample_row() -> FeatureRow {
        FeatureRow {
            label: 2,
            qid: "7".into(),
            features: (0..NUM_FEATURES).map(|i| i as f64 / 4.0).collect(),
            doc_id: "d42".into(),
        }
    }

    #[test]
    fn parse_letor_roundtrip() {
        let row = sample_row();
        let line = format_letor_line(&row);
        assert_eq!(parse_letor_line(&line).unwrap(), row);
    }

    #[test]
    fn parse_letor_basic() {
        let mut line = "2 qid:7".to_string();
        for i in 1..=NUM_FEATURES {
            line.push_str(&format!(" {}:{}", i, if i == 1 { 0.5 } else { 0.0 }));
        }
        line.push_str(" # d42");
        let row = parse_letor_line(&line).unwrap();
        assert_eq!(row.label, 2);
        assert_eq!(row.qid, "7");
        assert_eq!(row.doc_id, "d42");
        assert_eq!(row.features[0], 0.5);
    }

    #[test]
    fn parse_letor_invalid_label() {
        let line = format_letor_line(&sample_row()).replacen("2 ", "x ", 1);
        let err = parse_letor_line(&line).unwrap_err();
        assert!(err.to_string().contains("invalid label"), "{}", err);
    }

    #[test]
    fn parse_letor_wrong_feature_count() {
        let mut line = "2 qid:7".to_string();
        for i in 1..=23 {
            line.push_str(&format!(" {}:0.0", i));
        }
        line.push_str(" # d1");
        let err = parse_letor_line(&line).unwrap_err();
        assert!(err.to_string().contains("expected 24 features"), "{}", err);
    }

    #[test]
    fn parse_letor_non_contiguous_index() {
        let mut line = "2 qid:7".to_string();
        for i in 1..=NUM_FEATURES {
            let idx = if i == 5 { 99 } else { i };
            line.push_str(&format!(" {}:0.0", idx));
        }
        line.push_str(" # d1");
        assert!(parse_letor_line(&line).is_err());
    }

    #[test]
    fn parse_letor_non_finite() {
        let mut line = "2 qid:7 1:NaN".to_string();
        for i in 2..=NUM_FEATURES {
            line.push_str(&format!(" {}:0.0", i));
        }
        line.push_str(" # d1");
        let err = parse_letor_line(&line).unwrap_err();
        assert!(err.to_string().contains("non-finite"), "{}", err);
    }

    #[test]
    fn click_log_validation() {
        let good = ClickLog {
            qid: "q1".into(),
            docs: (0..10).map(|i| format!("d{}", i)).collect(),
            clicks: vec![0, 1, 0, 0, 0, 0, 0, 0, 0, 0],
        };
        assert!(good.validate().is_ok());

        let mut short = good.clone();
        short.docs.pop();
        assert!(short.validate().is_err());

        let mut bad_flag = good.clone();
        bad_flag.clicks[0] = 2;
        assert!(bad_flag.validate().is_err());
    }

    #[test]
    fn click_log_file_roundtrip_and_errors() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("clicks.jsonl");
        let logs = vec![
            ClickLog {
                qid: "q1".into(),
                docs: (0..10).map(|i| format!("d{}", i)).collect(),
                clicks: vec![1, 0, 0, 0, 0, 0, 0, 0, 0, 0],
            },
            ClickLog {
                qid: "q2".into(),
                docs: (0..10).map(|i| format!("e{}", i)).collect(),
                clicks: vec![0; 10],
            },
        ];
        save_jsonl(&logs, &path).unwrap();
        assert_eq!(load_click_log(&path).unwrap(), logs);

        // duplicate qid rejected
        let dup = vec![logs[0].clone(), logs[0].clone()];
        save_jsonl(&dup, &path).unwrap();
        assert!(load_click_log(&path).is_err());

        // empty file -> empty list
        write_atomic(&path, "").unwrap();
        assert!(load_click_log(&path).unwrap().is_empty());
    }

    #[test]
    fn run_file_ordering_and_ties() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("run.txt");
        let rankings = vec![(
            "q1".to_string(),
            vec![("dB".to_string(), 1.0), ("dA".to_string(), 2.0)],
        )];
        write_run_file(&rankings, "test", &path).unwrap();
        let content = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = content.lines().collect();
        assert_eq!(lines[0], "q1 Q0 dA 1 2 test");
        assert_eq!(lines[1], "q1 Q0 dB 2 1 test");

        // tie broken by doc_id ascending
        let rankings = vec![(
            "q1".to_string(),
            vec![("dB".to_string(), 1.0), ("dA".to_string(), 1.0)],
        )];
        write_run_file(&rankings, "test", &path).unwrap();
        let content = std::fs::read_to_string(&path).unwrap();
        assert!(content.lines().next().unwrap().starts_with("q1 Q0 dA 1"));

        // empty ranking set -> empty file
        write_run_file(&[], "test", &path).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "");
    }

    #[test]
    fn duplicate_doc_id_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("docs.jsonl");
        let docs = vec![
            Document {
                doc_id: "d1".into(),
                title: "a".into(),
                abstract_: "b".into(),
            },
            Document {
                doc_id: "d1".into(),
                title: "c".into(),
                abstract_: "d".into(),
            },
        ];
        save_jsonl(&docs, &path).unwrap();
        assert!(matches!(load_documents(&path), Err(Error::DuplicateDoc(_))));
    }

    proptest! {
        #[test]
        fn letor_roundtrip_prop(
            label in 0u32..5,
            qid in "[a-z0-9]{1,8}",
            doc_id in "[a-z0-9_]{1,8}",
            features in proptest::collection::vec(-1e3f64..1e3, NUM_FEATURES),
        ) {
            let row = FeatureRow { label, qid, features, doc_id };
            let parsed = parse_letor_line(&format_letor_line(&row)).unwrap();
            prop_assert_eq!(parsed, row);
        }

        #[test]
        fn mutated_click_records_rejected(
            n_docs in 0usize..15,
            n_clicks in 0usize..15,
            flag in 0u8..4,
        ) {
            let log = ClickLog {
                qid: "q".into(),
                docs: (0..n_docs).map(|i| format!("d{}", i)).collect(),
                clicks: (0..n_clicks).map(|_| flag).collect(),
            };
            let valid = n_docs == LIST_LEN && n_clicks == LIST_LEN && flag <= 1;
            prop_assert_eq!(log.validate().is_ok(), valid);
        }
    }
}
