//! Label correction: a trained dual model judges the relevance of
//! non-clicked items and its scores replace their zero labels, either
//! through a sigmoid (soft labels) or by thresholding at the minimum score
//! among the clicked items (hard labels). Retraining then reuses the dual
//! trainer, from scratch or continuing from the judge checkpoint.

use crate::corpus::{ClickLog, LabeledList};
use crate::dla::{self, DualModel, DualTrainConfig, ListExample, ValidList};
use crate::error::{Error, Result};
use crate::nn::{Checkpoint, RankerParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorrectionMode {
    /// label = sigmoid(aux score)
    Sig,
    /// label = 1 if aux score >= min over clicked items' aux scores, else 0
    Min,
}

impl std::str::FromStr for CorrectionMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sig" => Ok(CorrectionMode::Sig),
            "min" => Ok(CorrectionMode::Min),
            other => Err(Error::InvalidArgument(format!(
                "unknown correction mode `{}` (expected sig|min)",
                other
            ))),
        }
    }
}

/// How the retrained ranker is initialized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitMode {
    /// fresh seeded initialization
    Scratch,
    /// continue from the auxiliary (judge) checkpoint
    Aux,
}

impl std::str::FromStr for InitMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "scratch" => Ok(InitMode::Scratch),
            "aux" => Ok(InitMode::Aux),
            other => Err(Error::InvalidArgument(format!(
                "unknown init mode `{}` (expected scratch|aux)",
                other
            ))),
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Correct the labels of one list. Clicked items keep label 1 and stay
/// propensity-eligible; non-clicked items get a corrected label from the
/// auxiliary scores. In min mode a list with zero clicks leaves every
/// non-clicked label at 0.
pub fn correct_labels(
    qid: &str,
    doc_ids: &[String],
    aux_scores: &[f64],
    clicks: &[u8],
    mode: CorrectionMode,
) -> Result<LabeledList> {
    if aux_scores.len() != clicks.len() || doc_ids.len() != clicks.len() {
        return Err(Error::ShapeMismatch(format!(
            "qid={}: aux scores, clicks and doc ids must align",
            qid
        )));
    }
    if aux_scores.iter().any(|a| !a.is_finite()) {
        return Err(Error::InvalidArgument(format!("qid={}: non-finite aux score", qid)));
    }
    let clicked_min = aux_scores
        .iter()
        .zip(clicks)
        .filter(|(_, c)| **c == 1)
        .map(|(a, _)| *a)
        .fold(f64::INFINITY, f64::min);

    let labels: Vec<f64> = aux_scores
        .iter()
        .zip(clicks)
        .map(|(a, c)| {
            if *c == 1 {
                1.0
            } else {
                match mode {
                    CorrectionMode::Sig => sigmoid(*a),
                    // clicked_min is +inf with zero clicks, so this stays 0
                    CorrectionMode::Min => f64::from(u8::from(*a >= clicked_min)),
                }
            }
        })
        .collect();

    Ok(LabeledList {
        qid: qid.to_string(),
        doc_ids: doc_ids.to_vec(),
        labels,
        propensity_eligible: clicks.to_vec(),
    })
}

/// Score every position of a click log with the auxiliary ranker and
/// correct its labels.
pub fn correct_click_log(
    log: &ClickLog,
    aux: &Checkpoint,
    features: &dyn Fn(&str, &str) -> Result<Vec<f64>>,
    mode: CorrectionMode,
) -> Result<LabeledList> {
    log.validate()?;
    let mut aux_scores = Vec::with_capacity(log.docs.len());
    for doc_id in &log.docs {
        aux_scores.push(aux.score(&features(&log.qid, doc_id)?)?);
    }
    correct_labels(&log.qid, &log.docs, &aux_scores, &log.clicks, mode)
}

/// Retrain a dual model on corrected labels. `Scratch` reinitializes the
/// ranker from the config seed; `Aux` continues from the judge checkpoint.
pub fn train_dla_lc(
    train: &[ListExample],
    valid: &[ValidList],
    config: &DualTrainConfig,
    init: InitMode,
    aux: &RankerParams,
) -> Result<DualModel> {
    let init_params = match init {
        InitMode::Scratch => None,
        InitMode::Aux => Some(aux.clone()),
    };
    dla::train_dual(train, valid, config, init_params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn doc_ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("d{}", i)).collect()
    }

    #[test]
    fn sig_mode_midpoint() {
        let out = correct_labels("q", &doc_ids(2), &[0.0, 0.0], &[1, 0], CorrectionMode::Sig).unwrap();
        assert_eq!(out.labels[0], 1.0);
        assert_relative_eq!(out.labels[1], 0.5);
        assert_eq!(out.propensity_eligible, vec![1, 0]);
    }

    #[test]
    fn min_mode_threshold() {
        // clicked aux scores {0.9, 0.2}: non-clicked 0.4 -> 1, 0.1 -> 0
        let aux = [0.9, 0.2, 0.4, 0.1];
        let clicks = [1, 1, 0, 0];
        let out = correct_labels("q", &doc_ids(4), &aux, &clicks, CorrectionMode::Min).unwrap();
        assert_eq!(out.labels, vec![1.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn min_mode_zero_clicks_keeps_zeros() {
        let out =
            correct_labels("q", &doc_ids(3), &[5.0, 1.0, -2.0], &[0, 0, 0], CorrectionMode::Min).unwrap();
        assert_eq!(out.labels, vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn degenerate_aux_reduces_to_clicks() {
        // aux scores below every clicked score: min-mode labels equal clicks
        let aux = [1.0, -9.0, -9.0, 2.0];
        let clicks = [1, 0, 0, 1];
        let out = correct_labels("q", &doc_ids(4), &aux, &clicks, CorrectionMode::Min).unwrap();
        let expected: Vec<f64> = clicks.iter().map(|c| *c as f64).collect();
        assert_eq!(out.labels, expected);
        assert_eq!(out.propensity_eligible, clicks.to_vec());
    }

    proptest! {
        #[test]
        fn label_ranges(
            aux in proptest::collection::vec(-20.0f64..20.0, 10),
            clicks in proptest::collection::vec(0u8..2, 10),
        ) {
            let ids = doc_ids(10);
            let sig = correct_labels("q", &ids, &aux, &clicks, CorrectionMode::Sig).unwrap();
            let min = correct_labels("q", &ids, &aux, &clicks, CorrectionMode::Min).unwrap();
            for (i, &c) in clicks.iter().enumerate() {
                if c == 1 {
                    // clicked labels never altered
                    prop_assert_eq!(sig.labels[i], 1.0);
                    prop_assert_eq!(min.labels[i], 1.0);
                } else {
                    prop_assert!(sig.labels[i] > 0.0 && sig.labels[i] < 1.0);
                    prop_assert!(min.labels[i] == 0.0 || min.labels[i] == 1.0);
                }
            }
        }

        #[test]
        fn sig_monotone_in_aux_score(
            aux in proptest::collection::vec(-20.0f64..20.0, 10),
        ) {
            let ids = doc_ids(10);
            let clicks = vec![0u8; 10];
            let out = correct_labels("q", &ids, &aux, &clicks, CorrectionMode::Sig).unwrap();
            for i in 0..10 {
                for j in 0..10 {
                    if aux[i] >= aux[j] {
                        prop_assert!(out.labels[i] >= out.labels[j]);
                    }
                }
            }
        }
    }
}
