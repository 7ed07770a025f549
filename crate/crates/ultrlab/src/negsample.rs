//! List reconstruction with random and hard negatives, and the listwise
//! softmax cross-entropy trainer over the rebuilt lists. Position bias is
//! deliberately not modeled here: kept clicked items are treated as
//! relevant and every generated negative as irrelevant.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::corpus::{ClickLog, LIST_LEN};
use crate::dla::{self, DualTrainConfig, EpochMetrics, ListExample, ValidList};
use crate::error::{Error, Result};
use crate::nn::{self, FeatureNorm, ForwardCache, RankerParams};
use crate::simulate::substream_seed;
use crate::textfeat::{self, InvertedIndex};

/// Pool size handed to BM25 retrieval when pre-generating hard negatives.
pub const DEFAULT_HARD_POOL: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    /// keep only the clicked items
    ClickOnly,
    /// keep positions up to and including the last clicked item
    LastClick,
}

impl std::str::FromStr for Scheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "click-only" | "click_only" => Ok(Scheme::ClickOnly),
            "last-click" | "last_click" => Ok(Scheme::LastClick),
            other => Err(Error::InvalidArgument(format!(
                "unknown scheme `{}` (expected click-only|last-click)",
                other
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NegSpec {
    pub scheme: Scheme,
    pub n_hard: usize,
    pub n_random: usize,
    pub seed: u64,
}

impl NegSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_hard > 200 {
            return Err(Error::InvalidArgument(format!(
                "n_hard {} exceeds the supported maximum 200",
                self.n_hard
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Origin {
    Kept,
    RandomNeg,
    HardNeg,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub doc_id: String,
    pub label: u8,
    pub origin: Origin,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructedList {
    pub qid: String,
    pub entries: Vec<Entry>,
}

/// Sample `n` hard negatives from a BM25-scored candidate pool. The
/// max-score and min-score candidates are always included; the rest are
/// chosen by drawing target scores from a Gaussian fitted to the pool and
/// taking the nearest unused candidate (ties by doc_id ascending). Returns
/// the whole pool when it holds fewer than `n` candidates.
pub fn sample_hard_negatives(candidates: &[(String, f64)], n: usize, seed: u64) -> Vec<String> {
    if candidates.len() <= n {
        return candidates.iter().map(|(d, _)| d.clone()).collect();
    }
    if n == 0 {
        return Vec::new();
    }
    let max_idx = pick_extreme(candidates, true);
    if n == 1 {
        return vec![candidates[max_idx].0.clone()];
    }
    let min_idx = pick_extreme(candidates, false);

    let mut chosen = vec![max_idx, min_idx];
    let mut used: HashSet<usize> = chosen.iter().copied().collect();

    let scores: Vec<f64> = candidates.iter().map(|(_, s)| *s).collect();
    let mean = scores.iter().sum::<f64>() / scores.len() as f64;
    let var = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / scores.len() as f64;
    let normal = Normal::new(mean, var.sqrt().max(1e-12)).expect("valid std");

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    while chosen.len() < n {
        let target = normal.sample(&mut rng);
        let mut best: Option<usize> = None;
        for (i, (doc_id, score)) in candidates.iter().enumerate() {
            if used.contains(&i) {
                continue;
            }
            let better = match best {
                None => true,
                Some(b) => {
                    let (bd, bs) = (&candidates[b].0, candidates[b].1);
                    let (di, db) = ((score - target).abs(), (bs - target).abs());
                    di < db || (di == db && doc_id < bd)
                }
            };
            if better {
                best = Some(i);
            }
        }
        let idx = best.expect("pool larger than n");
        used.insert(idx);
        chosen.push(idx);
    }
    chosen.into_iter().map(|i| candidates[i].0.clone()).collect()
}

fn pick_extreme(candidates: &[(String, f64)], max: bool) -> usize {
    let mut best = 0;
    for (i, (doc_id, score)) in candidates.iter().enumerate().skip(1) {
        let (bd, bs) = (&candidates[best].0, candidates[best].1);
        let better = if max { *score > bs } else { *score < bs };
        if better || (*score == bs && doc_id < bd) {
            best = i;
        }
    }
    best
}

/// Rebuild one query's list: keep items per the scheme, refill to length 10
/// with random negatives, then append `spec.n_random` extra random
/// negatives and the supplied hard negatives. Returns `None` for lists with
/// no clicks (no positive item, so the listwise loss is undefined).
pub fn reconstruct_list(
    log: &ClickLog,
    spec: &NegSpec,
    random_pool: &[String],
    hard_negs: &[String],
) -> Result<Option<ReconstructedList>> {
    log.validate()?;
    spec.validate()?;
    if log.clicks.iter().all(|&c| c == 0) {
        return Ok(None);
    }
    let original: HashSet<&str> = log.docs.iter().map(|d| d.as_str()).collect();
    if let Some(d) = random_pool.iter().find(|d| original.contains(d.as_str())) {
        return Err(Error::invalid(
            format!("qid={}", log.qid),
            format!("random pool contains original doc {}", d),
        ));
    }

    let mut entries: Vec<Entry> = Vec::new();
    match spec.scheme {
        Scheme::ClickOnly => {
            for (doc, &click) in log.docs.iter().zip(&log.clicks) {
                if click == 1 {
                    entries.push(Entry {
                        doc_id: doc.clone(),
                        label: 1,
                        origin: Origin::Kept,
                    });
                }
            }
        }
        Scheme::LastClick => {
            let last = log.last_click_position().expect("has a click");
            for (doc, &click) in log.docs.iter().zip(&log.clicks).take(last + 1) {
                entries.push(Entry {
                    doc_id: doc.clone(),
                    label: click,
                    origin: Origin::Kept,
                });
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(substream_seed(spec.seed, &format!("neg/{}", log.qid)));
    let mut in_list: HashSet<String> = entries.iter().map(|e| e.doc_id.clone()).collect();
    for h in hard_negs {
        in_list.insert(h.clone());
    }

    let n_fill = LIST_LEN.saturating_sub(entries.len()) + spec.n_random;
    let mut pool_order: Vec<usize> = (0..random_pool.len()).collect();
    pool_order.shuffle(&mut rng);
    let mut pool_iter = pool_order.into_iter();
    for _ in 0..n_fill {
        let doc_id = loop {
            match pool_iter.next() {
                Some(i) => {
                    let d = &random_pool[i];
                    if !in_list.contains(d) {
                        break d.clone();
                    }
                }
                None => {
                    return Err(Error::invalid(
                        format!("qid={}", log.qid),
                        "random pool exhausted while refilling list",
                    ))
                }
            }
        };
        in_list.insert(doc_id.clone());
        entries.push(Entry {
            doc_id,
            label: 0,
            origin: Origin::RandomNeg,
        });
    }

    for h in hard_negs {
        if original.contains(h.as_str()) {
            return Err(Error::invalid(
                format!("qid={}", log.qid),
                format!("hard negative {} is in the original list", h),
            ));
        }
        entries.push(Entry {
            doc_id: h.clone(),
            label: 0,
            origin: Origin::HardNeg,
        });
    }

    Ok(Some(ReconstructedList {
        qid: log.qid.clone(),
        entries,
    }))
}

/// Listwise softmax cross-entropy: -sum over label-1 items of
/// log softmax(scores). Negatives enter only through the denominator.
pub fn listwise_loss(scores: &[f64], labels: &[f64]) -> Result<f64> {
    if !labels.iter().any(|l| *l > 0.0) {
        return Err(Error::InvalidArgument("listwise loss needs at least one positive item".into()));
    }
    dla::ranking_loss(scores, labels, &vec![1.0; scores.len()])
}

pub fn listwise_loss_grad(scores: &[f64], labels: &[f64]) -> Result<Vec<f64>> {
    if !labels.iter().any(|l| *l > 0.0) {
        return Err(Error::InvalidArgument("listwise loss needs at least one positive item".into()));
    }
    dla::ranking_loss_grad(scores, labels, &vec![1.0; scores.len()])
}

/// Outcome of rebuilding a whole click log.
pub struct ReconstructionOutcome {
    pub lists: Vec<ReconstructedList>,
    /// zero-click queries dropped under the scheme
    pub skipped: usize,
}

/// Rebuild every list in a click log: retrieve a BM25 pool per query,
/// sample hard negatives from it, and fill with corpus-wide random
/// negatives. Deterministic per `spec.seed`.
pub fn reconstruct_all(
    logs: &[ClickLog],
    queries: &std::collections::HashMap<String, String>,
    index: &InvertedIndex,
    spec: &NegSpec,
) -> Result<ReconstructionOutcome> {
    spec.validate()?;
    let mut lists = Vec::with_capacity(logs.len());
    let mut skipped = 0usize;
    for log in logs {
        let query_text = queries
            .get(&log.qid)
            .ok_or_else(|| Error::invalid(format!("qid={}", log.qid), "query text not found"))?;
        let original: HashSet<&str> = log.docs.iter().map(|d| d.as_str()).collect();

        let candidates: Vec<(String, f64)> = textfeat::retrieve_topk(query_text, index, DEFAULT_HARD_POOL)
            .into_iter()
            .filter(|(d, _)| !original.contains(d.as_str()))
            .collect();
        let hard = sample_hard_negatives(
            &candidates,
            spec.n_hard,
            substream_seed(spec.seed, &format!("hard/{}", log.qid)),
        );
        let hard_set: HashSet<&str> = hard.iter().map(|h| h.as_str()).collect();
        let random_pool: Vec<String> = index
            .doc_ids()
            .iter()
            .filter(|d| !original.contains(d.as_str()) && !hard_set.contains(d.as_str()))
            .cloned()
            .collect();

        match reconstruct_list(log, spec, &random_pool, &hard)? {
            Some(list) => lists.push(list),
            None => skipped += 1,
        }
    }
    Ok(ReconstructionOutcome { lists, skipped })
}

/// Turn reconstructed lists into training examples by extracting the 24
/// features for every entry.
pub fn to_examples(
    lists: &[ReconstructedList],
    queries: &std::collections::HashMap<String, String>,
    index: &InvertedIndex,
) -> Result<Vec<ListExample>> {
    let mut out = Vec::with_capacity(lists.len());
    for list in lists {
        let query_text = queries
            .get(&list.qid)
            .ok_or_else(|| Error::invalid(format!("qid={}", list.qid), "query text not found"))?;
        let mut features = Vec::with_capacity(list.entries.len());
        let mut labels = Vec::with_capacity(list.entries.len());
        for e in &list.entries {
            features.push(textfeat::extract_features(query_text, &e.doc_id, index)?);
            labels.push(e.label as f64);
        }
        let eligible = list.entries.iter().map(|e| e.label).collect();
        out.push(ListExample {
            qid: list.qid.clone(),
            features,
            labels,
            eligible,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct ListwiseModel {
    pub ranker: RankerParams,
    /// input normalization the ranker was trained under
    pub norm: FeatureNorm,
    pub curve: Vec<EpochMetrics>,
}

impl ListwiseModel {
    /// Score raw (unnormalized) features.
    pub fn score(&self, features: &[f64]) -> Result<f64> {
        nn::score(&self.ranker, &self.norm.apply(features)?)
    }
}

/// Plain listwise training on reconstructed lists (no propensity model).
/// Best checkpoint by validation nDCG@10.
pub fn train_listwise(
    train: &[ListExample],
    valid: &[ValidList],
    config: &DualTrainConfig,
) -> Result<ListwiseModel> {
    if train.is_empty() {
        return Err(Error::InvalidArgument("no training lists".into()));
    }
    for ex in train {
        if !ex.labels.iter().any(|l| *l > 0.0) {
            return Err(Error::invalid(format!("qid={}", ex.qid), "list has no positive item"));
        }
    }

    let (train, valid, norm) = dla::normalize_lists(train, valid)?;
    let (train, valid) = (train.as_slice(), valid.as_slice());

    let mut ranker = RankerParams::init(config.seed);
    let mut opt = nn::AdamW::new(RankerParams::n_params(), config.lr, config.weight_decay);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed);

    let mut best_ndcg = f64::NEG_INFINITY;
    let mut best_ranker = ranker.clone();
    let mut evals_since_best = 0usize;
    let mut curve = Vec::new();

    for epoch in 0..config.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let mut grads = RankerParams::zeros();
            let scale = 1.0 / batch.len() as f64;
            for &qi in batch {
                let ex = &train[qi];
                let caches: Vec<ForwardCache> = ex
                    .features
                    .iter()
                    .map(|x| nn::forward(&ranker, x))
                    .collect::<Result<_>>()?;
                let scores: Vec<f64> = caches.iter().map(|c| c.output()).collect();
                epoch_loss += listwise_loss(&scores, &ex.labels)?;
                let dscores = listwise_loss_grad(&scores, &ex.labels)?;
                for (cache, d) in caches.iter().zip(&dscores) {
                    if *d != 0.0 {
                        nn::backward(&ranker, cache, d * scale, &mut grads);
                    }
                }
            }
            let mut flat = ranker.flat();
            opt.update(&mut flat, &grads.flat())?;
            ranker.set_flat(&flat)?;
        }

        let valid_ndcg10 = dla::validation_ndcg(&ranker, valid)?;
        curve.push(EpochMetrics {
            epoch,
            ranking_loss: epoch_loss / train.len() as f64,
            observation_loss: 0.0,
            valid_ndcg10,
        });
        if valid_ndcg10 > best_ndcg {
            best_ndcg = valid_ndcg10;
            best_ranker = ranker.clone();
            evals_since_best = 0;
        } else {
            evals_since_best += 1;
            if evals_since_best >= config.patience {
                break;
            }
        }
    }
    if valid.is_empty() {
        best_ranker = ranker;
    }
    Ok(ListwiseModel {
        ranker: best_ranker,
        norm,
        curve,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::Rng as _;

    fn pool(scores: &[f64]) -> Vec<(String, f64)> {
        scores
            .iter()
            .enumerate()
            .map(|(i, s)| (format!("d{:02}", i), *s))
            .collect()
    }

    #[test]
    fn hard_negatives_whole_pool() {
        let cands = pool(&[5.0, 4.0, 3.0, 2.0, 1.0]);
        let got = sample_hard_negatives(&cands, 5, 1);
        assert_eq!(got.len(), 5);
        let set: HashSet<_> = got.iter().collect();
        assert_eq!(set.len(), 5);
    }

    #[test]
    fn hard_negatives_endpoints() {
        let cands = pool(&[5.0, 4.0, 3.0, 2.0, 1.0]);
        let got = sample_hard_negatives(&cands, 2, 1);
        assert_eq!(got.len(), 2);
        assert!(got.contains(&"d00".to_string())); // max score
        assert!(got.contains(&"d04".to_string())); // min score
    }

    #[test]
    fn hard_negatives_deterministic() {
        let cands = pool(&[9.0, 7.5, 6.0, 5.5, 4.0, 3.0, 2.5, 1.0]);
        let a = sample_hard_negatives(&cands, 5, 77);
        let b = sample_hard_negatives(&cands, 5, 77);
        assert_eq!(a, b);
        let set: HashSet<_> = a.iter().collect();
        assert_eq!(set.len(), 5, "sampling must be without replacement");
    }

    fn log(clicks: [u8; LIST_LEN]) -> ClickLog {
        ClickLog {
            qid: "q1".into(),
            docs: (0..LIST_LEN).map(|i| format!("orig{}", i)).collect(),
            clicks: clicks.to_vec(),
        }
    }

    fn rand_pool(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("r{}", i)).collect()
    }

    #[test]
    fn click_only_reconstruction() {
        let spec = NegSpec {
            scheme: Scheme::ClickOnly,
            n_hard: 2,
            n_random: 3,
            seed: 1,
        };
        let hard = vec!["h1".to_string(), "h2".to_string()];
        let out = reconstruct_list(&log([0, 1, 0, 0, 0, 0, 0, 0, 0, 0]), &spec, &rand_pool(50), &hard)
            .unwrap()
            .unwrap();
        // 1 kept + 9 fills + 3 extra random + 2 hard
        assert_eq!(out.entries.len(), 15);
        assert_eq!(out.entries.iter().filter(|e| e.origin == Origin::Kept).count(), 1);
        assert_eq!(out.entries.iter().filter(|e| e.origin == Origin::RandomNeg).count(), 12);
        assert_eq!(out.entries.iter().filter(|e| e.origin == Origin::HardNeg).count(), 2);
        assert!(out.entries.iter().all(|e| (e.label == 1) == (e.origin == Origin::Kept)));
    }

    #[test]
    fn last_click_reconstruction() {
        let spec = NegSpec {
            scheme: Scheme::LastClick,
            n_hard: 0,
            n_random: 0,
            seed: 1,
        };
        let out = reconstruct_list(&log([1, 0, 1, 0, 0, 0, 0, 0, 0, 0]), &spec, &rand_pool(50), &[])
            .unwrap()
            .unwrap();
        assert_eq!(out.entries.len(), LIST_LEN);
        let kept: Vec<_> = out.entries.iter().filter(|e| e.origin == Origin::Kept).collect();
        assert_eq!(kept.len(), 3); // positions 1..3
        assert_eq!(kept.iter().map(|e| e.label).collect::<Vec<_>>(), vec![1, 0, 1]);
        assert_eq!(out.entries.iter().filter(|e| e.origin == Origin::RandomNeg).count(), 7);
    }

    #[test]
    fn zero_click_query_skipped() {
        let spec = NegSpec {
            scheme: Scheme::ClickOnly,
            n_hard: 0,
            n_random: 0,
            seed: 1,
        };
        assert!(reconstruct_list(&log([0; 10]), &spec, &rand_pool(50), &[]).unwrap().is_none());
    }

    #[test]
    fn empty_pool_errors() {
        let spec = NegSpec {
            scheme: Scheme::ClickOnly,
            n_hard: 0,
            n_random: 0,
            seed: 1,
        };
        assert!(reconstruct_list(&log([1, 0, 0, 0, 0, 0, 0, 0, 0, 0]), &spec, &[], &[]).is_err());
    }

    #[test]
    fn listwise_loss_uniform_scores() {
        let n = 7usize;
        let scores = vec![0.5; n];
        let mut labels = vec![0.0; n];
        labels[2] = 1.0;
        assert_relative_eq!(
            listwise_loss(&scores, &labels).unwrap(),
            (n as f64).ln(),
            max_relative = 1e-12
        );
    }

    #[test]
    fn listwise_loss_limit_and_errors() {
        let mut scores = vec![0.0; 5];
        scores[0] = 60.0;
        let mut labels = vec![0.0; 5];
        labels[0] = 1.0;
        assert!(listwise_loss(&scores, &labels).unwrap() < 1e-9);

        assert!(listwise_loss(&[1.0, 2.0], &[0.0, 0.0]).is_err());
    }

    #[test]
    fn listwise_grad_matches_numeric() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let n = 8;
            let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let mut labels = vec![0.0; n];
            labels[rng.gen_range(0..n)] = 1.0;
            labels[rng.gen_range(0..n)] = 1.0;
            let analytic = listwise_loss_grad(&scores, &labels).unwrap();
            let numeric = nn::numeric_gradient_flat(
                |s| listwise_loss(s, &labels).unwrap(),
                &scores,
                1e-5,
            );
            for (a, nv) in analytic.iter().zip(numeric.iter()) {
                let denom = nv.abs().max(1e-6);
                assert!(((a - nv) / denom).abs() < 1e-4, "{} vs {}", a, nv);
            }
        }
    }

    proptest! {
        #[test]
        fn reconstruction_invariants(
            clicks in proptest::collection::vec(0u8..2, LIST_LEN),
            n_hard in 0usize..5,
            n_random in 0usize..5,
            seed in 0u64..1000,
            scheme_pick in 0u8..2,
        ) {
            let scheme = if scheme_pick == 0 { Scheme::ClickOnly } else { Scheme::LastClick };
            let spec = NegSpec { scheme, n_hard, n_random, seed };
            let hard: Vec<String> = (0..n_hard).map(|i| format!("h{}", i)).collect();
            let mut arr = [0u8; LIST_LEN];
            arr.copy_from_slice(&clicks);
            let result = reconstruct_list(&log(arr), &spec, &rand_pool(60), &hard).unwrap();
            match result {
                None => prop_assert!(clicks.iter().all(|&c| c == 0)),
                Some(list) => {
                    // no duplicate doc ids
                    let ids: HashSet<_> = list.entries.iter().map(|e| &e.doc_id).collect();
                    prop_assert_eq!(ids.len(), list.entries.len());
                    // kept clicked items labeled 1, negatives 0
                    for e in &list.entries {
                        if e.origin != Origin::Kept {
                            prop_assert_eq!(e.label, 0);
                        }
                    }
                    // total length is scheme-independent for a fixed spec
                    let kept = list.entries.iter().filter(|e| e.origin == Origin::Kept).count();
                    let expected = LIST_LEN.max(kept) + n_random + n_hard;
                    prop_assert_eq!(list.entries.len(), expected);
                }
            }
        }

        #[test]
        fn hard_negatives_always_contain_extremes(
            scores in proptest::collection::vec(0.0f64..100.0, 3..40),
            n in 2usize..10,
            seed in 0u64..100,
        ) {
            let cands = pool(&scores);
            let got = sample_hard_negatives(&cands, n, seed);
            let max_doc = &cands[pick_extreme(&cands, true)].0;
            let min_doc = &cands[pick_extreme(&cands, false)].0;
            prop_assert!(got.contains(max_doc));
            prop_assert!(got.contains(min_doc));
            let set: HashSet<_> = got.iter().collect();
            prop_assert_eq!(set.len(), got.len());
        }
    }
}
