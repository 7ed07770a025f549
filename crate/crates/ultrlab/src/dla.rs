//! Dual learning: joint training of the ranking model f and a per-position
//! propensity model g. The ranking loss reweights clicked items by inverse
//! examination-propensity ratios; the observation loss mirrors it with the
//! roles of f and g swapped. Labels may be real-valued (label correction),
//! in which case items that were not originally clicked enter both losses
//! with weight equal to their label and no propensity reweighting.

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::LIST_LEN;
use crate::error::{Error, Result};
use crate::metrics::ndcg_at_k;
use crate::nn::{self, AdamW, FeatureNorm, ForwardCache, RankerParams};

pub const DEFAULT_IPW_CAP: f64 = 10.0;

/// One logit per SERP position 1..=10.
#[derive(Debug, Clone, PartialEq)]
pub struct PropensityParams(pub Vec<f64>);

impl PropensityParams {
    pub fn zeros() -> Self {
        PropensityParams(vec![0.0; LIST_LEN])
    }

    pub fn new(logits: Vec<f64>) -> Result<Self> {
        if logits.len() != LIST_LEN {
            return Err(Error::ShapeMismatch(format!(
                "expected {} propensity logits, got {}",
                LIST_LEN,
                logits.len()
            )));
        }
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite propensity logit".into()));
        }
        Ok(PropensityParams(logits))
    }

    /// Softmax over the position logits.
    pub fn probs(&self) -> Vec<f64> {
        nn::softmax_probs(&self.0).expect("ten finite logits")
    }

    /// Recovered examination ratios p[1]/p[k] for k = 1..=10.
    pub fn recovered_ratios(&self) -> Vec<f64> {
        let p = self.probs();
        p.iter().map(|pk| p[0] / pk).collect()
    }
}

/// Capped inverse-propensity weights relative to position 1:
/// w[x] = min(p[1]/p[x], cap), with w[1] exactly 1.
pub fn ipw_rank_weights(probs: &[f64], cap: f64) -> Result<Vec<f64>> {
    if probs.iter().any(|p| *p <= 0.0) {
        return Err(Error::InvalidArgument("non-positive probability in IPW weights".into()));
    }
    let first = probs[0];
    Ok(probs
        .iter()
        .enumerate()
        .map(|(i, p)| if i == 0 { 1.0 } else { (first / p).min(cap) })
        .collect())
}

/// IPW-weighted softmax cross-entropy over one list:
/// -sum_x label[x] * weight[x] * log softmax(scores)[x]. Zero when no item
/// has a positive label.
pub fn ranking_loss(scores: &[f64], labels: &[f64], weights: &[f64]) -> Result<f64> {
    if scores.len() != labels.len() || scores.len() != weights.len() {
        return Err(Error::ShapeMismatch("scores/labels/weights lengths differ".into()));
    }
    if labels.iter().all(|l| *l == 0.0) {
        return Ok(0.0);
    }
    let probs = nn::softmax_probs(scores)?;
    Ok(-labels
        .iter()
        .zip(weights)
        .zip(&probs)
        .map(|((l, w), p)| l * w * p.ln())
        .sum::<f64>())
}

/// d ranking_loss / d scores: p_i * (sum_j l_j w_j) - l_i w_i.
pub fn ranking_loss_grad(scores: &[f64], labels: &[f64], weights: &[f64]) -> Result<Vec<f64>> {
    if labels.iter().all(|l| *l == 0.0) {
        return Ok(vec![0.0; scores.len()]);
    }
    let probs = nn::softmax_probs(scores)?;
    let total: f64 = labels.iter().zip(weights).map(|(l, w)| l * w).sum();
    Ok(probs
        .iter()
        .zip(labels.iter().zip(weights))
        .map(|(p, (l, w))| p * total - l * w)
        .collect())
}

/// Mirror of [`ranking_loss`] with the propensity logits in the softmax and
/// relevance-probability ratios as weights.
pub fn observation_loss(obs_logits: &[f64], labels: &[f64], relevance_weights: &[f64]) -> Result<f64> {
    ranking_loss(obs_logits, labels, relevance_weights)
}

pub fn observation_loss_grad(
    obs_logits: &[f64],
    labels: &[f64],
    relevance_weights: &[f64],
) -> Result<Vec<f64>> {
    ranking_loss_grad(obs_logits, labels, relevance_weights)
}

/// One training list: per-position feature vectors, labels, and the flags
/// marking originally clicked items.
#[derive(Debug, Clone)]
pub struct ListExample {
    pub qid: String,
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<f64>,
    pub eligible: Vec<u8>,
}

/// A validation list with graded truth for nDCG selection.
#[derive(Debug, Clone)]
pub struct ValidList {
    pub qid: String,
    pub features: Vec<Vec<f64>>,
    pub grades: Vec<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub ranking_loss: f64,
    pub observation_loss: f64,
    pub valid_ndcg10: f64,
}

#[derive(Debug, Clone)]
pub struct DualTrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub ipw_cap: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    /// no-IPW baseline: force every weight in both losses to 1
    pub uniform_weights: bool,
}

impl Default for DualTrainConfig {
    fn default() -> Self {
        DualTrainConfig {
            lr: 5e-6,
            weight_decay: 0.01,
            ipw_cap: DEFAULT_IPW_CAP,
            batch_size: 16,
            max_epochs: 50,
            patience: 5,
            seed: 42,
            uniform_weights: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DualModel {
    pub ranker: RankerParams,
    pub propensity: PropensityParams,
    /// input normalization the ranker was trained under
    pub norm: FeatureNorm,
    pub curve: Vec<EpochMetrics>,
}

impl DualModel {
    /// Score raw (unnormalized) features.
    pub fn score(&self, features: &[f64]) -> Result<f64> {
        nn::score(&self.ranker, &self.norm.apply(features)?)
    }
}

/// Normalized copies of the training and validation lists, with the fitted
/// transform.
pub(crate) fn normalize_lists(
    train: &[ListExample],
    valid: &[ValidList],
) -> Result<(Vec<ListExample>, Vec<ValidList>, FeatureNorm)> {
    let norm = FeatureNorm::fit(train.iter().flat_map(|ex| ex.features.iter().map(Vec::as_slice)))?;
    let train_n = train
        .iter()
        .map(|ex| {
            Ok(ListExample {
                qid: ex.qid.clone(),
                features: ex.features.iter().map(|x| norm.apply(x)).collect::<Result<_>>()?,
                labels: ex.labels.clone(),
                eligible: ex.eligible.clone(),
            })
        })
        .collect::<Result<_>>()?;
    let valid_n = valid
        .iter()
        .map(|v| {
            Ok(ValidList {
                qid: v.qid.clone(),
                features: v.features.iter().map(|x| norm.apply(x)).collect::<Result<_>>()?,
                grades: v.grades.clone(),
            })
        })
        .collect::<Result<_>>()?;
    Ok((train_n, valid_n, norm))
}

/// Mean validation nDCG@10 of `ranker` over graded lists.
pub fn validation_ndcg(ranker: &RankerParams, valid: &[ValidList]) -> Result<f64> {
    if valid.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for list in valid {
        let mut scored: Vec<(f64, u32, &str)> = Vec::with_capacity(list.features.len());
        for (i, x) in list.features.iter().enumerate() {
            scored.push((nn::score(ranker, x)?, list.grades[i], list.qid.as_str()));
        }
        scored.sort_by(|a, b| b.0.partial_cmp(&a.0).expect("finite scores"));
        let ranked: Vec<u32> = scored.iter().map(|(_, g, _)| *g).collect();
        total += ndcg_at_k(&ranked, &list.grades, 10);
    }
    Ok(total / valid.len() as f64)
}

/// Train ranker and propensity model jointly. `init` seeds the ranker
/// (fresh Glorot initialization when `None`). The checkpoint returned is
/// the one with the best validation nDCG@10.
pub fn train_dual(
    train: &[ListExample],
    valid: &[ValidList],
    config: &DualTrainConfig,
    init: Option<RankerParams>,
) -> Result<DualModel> {
    if train.is_empty() {
        return Err(Error::InvalidArgument("no training lists".into()));
    }
    for ex in train {
        if ex.features.len() != ex.labels.len() || ex.features.len() != ex.eligible.len() {
            return Err(Error::ShapeMismatch(format!("qid={}: list field lengths differ", ex.qid)));
        }
        if ex.features.len() != LIST_LEN {
            return Err(Error::ShapeMismatch(format!(
                "qid={}: dual training requires lists of length {}",
                ex.qid, LIST_LEN
            )));
        }
    }

    let (train, valid, norm) = normalize_lists(train, valid)?;
    let (train, valid) = (train.as_slice(), valid.as_slice());

    let mut ranker = init.unwrap_or_else(|| RankerParams::init(config.seed));
    let mut propensity = PropensityParams::zeros();
    let mut opt_f = AdamW::new(RankerParams::n_params(), config.lr, config.weight_decay);
    // the propensity table is tiny; a larger fixed lr converges in few epochs
    let mut opt_g = AdamW::new(LIST_LEN, 1e-2, 0.0);

    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed);

    let mut best_ndcg = f64::NEG_INFINITY;
    let mut best_ranker = ranker.clone();
    let mut best_propensity = propensity.clone();
    let mut evals_since_best = 0usize;
    let mut curve = Vec::new();

    for epoch in 0..config.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_rank_loss = 0.0;
        let mut epoch_obs_loss = 0.0;
        let mut n_queries = 0usize;

        for batch in order.chunks(config.batch_size) {
            let mut grads_f = RankerParams::zeros();
            let mut grads_g = vec![0.0; LIST_LEN];
            let obs_probs = propensity.probs();
            let rank_weights_base = if config.uniform_weights {
                vec![1.0; LIST_LEN]
            } else {
                ipw_rank_weights(&obs_probs, config.ipw_cap)?
            };

            for &qi in batch {
                let ex = &train[qi];
                let caches: Vec<ForwardCache> = ex
                    .features
                    .iter()
                    .map(|x| nn::forward(&ranker, x))
                    .collect::<Result<_>>()?;
                let scores: Vec<f64> = caches.iter().map(|c| c.output()).collect();

                // relevance-probability ratio weights for the observation loss
                let rel_probs = nn::softmax_probs(&scores)?;
                let rel_weights_base = if config.uniform_weights {
                    vec![1.0; LIST_LEN]
                } else {
                    ipw_rank_weights(&rel_probs, config.ipw_cap)?
                };

                // corrected (non-clicked, label > 0) items get weight 1
                let rank_weights: Vec<f64> = rank_weights_base
                    .iter()
                    .zip(&ex.eligible)
                    .map(|(w, e)| if *e == 1 { *w } else { 1.0 })
                    .collect();
                let rel_weights: Vec<f64> = rel_weights_base
                    .iter()
                    .zip(&ex.eligible)
                    .map(|(w, e)| if *e == 1 { *w } else { 1.0 })
                    .collect();

                epoch_rank_loss += ranking_loss(&scores, &ex.labels, &rank_weights)?;
                epoch_obs_loss += observation_loss(&propensity.0, &ex.labels, &rel_weights)?;

                let dscores = ranking_loss_grad(&scores, &ex.labels, &rank_weights)?;
                let scale = 1.0 / batch.len() as f64;
                for (cache, d) in caches.iter().zip(&dscores) {
                    if *d != 0.0 {
                        nn::backward(&ranker, cache, d * scale, &mut grads_f);
                    }
                }
                let dg = observation_loss_grad(&propensity.0, &ex.labels, &rel_weights)?;
                for (g, d) in grads_g.iter_mut().zip(&dg) {
                    *g += d * scale;
                }
            }
            n_queries += batch.len();

            let mut flat = ranker.flat();
            opt_f.update(&mut flat, &grads_f.flat())?;
            ranker.set_flat(&flat)?;
            opt_g.update(&mut propensity.0, &grads_g)?;
        }

        let valid_ndcg10 = validation_ndcg(&ranker, valid)?;
        curve.push(EpochMetrics {
            epoch,
            ranking_loss: epoch_rank_loss / n_queries as f64,
            observation_loss: epoch_obs_loss / n_queries as f64,
            valid_ndcg10,
        });

        if valid_ndcg10 > best_ndcg {
            best_ndcg = valid_ndcg10;
            best_ranker = ranker.clone();
            best_propensity = propensity.clone();
            evals_since_best = 0;
        } else {
            evals_since_best += 1;
            if evals_since_best >= config.patience {
                break;
            }
        }
    }

    // with no validation set, keep the final parameters
    if valid.is_empty() {
        best_ranker = ranker;
        best_propensity = propensity;
    }
    Ok(DualModel {
        ranker: best_ranker,
        propensity: best_propensity,
        norm,
        curve,
    })
}
