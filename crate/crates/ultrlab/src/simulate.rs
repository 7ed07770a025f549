//! Synthetic corpus and click-log generation. A seeded generator builds
//! queries, lexically grade-correlated documents, graded ground truth, and
//! top-10 result lists from a noisy production ranker; a position-based
//! click model then produces biased click logs.

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::corpus::{ClickLog, Document, Query, TruthRecord, TruthTable, LIST_LEN};
use crate::error::{Error, Result};

pub const DEFAULT_MAX_GRADE: u32 = 4;
pub const DEFAULT_GRADE_PRIOR: [f64; 5] = [0.35, 0.25, 0.20, 0.12, 0.08];

/// Signal the production ranker sorts by, before Gaussian noise is added.
/// `GradeNoise` orders by ground truth; `TitleMatch` orders by the fraction
/// of title tokens matching the query (scaled to the grade range), a weak
/// lexical ranker whose mistakes correlate with the extracted features and
/// therefore leak position bias into uncorrected training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitRanker {
    GradeNoise,
    TitleMatch,
}

impl std::str::FromStr for InitRanker {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "grade_noise" => Ok(InitRanker::GradeNoise),
            "title_match" => Ok(InitRanker::TitleMatch),
            other => Err(Error::InvalidArgument(format!(
                "unknown init_ranker `{}` (expected grade_noise|title_match)",
                other
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimSpec {
    pub n_queries: usize,
    /// total corpus size; the first n_queries * 10 documents are per-query
    /// candidates, the rest form the background pool used as negatives
    pub n_docs: usize,
    pub vocab_size: usize,
    pub max_grade: u32,
    /// position-bias severity: examination(k) = (1/k)^eta
    pub eta: f64,
    /// floor click probability for irrelevant items, in [0,1)
    pub click_noise: f64,
    pub seed: u64,
    /// multinomial prior over grades 0..=max_grade
    pub grade_prior: Vec<f64>,
    /// std of the Gaussian noise added to grades by the production ranker
    pub init_noise: f64,
    /// query-term rate for grade-0 candidate documents
    pub term_rate_base: f64,
    /// query-term rate increase from grade 0 to max_grade
    pub term_rate_slope: f64,
    /// what the noisy production ranker orders by
    pub init_ranker: InitRanker,
    /// stress mode: force at least this many grade>=2 items per list to be
    /// unclicked, exercising the false-negative failure case
    pub force_unclicked_relevant: usize,
}

impl Default for SimSpec {
    fn default() -> Self {
        SimSpec {
            n_queries: 100,
            n_docs: 1500,
            vocab_size: 200,
            max_grade: DEFAULT_MAX_GRADE,
            eta: 1.0,
            click_noise: 0.1,
            seed: 42,
            grade_prior: DEFAULT_GRADE_PRIOR.to_vec(),
            init_noise: 1.0,
            term_rate_base: 0.12,
            term_rate_slope: 0.72,
            init_ranker: InitRanker::GradeNoise,
            force_unclicked_relevant: 0,
        }
    }
}

impl SimSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_queries == 0 || self.n_docs == 0 || self.vocab_size == 0 {
            return Err(Error::InvalidArgument("counts must be >= 1".into()));
        }
        if self.n_docs < self.n_queries * LIST_LEN {
            return Err(Error::InvalidArgument(format!(
                "n_docs {} < n_queries * {} = {}",
                self.n_docs,
                LIST_LEN,
                self.n_queries * LIST_LEN
            )));
        }
        if self.eta < 0.0 {
            return Err(Error::InvalidArgument("eta must be >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.click_noise) {
            return Err(Error::InvalidArgument("click_noise must be in [0,1)".into()));
        }
        if self.grade_prior.len() != self.max_grade as usize + 1 {
            return Err(Error::InvalidArgument(format!(
                "grade_prior needs {} entries",
                self.max_grade + 1
            )));
        }
        let sum: f64 = self.grade_prior.iter().sum();
        if self.grade_prior.iter().any(|p| *p < 0.0) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument("grade_prior must sum to 1".into()));
        }
        if self.init_noise < 0.0 {
            return Err(Error::InvalidArgument("init_noise must be >= 0".into()));
        }
        if self.term_rate_base < 0.0
            || self.term_rate_slope < 0.0
            || self.term_rate_base + self.term_rate_slope > 1.0
        {
            return Err(Error::InvalidArgument(
                "term rates must satisfy 0 <= base, 0 <= slope, base + slope <= 1".into(),
            ));
        }
        Ok(())
    }

    /// Parse from `key=value` entries; unknown keys are rejected.
    pub fn from_kv(kv: &HashMap<String, String>) -> Result<Self> {
        let mut spec = SimSpec::default();
        for (key, value) in kv {
            let bad = |what: &str| Error::Recipe(format!("{} `{}` for key {}", what, value, key));
            match key.as_str() {
                "n_queries" => spec.n_queries = value.parse().map_err(|_| bad("invalid count"))?,
                "n_docs" => spec.n_docs = value.parse().map_err(|_| bad("invalid count"))?,
                "vocab_size" => spec.vocab_size = value.parse().map_err(|_| bad("invalid count"))?,
                "max_grade" => spec.max_grade = value.parse().map_err(|_| bad("invalid grade"))?,
                "eta" => spec.eta = value.parse().map_err(|_| bad("invalid real"))?,
                "click_noise" => spec.click_noise = value.parse().map_err(|_| bad("invalid real"))?,
                "seed" => spec.seed = value.parse().map_err(|_| bad("invalid seed"))?,
                "init_noise" => spec.init_noise = value.parse().map_err(|_| bad("invalid real"))?,
                "term_rate_base" => {
                    spec.term_rate_base = value.parse().map_err(|_| bad("invalid real"))?
                }
                "term_rate_slope" => {
                    spec.term_rate_slope = value.parse().map_err(|_| bad("invalid real"))?
                }
                "init_ranker" => spec.init_ranker = value.parse()?,
                "force_unclicked_relevant" => {
                    spec.force_unclicked_relevant = value.parse().map_err(|_| bad("invalid count"))?
                }
                "grade_prior" => {
                    let parsed: std::result::Result<Vec<f64>, _> =
                        value.split(',').map(|t| t.trim().parse::<f64>()).collect();
                    spec.grade_prior = parsed.map_err(|_| bad("invalid prior"))?;
                }
                other => return Err(Error::Recipe(format!("unknown simulation key `{}`", other))),
            }
        }
        if spec.grade_prior.len() != spec.max_grade as usize + 1
            && spec.grade_prior == DEFAULT_GRADE_PRIOR.to_vec()
        {
            // default prior only fits max_grade 4; rescale uniformly otherwise
            spec.grade_prior = vec![1.0 / (spec.max_grade as f64 + 1.0); spec.max_grade as usize + 1];
        }
        spec.validate()?;
        Ok(spec)
    }
}

/// Generated corpus: queries, documents, graded truth over the candidate
/// lists, and each query's initial top-10 ranking.
#[derive(Debug, Clone)]
pub struct SimCorpus {
    pub queries: Vec<Query>,
    pub docs: Vec<Document>,
    pub truth: TruthTable,
    /// (qid, ranked candidate doc_ids) in production-ranker order
    pub initial_lists: Vec<(String, Vec<String>)>,
}

fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in s.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Stable substream seed for (seed, key), independent of scheduling order.
pub fn substream_seed(seed: u64, key: &str) -> u64 {
    seed ^ fnv1a(key).rotate_left(17)
}

fn sample_grade(prior: &[f64], rng: &mut ChaCha8Rng) -> u32 {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (g, p) in prior.iter().enumerate() {
        acc += p;
        if u < acc {
            return g as u32;
        }
    }
    (prior.len() - 1) as u32
}

fn random_term(vocab_size: usize, rng: &mut ChaCha8Rng) -> String {
    format!("t{}", rng.gen_range(0..vocab_size))
}

const TITLE_LEN: usize = 8;
const ABSTRACT_LEN: usize = 25;

/// Probability that a candidate-document token is one of its query's terms:
/// base + slope * grade / max_grade. The slope controls how cleanly lexical
/// features separate the grades.
fn query_term_rate(grade: u32, max_grade: u32, base: f64, slope: f64) -> f64 {
    if max_grade == 0 {
        return 0.5;
    }
    base + slope * grade as f64 / max_grade as f64
}

fn gen_text(
    len: usize,
    query_terms: &[String],
    rate: f64,
    vocab_size: usize,
    rng: &mut ChaCha8Rng,
) -> String {
    let tokens: Vec<String> = (0..len)
        .map(|_| {
            if !query_terms.is_empty() && rng.gen::<f64>() < rate {
                query_terms[rng.gen_range(0..query_terms.len())].clone()
            } else {
                random_term(vocab_size, rng)
            }
        })
        .collect();
    tokens.join(" ")
}

/// Deterministically generate the synthetic corpus for `spec`.
pub fn generate_corpus(spec: &SimSpec) -> Result<SimCorpus> {
    spec.validate()?;
    let mut queries = Vec::with_capacity(spec.n_queries);
    let mut docs = Vec::with_capacity(spec.n_docs);
    let mut truth_records = Vec::new();
    let mut initial_lists = Vec::with_capacity(spec.n_queries);

    for qi in 0..spec.n_queries {
        let qid = format!("q{}", qi);
        let mut rng = ChaCha8Rng::seed_from_u64(substream_seed(spec.seed, &qid));
        let noise = Normal::new(0.0, spec.init_noise.max(1e-12)).expect("valid std");

        let mut query_terms: Vec<String> = Vec::new();
        while query_terms.len() < 3 {
            let t = random_term(spec.vocab_size, &mut rng);
            if !query_terms.contains(&t) {
                query_terms.push(t);
            }
        }
        queries.push(Query {
            qid: qid.clone(),
            text: query_terms.join(" "),
        });

        let mut ranked: Vec<(String, f64)> = Vec::with_capacity(LIST_LEN);
        for slot in 0..LIST_LEN {
            let doc_id = format!("d{}", qi * LIST_LEN + slot);
            let grade = sample_grade(&spec.grade_prior, &mut rng);
            let rate = query_term_rate(grade, spec.max_grade, spec.term_rate_base, spec.term_rate_slope);
            docs.push(Document {
                doc_id: doc_id.clone(),
                title: gen_text(TITLE_LEN, &query_terms, rate, spec.vocab_size, &mut rng),
                abstract_: gen_text(ABSTRACT_LEN, &query_terms, rate, spec.vocab_size, &mut rng),
            });
            truth_records.push(TruthRecord {
                qid: qid.clone(),
                doc_id: doc_id.clone(),
                grade,
            });
            let signal = match spec.init_ranker {
                InitRanker::GradeNoise => grade as f64,
                InitRanker::TitleMatch => {
                    let title = &docs.last().expect("just pushed").title;
                    let tokens: Vec<&str> = title.split(' ').collect();
                    let matches = tokens
                        .iter()
                        .filter(|t| query_terms.iter().any(|q| q == *t))
                        .count();
                    spec.max_grade as f64 * matches as f64 / tokens.len().max(1) as f64
                }
            };
            let rank_score = signal + noise.sample(&mut rng);
            ranked.push((doc_id, rank_score));
        }
        ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).expect("finite").then_with(|| a.0.cmp(&b.0)));
        initial_lists.push((qid, ranked.into_iter().map(|(d, _)| d).collect()));
    }

    // background pool: pure-noise documents
    let mut bg_rng = ChaCha8Rng::seed_from_u64(substream_seed(spec.seed, "background"));
    for di in spec.n_queries * LIST_LEN..spec.n_docs {
        docs.push(Document {
            doc_id: format!("d{}", di),
            title: gen_text(TITLE_LEN, &[], 0.0, spec.vocab_size, &mut bg_rng),
            abstract_: gen_text(ABSTRACT_LEN, &[], 0.0, spec.vocab_size, &mut bg_rng),
        });
    }

    Ok(SimCorpus {
        queries,
        docs,
        truth: TruthTable::from_records(truth_records),
        initial_lists,
    })
}

/// Examination probability of 1-based position k: (1/k)^eta.
pub fn examination_prob(position: usize, eta: f64) -> f64 {
    (1.0 / position as f64).powf(eta)
}

/// Perceived relevance of a graded item under click noise.
pub fn perceived_relevance(grade: u32, max_grade: u32, click_noise: f64) -> f64 {
    let rel = (2f64.powi(grade as i32) - 1.0) / (2f64.powi(max_grade as i32) - 1.0);
    click_noise + (1.0 - click_noise) * rel
}

/// Analytic click probability at 1-based position k for a graded item.
pub fn click_probability(position: usize, grade: u32, max_grade: u32, eta: f64, click_noise: f64) -> f64 {
    examination_prob(position, eta) * perceived_relevance(grade, max_grade, click_noise)
}

/// Simulate position-biased clicks over the given lists. Deterministic per
/// seed; each query uses a derived substream so per-query simulation order
/// does not matter.
pub fn simulate_clicks(
    lists: &[(String, Vec<String>)],
    truth: &TruthTable,
    spec: &SimSpec,
) -> Result<Vec<ClickLog>> {
    let mut logs = Vec::with_capacity(lists.len());
    for (qid, doc_ids) in lists {
        if doc_ids.len() != LIST_LEN {
            return Err(Error::invalid(
                format!("qid={}", qid),
                format!("list length {} != {}", doc_ids.len(), LIST_LEN),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(substream_seed(spec.seed, &format!("clicks/{}", qid)));
        let mut grades = Vec::with_capacity(LIST_LEN);
        for doc_id in doc_ids {
            grades.push(truth.get(qid, doc_id).ok_or_else(|| Error::MissingGrade {
                qid: qid.clone(),
                doc_id: doc_id.clone(),
            })?);
        }
        let mut clicks: Vec<u8> = (0..LIST_LEN)
            .map(|i| {
                let p = click_probability(i + 1, grades[i], spec.max_grade, spec.eta, spec.click_noise);
                u8::from(rng.gen::<f64>() < p)
            })
            .collect();

        if spec.force_unclicked_relevant > 0 {
            force_false_negatives(&mut clicks, &grades, spec.force_unclicked_relevant);
        }

        logs.push(ClickLog {
            qid: qid.clone(),
            docs: doc_ids.clone(),
            clicks,
        });
    }
    Ok(logs)
}

/// Unclick relevant (grade >= 2) items, highest positions first, until at
/// least `m` relevant items in the list are unclicked or none remain.
/// Removing clicks from the top mimics users skipping an early relevant
/// result (e.g. after seeing an equivalent one), the severest form of the
/// false-negative problem.
fn force_false_negatives(clicks: &mut [u8], grades: &[u32], m: usize) {
    let relevant_unclicked = clicks
        .iter()
        .zip(grades)
        .filter(|(c, g)| **c == 0 && **g >= 2)
        .count();
    let mut deficit = m.saturating_sub(relevant_unclicked);
    for i in 0..clicks.len() {
        if deficit == 0 {
            break;
        }
        if clicks[i] == 1 && grades[i] >= 2 {
            clicks[i] = 0;
            deficit -= 1;
        }
    }
}
