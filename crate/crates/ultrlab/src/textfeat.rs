//! Lexical machinery: tokenization, a per-field inverted index, BM25 and
//! query-likelihood scorers, and the 24 heuristic matching features
//! (8 per field over title, abstract, and the combined text).

use std::collections::HashMap;

use crate::corpus::{Document, NUM_FEATURES};
use crate::error::{Error, Result};

/// Any language-model probability below this is clamped before taking logs,
/// keeping every feature finite.
pub const LM_PROB_FLOOR: f64 = 1e-12;

pub const DEFAULT_BM25_K1: f64 = 1.2;
pub const DEFAULT_BM25_B: f64 = 0.75;
pub const DEFAULT_JM_LAMBDA: f64 = 0.1;
pub const DEFAULT_DIRICHLET_MU: f64 = 2000.0;
pub const DEFAULT_DISCOUNT_DELTA: f64 = 0.7;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Field {
    Title,
    Abstract,
    Combined,
}

pub const FIELDS: [Field; 3] = [Field::Title, Field::Abstract, Field::Combined];

/// Language-model smoothing method and its parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SmoothingSpec {
    /// lambda * P_ml + (1 - lambda) * P_coll, lambda in (0,1)
    JelinekMercer(f64),
    /// (tf + mu * P_coll) / (dl + mu), mu > 0
    Dirichlet(f64),
    /// max(tf - delta, 0)/dl + delta * |unique terms|/dl * P_coll, delta in (0,1)
    AbsoluteDiscount(f64),
}

impl SmoothingSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            SmoothingSpec::JelinekMercer(l) if !(0.0..=1.0).contains(&l) || l == 0.0 => Err(
                Error::InvalidArgument(format!("Jelinek-Mercer lambda {} not in (0,1]", l)),
            ),
            SmoothingSpec::Dirichlet(mu) if mu <= 0.0 => {
                Err(Error::InvalidArgument(format!("Dirichlet mu {} must be > 0", mu)))
            }
            SmoothingSpec::AbsoluteDiscount(d) if !(d > 0.0 && d < 1.0) => Err(
                Error::InvalidArgument(format!("discount delta {} not in (0,1)", d)),
            ),
            _ => Ok(()),
        }
    }
}

/// Lowercase and split on anything that is not alphanumeric.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_string())
        .collect()
}

#[derive(Debug, Clone, Default)]
struct FieldStats {
    /// term -> postings (doc index, term frequency), in doc index order
    postings: HashMap<String, Vec<(usize, u32)>>,
    doc_lengths: Vec<u64>,
    unique_terms: Vec<u32>,
    collection_tf: HashMap<String, u64>,
    total_tokens: u64,
}

impl FieldStats {
    fn add_doc(&mut self, doc_idx: usize, tokens: &[String]) {
        debug_assert_eq!(doc_idx, self.doc_lengths.len());
        let mut tf: HashMap<&str, u32> = HashMap::new();
        for t in tokens {
            *tf.entry(t.as_str()).or_insert(0) += 1;
        }
        self.doc_lengths.push(tokens.len() as u64);
        self.unique_terms.push(tf.len() as u32);
        self.total_tokens += tokens.len() as u64;
        let mut terms: Vec<_> = tf.into_iter().collect();
        terms.sort_unstable();
        for (term, count) in terms {
            self.postings
                .entry(term.to_string())
                .or_default()
                .push((doc_idx, count));
            *self.collection_tf.entry(term.to_string()).or_insert(0) += count as u64;
        }
    }

    fn avg_doc_length(&self) -> f64 {
        if self.doc_lengths.is_empty() {
            0.0
        } else {
            self.total_tokens as f64 / self.doc_lengths.len() as f64
        }
    }

    fn tf(&self, term: &str, doc_idx: usize) -> u32 {
        self.postings
            .get(term)
            .and_then(|p| p.iter().find(|(d, _)| *d == doc_idx))
            .map(|(_, tf)| *tf)
            .unwrap_or(0)
    }

    fn df(&self, term: &str) -> usize {
        self.postings.get(term).map(|p| p.len()).unwrap_or(0)
    }

    fn collection_prob(&self, term: &str) -> f64 {
        if self.total_tokens == 0 {
            return 0.0;
        }
        self.collection_tf.get(term).copied().unwrap_or(0) as f64 / self.total_tokens as f64
    }
}

/// Immutable per-field index over a document corpus.
#[derive(Debug, Clone)]
pub struct InvertedIndex {
    doc_ids: Vec<String>,
    id_to_idx: HashMap<String, usize>,
    title: FieldStats,
    abstract_: FieldStats,
    combined: FieldStats,
}

impl InvertedIndex {
    pub fn build(docs: &[Document]) -> Result<Self> {
        if docs.is_empty() {
            return Err(Error::InvalidArgument("cannot index an empty corpus".into()));
        }
        let mut index = InvertedIndex {
            doc_ids: Vec::with_capacity(docs.len()),
            id_to_idx: HashMap::with_capacity(docs.len()),
            title: FieldStats::default(),
            abstract_: FieldStats::default(),
            combined: FieldStats::default(),
        };
        for doc in docs {
            if index.id_to_idx.contains_key(&doc.doc_id) {
                return Err(Error::DuplicateDoc(doc.doc_id.clone()));
            }
            let idx = index.doc_ids.len();
            index.id_to_idx.insert(doc.doc_id.clone(), idx);
            index.doc_ids.push(doc.doc_id.clone());

            let title_tokens = tokenize(&doc.title);
            let abstract_tokens = tokenize(&doc.abstract_);
            let mut combined_tokens = title_tokens.clone();
            combined_tokens.extend(abstract_tokens.iter().cloned());

            index.title.add_doc(idx, &title_tokens);
            index.abstract_.add_doc(idx, &abstract_tokens);
            index.combined.add_doc(idx, &combined_tokens);
        }
        Ok(index)
    }

    pub fn num_docs(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn contains(&self, doc_id: &str) -> bool {
        self.id_to_idx.contains_key(doc_id)
    }

    fn field(&self, field: Field) -> &FieldStats {
        match field {
            Field::Title => &self.title,
            Field::Abstract => &self.abstract_,
            Field::Combined => &self.combined,
        }
    }

    fn doc_idx(&self, doc_id: &str) -> Result<usize> {
        self.id_to_idx
            .get(doc_id)
            .copied()
            .ok_or_else(|| Error::UnknownDoc(doc_id.to_string()))
    }

    pub fn doc_length(&self, doc_id: &str, field: Field) -> Result<u64> {
        Ok(self.field(field).doc_lengths[self.doc_idx(doc_id)?])
    }

    pub fn avg_doc_length(&self, field: Field) -> f64 {
        self.field(field).avg_doc_length()
    }

    pub fn term_frequency(&self, term: &str, doc_id: &str, field: Field) -> Result<u32> {
        Ok(self.field(field).tf(term, self.doc_idx(doc_id)?))
    }
}

fn bm25_idf(n: f64, df: f64) -> f64 {
    (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
}

/// Okapi BM25 over one field. Query terms absent from the document
/// contribute 0.
pub fn bm25_score(
    query_terms: &[String],
    doc_id: &str,
    field: Field,
    index: &InvertedIndex,
    k1: f64,
    b: f64,
) -> Result<f64> {
    let doc_idx = index.doc_idx(doc_id)?;
    let stats = index.field(field);
    let n = index.num_docs() as f64;
    let dl = stats.doc_lengths[doc_idx] as f64;
    let avgdl = stats.avg_doc_length();
    let mut score = 0.0;
    for term in query_terms {
        let tf = stats.tf(term, doc_idx) as f64;
        if tf == 0.0 {
            continue;
        }
        let df = stats.df(term) as f64;
        let norm = if avgdl > 0.0 { dl / avgdl } else { 1.0 };
        score += bm25_idf(n, df) * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * norm));
    }
    Ok(score)
}

/// Query-likelihood score: sum of log P(t|doc) under `smoothing`. Terms with
/// zero collection probability are skipped; probabilities below
/// [`LM_PROB_FLOOR`] are clamped so the result stays finite.
pub fn lm_score(
    query_terms: &[String],
    doc_id: &str,
    field: Field,
    index: &InvertedIndex,
    smoothing: SmoothingSpec,
) -> Result<f64> {
    let doc_idx = index.doc_idx(doc_id)?;
    let stats = index.field(field);
    let dl = stats.doc_lengths[doc_idx] as f64;
    let mut score = 0.0;
    for term in query_terms {
        let p_coll = stats.collection_prob(term);
        if p_coll == 0.0 {
            continue;
        }
        let tf = stats.tf(term, doc_idx) as f64;
        let p = match smoothing {
            SmoothingSpec::JelinekMercer(lambda) => {
                let p_ml = if dl > 0.0 { tf / dl } else { 0.0 };
                lambda * p_ml + (1.0 - lambda) * p_coll
            }
            SmoothingSpec::Dirichlet(mu) => (tf + mu * p_coll) / (dl + mu),
            SmoothingSpec::AbsoluteDiscount(delta) => {
                if dl > 0.0 {
                    let unique = stats.unique_terms[doc_idx] as f64;
                    (tf - delta).max(0.0) / dl + delta * unique / dl * p_coll
                } else {
                    0.0
                }
            }
        };
        score += p.max(LM_PROB_FLOOR).ln();
    }
    Ok(score)
}

/// The fixed per-field feature block, in file order.
fn field_features(
    query_terms: &[String],
    doc_id: &str,
    field: Field,
    index: &InvertedIndex,
) -> Result<[f64; 8]> {
    let doc_idx = index.doc_idx(doc_id)?;
    let stats = index.field(field);
    let n = index.num_docs() as f64;
    let dl = stats.doc_lengths[doc_idx] as f64;

    let mut sum_tf = 0.0;
    let mut sum_tf_idf = 0.0;
    for term in query_terms {
        let tf = stats.tf(term, doc_idx) as f64;
        if tf == 0.0 {
            continue;
        }
        sum_tf += tf;
        // classic idf = ln(N / df); df >= 1 whenever tf >= 1
        sum_tf_idf += tf * (n / stats.df(term) as f64).ln();
    }
    let sum_tf_norm = if dl > 0.0 { sum_tf / dl } else { 0.0 };

    Ok([
        sum_tf,
        sum_tf_norm,
        sum_tf_idf,
        (dl + 1.0).ln(),
        bm25_score(query_terms, doc_id, field, index, DEFAULT_BM25_K1, DEFAULT_BM25_B)?,
        lm_score(query_terms, doc_id, field, index, SmoothingSpec::JelinekMercer(DEFAULT_JM_LAMBDA))?,
        lm_score(query_terms, doc_id, field, index, SmoothingSpec::Dirichlet(DEFAULT_DIRICHLET_MU))?,
        lm_score(
            query_terms,
            doc_id,
            field,
            index,
            SmoothingSpec::AbsoluteDiscount(DEFAULT_DISCOUNT_DELTA),
        )?,
    ])
}

/// Extract the 24 heuristic features for a (query, document) pair:
/// per field (title, abstract, combined) the block
/// [sum tf, sum tf / dl, sum tf*idf, log(dl+1), BM25, LM-JM, LM-Dirichlet,
/// LM-AbsoluteDiscount].
pub fn extract_features(
    query_text: &str,
    doc_id: &str,
    index: &InvertedIndex,
) -> Result<Vec<f64>> {
    let terms = tokenize(query_text);
    let mut out = Vec::with_capacity(NUM_FEATURES);
    for field in FIELDS {
        out.extend_from_slice(&field_features(&terms, doc_id, field, index)?);
    }
    debug_assert_eq!(out.len(), NUM_FEATURES);
    Ok(out)
}

/// Top-k documents by BM25 over the combined field, descending score, ties
/// by doc_id ascending. Documents with score 0 (no query term match) are
/// excluded.
pub fn retrieve_topk(
    query_text: &str,
    index: &InvertedIndex,
    k: usize,
) -> Vec<(String, f64)> {
    let terms = tokenize(query_text);
    let stats = index.field(Field::Combined);
    let n = index.num_docs() as f64;
    let avgdl = stats.avg_doc_length();

    let mut scores: HashMap<usize, f64> = HashMap::new();
    // repeated query terms contribute once per occurrence, matching bm25_score
    for term in &terms {
        if let Some(postings) = stats.postings.get(term.as_str()) {
            let df = postings.len() as f64;
            let idf = bm25_idf(n, df);
            for &(doc_idx, tf) in postings {
                let dl = stats.doc_lengths[doc_idx] as f64;
                let tf = tf as f64;
                let norm = if avgdl > 0.0 { dl / avgdl } else { 1.0 };
                let contrib = idf * tf * (DEFAULT_BM25_K1 + 1.0)
                    / (tf + DEFAULT_BM25_K1 * (1.0 - DEFAULT_BM25_B + DEFAULT_BM25_B * norm));
                *scores.entry(doc_idx).or_insert(0.0) += contrib;
            }
        }
    }

    let mut scored: Vec<(String, f64)> = scores
        .into_iter()
        .filter(|(_, s)| *s > 0.0)
        .map(|(idx, s)| (index.doc_ids[idx].clone(), s))
        .collect();
    scored.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .expect("finite bm25 scores")
            .then_with(|| a.0.cmp(&b.0))
    });
    scored.truncate(k);
    scored
}
