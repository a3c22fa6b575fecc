//! Reranking evaluation: rescore candidate pools, reorder, and measure
//! NDCG@k / Recall@k with binary gains.
//!
//! Recall uses the pool-restricted denominator — relevant documents the
//! first stage never retrieved cannot be recovered by reordering. The fast
//! metric paths are cross-checked by [`oracle_metrics`], which finds the
//! ideal DCG by brute force over every permutation of the pool.

use std::collections::BTreeSet;

use crate::data::{pair_input, retriever_score, Corpus, QueryRecord};
use crate::objectives::{relevance_score_cl, relevance_score_sft};
use crate::scorer::{encode, project, ScorerParams};
use crate::{Error, Result};

/// Which relevance score orders the candidates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    /// Two-way softmax of (yes, no) logits.
    Sft,
    /// Raw yes logit.
    Cl,
}

/// A query's retrieved candidates, ordered by retriever score descending.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidatePool {
    pub query_id: String,
    pub candidates: Vec<(String, f64)>,
    pub relevant_ids: BTreeSet<String>,
}

impl CandidatePool {
    pub fn new(
        query_id: String,
        candidates: Vec<(String, f64)>,
        relevant_ids: BTreeSet<String>,
    ) -> Result<Self> {
        if candidates.is_empty() {
            return Err(Error::InvalidInput(format!("empty candidate pool for {query_id}")));
        }
        let mut seen = BTreeSet::new();
        for window in candidates.windows(2) {
            if window[1].1 > window[0].1 {
                return Err(Error::InvalidInput(format!(
                    "pool for {query_id} not ordered by retriever score"
                )));
            }
        }
        for (id, _) in &candidates {
            if !seen.insert(id.clone()) {
                return Err(Error::InvalidInput(format!("duplicate candidate {id} for {query_id}")));
            }
        }
        Ok(CandidatePool { query_id, candidates, relevant_ids })
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }
}

/// Candidates reordered by reranker score descending, ties broken by
/// ascending document id.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedList {
    pub query_id: String,
    pub doc_ids: Vec<String>,
    pub scores: Vec<f64>,
}

/// Build a query's evaluation pool: top `pool_size` corpus documents by
/// retriever score (ties by id) together with the query's relevant set.
pub fn build_pool(query: &QueryRecord, corpus: &Corpus, pool_size: usize) -> Result<CandidatePool> {
    if pool_size == 0 {
        return Err(Error::InvalidConfig("pool_size must be positive".into()));
    }
    let mut scored: Vec<(String, f64)> = corpus
        .docs()
        .iter()
        .map(|d| (d.id.clone(), retriever_score(&query.features, &d.features)))
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    scored.truncate(pool_size);
    CandidatePool::new(query.id.clone(), scored, query.relevant_ids.clone())
}

/// Score every pool candidate with the model and reorder.
///
/// Pure and deterministic: equal scores fall back to ascending doc id.
pub fn rerank(
    params: &ScorerParams,
    kind: ScoreKind,
    use_learned: bool,
    pool: &CandidatePool,
    query_features: &[f64],
    corpus: &Corpus,
) -> Result<RankedList> {
    if pool.is_empty() {
        return Err(Error::InvalidInput(format!("empty candidate pool for {}", pool.query_id)));
    }
    let mut scored = Vec::with_capacity(pool.len());
    for (doc_id, _) in &pool.candidates {
        let doc = corpus.get(doc_id).ok_or_else(|| {
            Error::InvalidInput(format!("unknown document features for candidate {doc_id}"))
        })?;
        let input = pair_input(query_features, &doc.features);
        let h = encode(params, &input)?;
        let logits = project(&params.head, &h, use_learned)?;
        let score = match kind {
            ScoreKind::Sft => relevance_score_sft(&logits),
            ScoreKind::Cl => relevance_score_cl(&logits),
        };
        scored.push((doc_id.clone(), score));
    }
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(RankedList {
        query_id: pool.query_id.clone(),
        doc_ids: scored.iter().map(|(id, _)| id.clone()).collect(),
        scores: scored.iter().map(|&(_, s)| s).collect(),
    })
}

fn dcg_of_flags(flags: &[bool], k: usize) -> f64 {
    flags
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, &rel)| rel)
        .map(|(i, _)| 1.0 / ((i + 2) as f64).log2())
        .sum()
}

/// NDCG@k with binary gains and the standard log2 discount; 0 when the
/// pool contains no relevant document.
pub fn ndcg_at_k(ranked: &RankedList, relevant: &BTreeSet<String>, k: usize) -> f64 {
    if k == 0 {
        return 0.0;
    }
    let flags: Vec<bool> = ranked.doc_ids.iter().map(|id| relevant.contains(id)).collect();
    let in_pool = flags.iter().filter(|&&f| f).count();
    if in_pool == 0 {
        return 0.0;
    }
    let ideal: Vec<bool> = (0..flags.len()).map(|i| i < in_pool).collect();
    dcg_of_flags(&flags, k) / dcg_of_flags(&ideal, k)
}

/// Recall@k over the pool-restricted relevant set; 0 when the pool contains
/// no relevant document.
pub fn recall_at_k(ranked: &RankedList, relevant: &BTreeSet<String>, k: usize) -> f64 {
    if k == 0 {
        return 0.0;
    }
    let in_pool = ranked.doc_ids.iter().filter(|id| relevant.contains(*id)).count();
    if in_pool == 0 {
        return 0.0;
    }
    let in_top = ranked
        .doc_ids
        .iter()
        .take(k)
        .filter(|id| relevant.contains(*id))
        .count();
    in_top as f64 / in_pool as f64
}

/// Independent metric oracle for small pools.
///
/// The ideal DCG is found by exhaustive enumeration over every permutation
/// of the pool, and recall is recounted from scratch by set membership.
/// Must agree with the fast paths exactly.
pub fn oracle_metrics(
    pool: &CandidatePool,
    ranked: &RankedList,
    k: usize,
) -> Result<(f64, f64)> {
    if pool.len() > 10 {
        return Err(Error::InvalidInput(format!(
            "oracle is exhaustive; pool of {} is too large",
            pool.len()
        )));
    }
    let pool_ids: BTreeSet<&str> = pool.candidates.iter().map(|(id, _)| id.as_str()).collect();
    let ranked_ids: BTreeSet<&str> = ranked.doc_ids.iter().map(String::as_str).collect();
    if pool_ids != ranked_ids {
        return Err(Error::InvalidInput(
            "ranked list is not a permutation of the pool".into(),
        ));
    }

    let mut flags: Vec<bool> = pool
        .candidates
        .iter()
        .map(|(id, _)| pool.relevant_ids.contains(id))
        .collect();
    let mut best_dcg = 0.0f64;
    permute(&mut flags, 0, &mut |perm| {
        let d = dcg_of_flags(perm, k);
        if d > best_dcg {
            best_dcg = d;
        }
    });

    let ranked_flags: Vec<bool> = ranked
        .doc_ids
        .iter()
        .map(|id| pool.relevant_ids.contains(id))
        .collect();
    let ndcg = if best_dcg == 0.0 {
        0.0
    } else {
        dcg_of_flags(&ranked_flags, k) / best_dcg
    };

    let rel_in_pool = ranked_flags.iter().filter(|&&f| f).count();
    let recall = if rel_in_pool == 0 || k == 0 {
        0.0
    } else {
        ranked_flags.iter().take(k).filter(|&&f| f).count() as f64 / rel_in_pool as f64
    };
    Ok((ndcg, recall))
}

fn permute<F: FnMut(&[bool])>(items: &mut Vec<bool>, at: usize, visit: &mut F) {
    if at == items.len() {
        visit(items);
        return;
    }
    for i in at..items.len() {
        items.swap(at, i);
        permute(items, at + 1, visit);
        items.swap(at, i);
    }
}
