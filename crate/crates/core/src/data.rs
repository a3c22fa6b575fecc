//! Synthetic retrieval corpora, negative mining, and example files.
//!
//! Documents and queries are unit vectors drawn around shared latent
//! cluster centers. A query's relevant set is planted from its *noiseless*
//! affinity to each document, then observation noise is added to the
//! emitted query features, so the learning task is non-trivial but has a
//! known ground truth. The first-stage "retriever" is a frozen linear
//! scorer ⟨q, d⟩; hard negatives are sampled from its top-ranked irrelevant
//! candidates, random negatives from the whole irrelevant set.

use std::collections::{BTreeSet, HashMap};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::numerics::Rng;
use crate::scorer::PairInput;
use crate::{Error, Result};

pub const DEFAULT_N_QUERIES: usize = 120;
pub const DEFAULT_N_DOCS: usize = 400;
pub const DEFAULT_DIM: usize = 16;
pub const DEFAULT_NOISE: f64 = 0.25;

const CLUSTERS: usize = 8;
/// Per-coordinate spread of documents and queries around their cluster center.
const LATENT_SPREAD: f64 = 0.09;
/// Noiseless-affinity threshold that plants a query's relevant set.
const RELEVANCE_THRESHOLD: f64 = 0.93;
/// Retries per query before giving up on planting a non-empty relevant set.
const MAX_PLANT_RETRIES: usize = 10_000;

/// One candidate document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub features: Vec<f64>,
}

/// One query with its planted relevance labels.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryRecord {
    pub id: String,
    pub features: Vec<f64>,
    /// Stand-in for the task instruction.
    pub task_id: u32,
    pub relevant_ids: BTreeSet<String>,
}

/// A mined negative with its provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct Negative {
    pub doc: Document,
    pub hard: bool,
}

/// One training example: a query, its positive, and N distinct negatives.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub query: QueryRecord,
    pub positive: Document,
    pub negatives: Vec<Negative>,
}

impl Example {
    pub fn n_negatives(&self) -> usize {
        self.negatives.len()
    }

    /// Scorer inputs in pair order: positive first, then the negatives.
    pub fn pair_inputs(&self) -> Vec<PairInput> {
        let mut out = Vec::with_capacity(1 + self.negatives.len());
        out.push(pair_input(&self.query.features, &self.positive.features));
        for n in &self.negatives {
            out.push(pair_input(&self.query.features, &n.doc.features));
        }
        out
    }
}

/// Negative-selection configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MiningConfig {
    /// Negatives per example.
    pub n_total: usize,
    /// Share of negatives taken from the retriever's top candidates.
    pub hard_fraction: f64,
    /// Retriever cutoff defining the hard-candidate pool.
    pub candidate_pool: usize,
    pub seed: u64,
}

impl Default for MiningConfig {
    fn default() -> Self {
        MiningConfig {
            n_total: 4,
            hard_fraction: 0.5,
            candidate_pool: 100,
            seed: 0,
        }
    }
}

impl MiningConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_total == 0 {
            return Err(Error::InvalidConfig("mining needs n_total >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.hard_fraction) {
            return Err(Error::InvalidConfig(format!(
                "hard_fraction must lie in [0, 1], got {}",
                self.hard_fraction
            )));
        }
        if self.candidate_pool == 0 {
            return Err(Error::InvalidConfig("candidate_pool must be positive".into()));
        }
        Ok(())
    }
}

/// Documents indexed by id.
#[derive(Debug, Clone)]
pub struct Corpus {
    docs: Vec<Document>,
    by_id: HashMap<String, usize>,
}

impl Corpus {
    pub fn from_docs(docs: Vec<Document>) -> Result<Self> {
        let mut by_id = HashMap::with_capacity(docs.len());
        for (i, d) in docs.iter().enumerate() {
            if by_id.insert(d.id.clone(), i).is_some() {
                return Err(Error::InvalidInput(format!("duplicate document id {}", d.id)));
            }
        }
        Ok(Corpus { docs, by_id })
    }

    pub fn docs(&self) -> &[Document] {
        &self.docs
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Document> {
        self.by_id.get(id).map(|&i| &self.docs[i])
    }
}

/// Frozen first-stage retriever: plain inner product.
pub fn retriever_score(query_features: &[f64], doc_features: &[f64]) -> f64 {
    crate::scorer::dot(query_features, doc_features)
}

/// Retriever scores over the whole corpus, aligned with `corpus.docs()`.
pub fn retriever_scores(corpus: &Corpus, query_features: &[f64]) -> Vec<f64> {
    corpus
        .docs
        .iter()
        .map(|d| retriever_score(query_features, &d.features))
        .collect()
}

/// Scorer input of a (query, document) pair: the concatenation
/// (q, d, q⊙d), dimension 3·dim.
pub fn pair_input(query_features: &[f64], doc_features: &[f64]) -> PairInput {
    debug_assert_eq!(query_features.len(), doc_features.len());
    let mut features = Vec::with_capacity(3 * query_features.len());
    features.extend_from_slice(query_features);
    features.extend_from_slice(doc_features);
    features.extend(query_features.iter().zip(doc_features).map(|(a, b)| a * b));
    PairInput { features }
}

fn unit_gaussian(rng: &mut Rng, dim: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
    normalize(v)
}

fn normalize(mut v: Vec<f64>) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    v.iter_mut().for_each(|x| *x /= norm);
    v
}

fn around_center(center: &[f64], spread: f64, rng: &mut Rng) -> Vec<f64> {
    let v: Vec<f64> = center.iter().map(|c| c + spread * rng.normal()).collect();
    normalize(v)
}

/// Generate a corpus and queries with planted relevance.
///
/// Every emitted query has a non-empty relevant set; draws whose clean
/// affinity clears the threshold for no document are regenerated
/// internally and never emitted. Identical arguments produce byte-identical
/// corpora.
pub fn generate_corpus(
    seed: u64,
    n_queries: usize,
    n_docs: usize,
    dim: usize,
    noise: f64,
) -> Result<(Corpus, Vec<QueryRecord>)> {
    if n_docs < 50 {
        return Err(Error::InvalidConfig(format!("need at least 50 documents, got {n_docs}")));
    }
    if dim < 4 {
        return Err(Error::InvalidConfig(format!("need dim >= 4, got {dim}")));
    }
    if n_queries == 0 {
        return Err(Error::InvalidConfig("need at least one query".into()));
    }
    if !(noise.is_finite() && noise >= 0.0) {
        return Err(Error::InvalidConfig(format!("noise must be non-negative, got {noise}")));
    }

    let mut center_rng = Rng::substream(seed, 0x01);
    let mut doc_rng = Rng::substream(seed, 0x02);
    let mut query_rng = Rng::substream(seed, 0x03);

    let centers: Vec<Vec<f64>> = (0..CLUSTERS).map(|_| unit_gaussian(&mut center_rng, dim)).collect();

    let docs: Vec<Document> = (0..n_docs)
        .map(|j| Document {
            id: format!("d{j:05}"),
            features: around_center(&centers[j % CLUSTERS], LATENT_SPREAD, &mut doc_rng),
        })
        .collect();
    let corpus = Corpus::from_docs(docs)?;

    let mut queries = Vec::with_capacity(n_queries);
    for i in 0..n_queries {
        let mut planted = None;
        for _ in 0..MAX_PLANT_RETRIES {
            let cluster = query_rng.below(CLUSTERS);
            let clean = around_center(&centers[cluster], LATENT_SPREAD, &mut query_rng);
            let relevant: BTreeSet<String> = corpus
                .docs
                .iter()
                .filter(|d| retriever_score(&clean, &d.features) >= RELEVANCE_THRESHOLD)
                .map(|d| d.id.clone())
                .collect();
            if !relevant.is_empty() {
                planted = Some((cluster, clean, relevant));
                break;
            }
        }
        let (cluster, clean, relevant) = planted.ok_or_else(|| {
            Error::InvalidConfig("could not plant a relevant document; corpus too sparse".into())
        })?;
        let scale = noise / (dim as f64).sqrt();
        let observed = if noise > 0.0 {
            normalize(clean.iter().map(|c| c + scale * query_rng.normal()).collect())
        } else {
            clean
        };
        queries.push(QueryRecord {
            id: format!("q{i:04}"),
            features: observed,
            task_id: cluster as u32,
            relevant_ids: relevant,
        });
    }

    Ok((corpus, queries))
}

/// Assemble one example: pick the positive and mine N distinct negatives.
///
/// The positive is the highest-retriever-scored relevant document. Hard
/// negatives are a uniform sample of the irrelevant documents inside the
/// retriever's top-`candidate_pool` ranks; the remainder are uniform over
/// all irrelevant documents, de-duplicated by id with hard picks taking
/// precedence.
pub fn mine_negatives(
    query: &QueryRecord,
    corpus: &Corpus,
    retriever_scores: &[f64],
    cfg: &MiningConfig,
    rng: &mut Rng,
) -> Result<Example> {
    cfg.validate()?;
    if retriever_scores.len() != corpus.len() {
        return Err(Error::DimensionMismatch {
            context: "retriever scores vs corpus",
            expected: corpus.len(),
            got: retriever_scores.len(),
        });
    }
    if query.relevant_ids.is_empty() {
        return Err(Error::InvalidInput(format!("query {} has no relevant documents", query.id)));
    }

    // descending retriever order, ties broken by id for determinism
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.sort_by(|&a, &b| {
        retriever_scores[b]
            .partial_cmp(&retriever_scores[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| corpus.docs[a].id.cmp(&corpus.docs[b].id))
    });

    let positive_idx = *order
        .iter()
        .find(|&&i| query.relevant_ids.contains(&corpus.docs[i].id))
        .ok_or_else(|| Error::InvalidInput(format!("query {}: relevant ids not in corpus", query.id)))?;

    let irrelevant: Vec<usize> = order
        .iter()
        .copied()
        .filter(|&i| !query.relevant_ids.contains(&corpus.docs[i].id))
        .collect();
    if irrelevant.len() < cfg.n_total {
        return Err(Error::InvalidInput(format!(
            "query {}: only {} irrelevant documents for {} negatives",
            query.id,
            irrelevant.len(),
            cfg.n_total
        )));
    }

    let hard_pool: Vec<usize> = order
        .iter()
        .take(cfg.candidate_pool)
        .copied()
        .filter(|&i| !query.relevant_ids.contains(&corpus.docs[i].id))
        .collect();
    let hard_want = ((cfg.hard_fraction * cfg.n_total as f64).round() as usize).min(cfg.n_total);
    let hard_count = hard_want.min(hard_pool.len());

    let hard_picks = sample_distinct(&hard_pool, hard_count, rng);
    let picked: BTreeSet<usize> = hard_picks.iter().copied().collect();
    let random_candidates: Vec<usize> = irrelevant.iter().copied().filter(|i| !picked.contains(i)).collect();
    let random_picks = sample_distinct(&random_candidates, cfg.n_total - hard_count, rng);

    let mut negatives = Vec::with_capacity(cfg.n_total);
    for &i in &hard_picks {
        negatives.push(Negative { doc: corpus.docs[i].clone(), hard: true });
    }
    for &i in &random_picks {
        negatives.push(Negative { doc: corpus.docs[i].clone(), hard: false });
    }

    Ok(Example {
        query: query.clone(),
        positive: corpus.docs[positive_idx].clone(),
        negatives,
    })
}

fn sample_distinct(pool: &[usize], count: usize, rng: &mut Rng) -> Vec<usize> {
    debug_assert!(count <= pool.len());
    let mut indices: Vec<usize> = pool.to_vec();
    // partial Fisher–Yates: the first `count` slots end up a uniform sample
    for i in 0..count {
        let j = i + rng.below(indices.len() - i);
        indices.swap(i, j);
    }
    indices.truncate(count);
    indices
}

// ─── file formats ───────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct NegativeRecord {
    id: String,
    features: Vec<f64>,
    hard: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ExampleRecord {
    query_id: String,
    task_id: u32,
    query_features: Vec<f64>,
    positive: Document,
    negatives: Vec<NegativeRecord>,
}

const EXAMPLE_KEYS: [&str; 5] = ["query_id", "task_id", "query_features", "positive", "negatives"];

/// Write examples as JSON-Lines, one example per line.
///
/// Floats serialize with the shortest representation that parses back to
/// the identical 64-bit value.
pub fn write_examples(path: &Path, examples: &[Example]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for ex in examples {
        let record = ExampleRecord {
            query_id: ex.query.id.clone(),
            task_id: ex.query.task_id,
            query_features: ex.query.features.clone(),
            positive: ex.positive.clone(),
            negatives: ex
                .negatives
                .iter()
                .map(|n| NegativeRecord {
                    id: n.doc.id.clone(),
                    features: n.doc.features.clone(),
                    hard: n.hard,
                })
                .collect(),
        };
        serde_json::to_writer(&mut out, &record)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Streaming reader over a JSONL example file.
///
/// Malformed lines surface as errors carrying the line number; unknown
/// fields are skipped and reported through [`ExampleReader::warnings`].
pub struct ExampleReader {
    path: String,
    lines: std::iter::Enumerate<std::io::Lines<BufReader<std::fs::File>>>,
    warnings: Vec<String>,
}

impl ExampleReader {
    pub fn open(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Ok(ExampleReader {
            path: path.display().to_string(),
            lines: BufReader::new(file).lines().enumerate(),
            warnings: Vec::new(),
        })
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    fn parse_line(&mut self, lineno: usize, text: &str) -> Result<Example> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::MalformedLine {
                path: self.path.clone(),
                line: lineno,
                message: e.to_string(),
            })?;
        if let Some(obj) = value.as_object() {
            for key in obj.keys() {
                if !EXAMPLE_KEYS.contains(&key.as_str()) {
                    self.warnings
                        .push(format!("{}: line {}: ignoring unknown field `{}`", self.path, lineno, key));
                }
            }
        }
        let record: ExampleRecord =
            serde_json::from_value(value).map_err(|e| Error::MalformedLine {
                path: self.path.clone(),
                line: lineno,
                message: e.to_string(),
            })?;
        // The training file carries labels implicitly: the positive is the
        // one relevant document of the example.
        let relevant_ids = BTreeSet::from([record.positive.id.clone()]);
        Ok(Example {
            query: QueryRecord {
                id: record.query_id,
                features: record.query_features,
                task_id: record.task_id,
                relevant_ids,
            },
            positive: record.positive,
            negatives: record
                .negatives
                .into_iter()
                .map(|n| Negative {
                    doc: Document { id: n.id, features: n.features },
                    hard: n.hard,
                })
                .collect(),
        })
    }
}

impl Iterator for ExampleReader {
    type Item = Result<Example>;

    fn next(&mut self) -> Option<Self::Item> {
        let (idx, line) = self.lines.next()?;
        match line {
            Ok(text) => Some(self.parse_line(idx + 1, &text)),
            Err(e) => Some(Err(Error::Io(e))),
        }
    }
}

/// Read a whole example file, returning the examples and any field warnings.
pub fn read_examples(path: &Path) -> Result<(Vec<Example>, Vec<String>)> {
    let mut reader = ExampleReader::open(path)?;
    let mut examples = Vec::new();
    for item in reader.by_ref() {
        examples.push(item?);
    }
    Ok((examples, std::mem::take(&mut reader.warnings)))
}

/// Write the corpus as JSONL: one `{"id", "features"}` object per line.
pub fn write_corpus(path: &Path, corpus: &Corpus) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for doc in corpus.docs() {
        serde_json::to_writer(&mut out, doc)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Read a corpus file written by [`write_corpus`].
pub fn read_corpus(path: &Path) -> Result<Corpus> {
    let file = std::fs::File::open(path)?;
    let mut docs = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let text = line?;
        let doc: Document = serde_json::from_str(&text).map_err(|e| Error::MalformedLine {
            path: path.display().to_string(),
            line: idx + 1,
            message: e.to_string(),
        })?;
        docs.push(doc);
    }
    Corpus::from_docs(docs)
}

/// 64-bit FNV-1a content hash, hex-encoded; the run manifests use it to pin
/// data files.
pub fn content_hash_hex(bytes: &[u8]) -> String {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    format!("{hash:016x}")
}

/// Content hash of a file on disk.
pub fn file_hash_hex(path: &Path) -> Result<String> {
    Ok(content_hash_hex(&std::fs::read(path)?))
}
