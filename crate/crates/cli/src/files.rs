//! On-disk formats owned by the CLI: evaluation pools, CSV tables, and the
//! run manifest.

use std::collections::BTreeSet;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use rerank_core::evalrank::CandidatePool;

use crate::CliError;

/// One evaluation pool line: the query, its top retrieved candidates in
/// retriever order, and the relevance labels.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PoolRecord {
    pub query_id: String,
    pub task_id: u32,
    pub query_features: Vec<f64>,
    pub candidates: Vec<CandidateRecord>,
    pub relevant_ids: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub id: String,
    pub score: f64,
}

impl PoolRecord {
    pub fn to_pool(&self) -> Result<CandidatePool, CliError> {
        CandidatePool::new(
            self.query_id.clone(),
            self.candidates.iter().map(|c| (c.id.clone(), c.score)).collect(),
            self.relevant_ids.iter().cloned().collect::<BTreeSet<_>>(),
        )
        .map_err(CliError::from)
    }
}

pub fn write_pools(path: &Path, records: &[PoolRecord]) -> Result<(), CliError> {
    let file = std::fs::File::create(path).map_err(|e| io_at(path, &e))?;
    let mut out = std::io::BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut out, r).map_err(|e| CliError::Io(e.to_string()))?;
        out.write_all(b"\n").map_err(|e| io_at(path, &e))?;
    }
    out.flush().map_err(|e| io_at(path, &e))?;
    Ok(())
}

pub fn read_pools(path: &Path) -> Result<Vec<PoolRecord>, CliError> {
    let file = std::fs::File::open(path).map_err(|e| io_at(path, &e))?;
    let mut records = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let text = line.map_err(|e| io_at(path, &e))?;
        let record: PoolRecord = serde_json::from_str(&text).map_err(|e| {
            CliError::Io(format!("{}: line {}: {e}", path.display(), idx + 1))
        })?;
        records.push(record);
    }
    Ok(records)
}

fn io_at(path: &Path, e: &dyn std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

/// Write a CSV file from a header and pre-joined rows. Floats should be
/// formatted with `{}` so the text round-trips to the identical bits.
pub fn write_csv(path: &Path, header: &str, rows: &[String]) -> Result<(), CliError> {
    let mut text = String::with_capacity(rows.len() * 32 + header.len() + 1);
    text.push_str(header);
    text.push('\n');
    for row in rows {
        text.push_str(row);
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| io_at(path, &e))
}
