use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{parse_query, serialize_query, QueryDag, QueryType};
use crate::error::{Error, Result};
use crate::kg::{EntityId, KnowledgeGraph};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuerySample {
    pub dag: QueryDag,
    pub query_type: QueryType,
    /// Sorted, non-empty.
    pub answers: Vec<EntityId>,
    /// Answers already reachable through training edges, when known.
    pub easy_answers: Option<Vec<EntityId>>,
    pub hard_negatives: Option<Vec<EntityId>>,
}

impl QuerySample {
    /// Answers that are not easy; all answers when no easy set is recorded.
    pub fn hard_answers(&self) -> Vec<EntityId> {
        match &self.easy_answers {
            Some(easy) => self
                .answers
                .iter()
                .copied()
                .filter(|a| easy.binary_search(a).is_err())
                .collect(),
            None => self.answers.clone(),
        }
    }
}

/// One line of a workload file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkloadRecord {
    pub type_tag: QueryType,
    pub query: String,
    pub answers: Vec<EntityId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub easy_answers: Option<Vec<EntityId>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hard_negatives: Option<Vec<EntityId>>,
}

pub fn write_workload(path: &Path, samples: &[QuerySample], kg: &KnowledgeGraph) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for s in samples {
        let rec = WorkloadRecord {
            type_tag: s.query_type,
            query: serialize_query(&s.dag, kg.entities(), kg.relations())?,
            answers: s.answers.clone(),
            easy_answers: s.easy_answers.clone(),
            hard_negatives: s.hard_negatives.clone(),
        };
        serde_json::to_writer(&mut w, &rec).map_err(|e| Error::format(path, e.to_string()))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a workload file, checking each record's shape against its tag and
/// its answer ids against the graph.
pub fn read_workload(path: &Path, kg: &KnowledgeGraph) -> Result<Vec<QuerySample>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |message: String| Error::MalformedInput {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let rec: WorkloadRecord = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
        let dag = parse_query(&rec.query, kg.entities(), kg.relations())
            .map_err(|e| bad(e.to_string()))?;
        if dag.shape() != Some(rec.type_tag) {
            return Err(bad(format!(
                "query does not have the shape of a `{}` query",
                rec.type_tag
            )));
        }
        for list in [Some(&rec.answers), rec.easy_answers.as_ref(), rec.hard_negatives.as_ref()]
            .into_iter()
            .flatten()
        {
            if let Some(&bad_id) = list.iter().find(|&&a| a >= kg.num_entities()) {
                return Err(bad(format!("entity id {bad_id} out of range")));
            }
        }
        if rec.answers.is_empty() {
            return Err(bad("empty answer set".into()));
        }
        let sorted = |mut v: Vec<EntityId>| {
            v.sort_unstable();
            v.dedup();
            v
        };
        out.push(QuerySample {
            dag,
            query_type: rec.type_tag,
            answers: sorted(rec.answers),
            easy_answers: rec.easy_answers.map(sorted),
            hard_negatives: rec.hard_negatives,
        });
    }
    Ok(out)
}
