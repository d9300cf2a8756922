//! Triple storage: vocabularies, per-split triple lists and relation-indexed
//! adjacency.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub type EntityId = usize;
pub type RelationId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triple {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

/// Set of splits whose triples are visible to a lookup.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SplitMask(u8);

impl SplitMask {
    pub const TRAIN: SplitMask = SplitMask(1);
    pub const VALID: SplitMask = SplitMask(2);
    pub const TEST: SplitMask = SplitMask(4);
    pub const TRAIN_VALID: SplitMask = SplitMask(3);
    pub const ALL: SplitMask = SplitMask(7);

    pub fn contains(self, split: Split) -> bool {
        self.0 & (1 << split.index()) != 0
    }

    pub fn union(self, other: SplitMask) -> SplitMask {
        SplitMask(self.0 | other.0)
    }
}

/// Bijective string ↔ dense id map, ids in first-appearance order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocab {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn from_names(names: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(names.len());
        for (i, n) in names.iter().enumerate() {
            if index.insert(n.clone(), i).is_some() {
                return Err(Error::Mismatch(format!("duplicate vocabulary entry `{n}`")));
            }
        }
        Ok(Vocab { names, index })
    }

    pub fn intern(&mut self, name: &str) -> usize {
        if let Some(&id) = self.index.get(name) {
            return id;
        }
        let id = self.names.len();
        self.names.push(name.to_owned());
        self.index.insert(name.to_owned(), id);
        id
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: usize) -> Option<&str> {
        self.names.get(id).map(String::as_str)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// SHA-256 over the names in id order, newline-separated.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for n in &self.names {
            h.update(n.as_bytes());
            h.update(b"\n");
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitStats {
    pub lines: usize,
    pub triples: usize,
    pub duplicates: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphStats {
    pub entities: usize,
    pub relations: usize,
    pub edges: usize,
    pub train: usize,
    pub valid: usize,
    pub test: usize,
}

impl std::fmt::Display for GraphStats {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "entities={} relations={} edges={}",
            self.entities, self.relations, self.edges
        )
    }
}

#[derive(Debug, Clone)]
pub struct KnowledgeGraph {
    entities: Vocab,
    relations: Vocab,
    triples: [Vec<Triple>; 3],
    forward: [HashMap<(EntityId, RelationId), Vec<EntityId>>; 3],
    ingest: [SplitStats; 3],
}

impl KnowledgeGraph {
    /// Builds a graph from already-interned triples. Duplicates inside a split
    /// are dropped (first occurrence kept).
    pub fn from_triples(
        entities: Vocab,
        relations: Vocab,
        splits: [Vec<Triple>; 3],
    ) -> Result<Self> {
        let mut kg = KnowledgeGraph {
            entities,
            relations,
            triples: Default::default(),
            forward: Default::default(),
            ingest: Default::default(),
        };
        for (split, list) in Split::ALL.into_iter().zip(splits) {
            for t in list {
                kg.check_triple(&t)?;
                kg.ingest[split.index()].lines += 1;
                kg.insert(split, t);
            }
        }
        kg.finish();
        Ok(kg)
    }

    fn check_triple(&self, t: &Triple) -> Result<()> {
        self.check_entity(t.head)?;
        self.check_entity(t.tail)?;
        self.check_relation(t.relation)
    }

    fn insert(&mut self, split: Split, t: Triple) -> bool {
        let tails = self.forward[split.index()]
            .entry((t.head, t.relation))
            .or_default();
        if tails.contains(&t.tail) {
            self.ingest[split.index()].duplicates += 1;
            return false;
        }
        tails.push(t.tail);
        self.triples[split.index()].push(t);
        self.ingest[split.index()].triples += 1;
        true
    }

    fn finish(&mut self) {
        for index in &mut self.forward {
            for tails in index.values_mut() {
                tails.sort_unstable();
            }
        }
    }

    pub fn entities(&self) -> &Vocab {
        &self.entities
    }

    pub fn relations(&self) -> &Vocab {
        &self.relations
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn triples(&self, split: Split) -> &[Triple] {
        &self.triples[split.index()]
    }

    pub fn split_stats(&self, split: Split) -> SplitStats {
        self.ingest[split.index()]
    }

    pub fn stats(&self) -> GraphStats {
        let [train, valid, test] = self.triples.each_ref().map(Vec::len);
        GraphStats {
            entities: self.num_entities(),
            relations: self.num_relations(),
            edges: train + valid + test,
            train,
            valid,
            test,
        }
    }

    pub fn check_entity(&self, id: EntityId) -> Result<()> {
        if id < self.num_entities() {
            Ok(())
        } else {
            Err(Error::IdOutOfRange {
                kind: "entity",
                id,
                size: self.num_entities(),
            })
        }
    }

    pub fn check_relation(&self, id: RelationId) -> Result<()> {
        if id < self.num_relations() {
            Ok(())
        } else {
            Err(Error::IdOutOfRange {
                kind: "relation",
                id,
                size: self.num_relations(),
            })
        }
    }

    /// Sorted, duplicate-free tails of `(head, relation)` over the masked splits.
    pub fn neighbors(
        &self,
        head: EntityId,
        relation: RelationId,
        mask: SplitMask,
    ) -> Result<Vec<EntityId>> {
        self.check_entity(head)?;
        self.check_relation(relation)?;
        let mut out = Vec::new();
        for split in Split::ALL {
            if mask.contains(split) {
                if let Some(tails) = self.forward[split.index()].get(&(head, relation)) {
                    out.extend_from_slice(tails);
                }
            }
        }
        out.sort_unstable();
        out.dedup();
        Ok(out)
    }

    /// Materializes the adjacency visible under `mask`, for repeated lookups.
    pub fn view(&self, mask: SplitMask) -> GraphView {
        let mut forward: HashMap<(EntityId, RelationId), Vec<EntityId>> = HashMap::new();
        let mut reverse: Vec<Vec<(EntityId, RelationId)>> = vec![Vec::new(); self.num_entities()];
        for split in Split::ALL {
            if !mask.contains(split) {
                continue;
            }
            for t in self.triples(split) {
                forward.entry((t.head, t.relation)).or_default().push(t.tail);
                reverse[t.tail].push((t.head, t.relation));
            }
        }
        for tails in forward.values_mut() {
            tails.sort_unstable();
            tails.dedup();
        }
        for sources in &mut reverse {
            sources.sort_unstable();
            sources.dedup();
        }
        GraphView {
            num_entities: self.num_entities(),
            forward,
            reverse,
        }
    }

    /// Reads TSV triple files, one per split. Vocabulary ids follow first
    /// appearance across the files in train, valid, test order.
    pub fn ingest_tsv(paths: &[(Split, &Path)]) -> Result<Self> {
        let mut entities = Vocab::default();
        let mut relations = Vocab::default();
        let mut splits: [Vec<Triple>; 3] = Default::default();
        let mut ordered: Vec<(Split, &Path)> = paths.to_vec();
        ordered.sort_by_key(|(s, _)| s.index());
        for (split, path) in ordered {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let list = &mut splits[split.index()];
            for (i, raw) in text.lines().enumerate() {
                let line = raw.strip_suffix('\r').unwrap_or(raw);
                let mut fields = line.split('\t');
                let (h, r, t) = match (fields.next(), fields.next(), fields.next(), fields.next()) {
                    (Some(h), Some(r), Some(t), None)
                        if !h.is_empty() && !r.is_empty() && !t.is_empty() =>
                    {
                        (h, r, t)
                    }
                    _ => {
                        return Err(Error::MalformedInput {
                            path: path.to_path_buf(),
                            line: i + 1,
                            message: "expected head<TAB>relation<TAB>tail".into(),
                        })
                    }
                };
                list.push(Triple {
                    head: entities.intern(h),
                    relation: relations.intern(r),
                    tail: entities.intern(t),
                });
            }
            if list.is_empty() {
                return Err(Error::format(path, "file contains no triples"));
            }
        }
        let kg = KnowledgeGraph::from_triples(entities, relations, splits)?;
        for split in Split::ALL {
            let s = kg.split_stats(split);
            if s.duplicates > 0 {
                log::warn!(
                    "{}: dropped {} duplicate triple(s)",
                    split.name(),
                    s.duplicates
                );
            }
        }
        Ok(kg)
    }

    /// Writes one split back out as TSV.
    pub fn write_tsv(&self, split: Split, path: &Path) -> Result<()> {
        let mut out = String::new();
        for t in self.triples(split) {
            out.push_str(&self.entities.names[t.head]);
            out.push('\t');
            out.push_str(&self.relations.names[t.relation]);
            out.push('\t');
            out.push_str(&self.entities.names[t.tail]);
            out.push('\n');
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn save_snapshot(&self, path: &Path) -> Result<()> {
        let snap = Snapshot {
            format: SNAPSHOT_FORMAT.into(),
            version: SNAPSHOT_VERSION,
            entities: self.entities.names.clone(),
            relations: self.relations.names.clone(),
            train: self.triples(Split::Train).iter().map(Triple::to_array).collect(),
            valid: self.triples(Split::Valid).iter().map(Triple::to_array).collect(),
            test: self.triples(Split::Test).iter().map(Triple::to_array).collect(),
        };
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        serde_json::to_writer(&mut w, &snap)
            .map_err(|e| Error::format(path, e.to_string()))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load_snapshot(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let header: SnapshotHeader = serde_json::from_slice(&bytes)
            .map_err(|e| Error::format(path, format!("not a graph snapshot: {e}")))?;
        if header.format != SNAPSHOT_FORMAT {
            return Err(Error::format(
                path,
                format!("unexpected format tag `{}`", header.format),
            ));
        }
        if header.version != SNAPSHOT_VERSION {
            return Err(Error::format(
                path,
                format!(
                    "snapshot version {} is not supported (expected {SNAPSHOT_VERSION})",
                    header.version
                ),
            ));
        }
        let snap: Snapshot =
            serde_json::from_slice(&bytes).map_err(|e| Error::format(path, e.to_string()))?;
        let to_triples = |v: Vec<[usize; 3]>| v.into_iter().map(Triple::from_array).collect();
        KnowledgeGraph::from_triples(
            Vocab::from_names(snap.entities).map_err(|e| Error::format(path, e.to_string()))?,
            Vocab::from_names(snap.relations).map_err(|e| Error::format(path, e.to_string()))?,
            [
                to_triples(snap.train),
                to_triples(snap.valid),
                to_triples(snap.test),
            ],
        )
        .map_err(|e| Error::format(path, e.to_string()))
    }
}

const SNAPSHOT_FORMAT: &str = "gaussq-graph";
const SNAPSHOT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Snapshot {
    format: String,
    version: u32,
    entities: Vec<String>,
    relations: Vec<String>,
    train: Vec<[usize; 3]>,
    valid: Vec<[usize; 3]>,
    test: Vec<[usize; 3]>,
}

#[derive(Deserialize)]
struct SnapshotHeader {
    format: String,
    version: u32,
}

impl Triple {
    fn to_array(&self) -> [usize; 3] {
        [self.head, self.relation, self.tail]
    }

    fn from_array([head, relation, tail]: [usize; 3]) -> Self {
        Triple {
            head,
            relation,
            tail,
        }
    }
}

/// Adjacency restricted to one split mask.
#[derive(Debug, Clone)]
pub struct GraphView {
    num_entities: usize,
    forward: HashMap<(EntityId, RelationId), Vec<EntityId>>,
    reverse: Vec<Vec<(EntityId, RelationId)>>,
}

impl GraphView {
    pub fn num_entities(&self) -> usize {
        self.num_entities
    }

    pub fn tails(&self, head: EntityId, relation: RelationId) -> &[EntityId] {
        self.forward
            .get(&(head, relation))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    /// Sorted `(head, relation)` pairs with an edge into `tail`.
    pub fn sources(&self, tail: EntityId) -> &[(EntityId, RelationId)] {
        self.reverse.get(tail).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Entities with at least one visible incoming edge.
    pub fn entities_with_sources(&self) -> Vec<EntityId> {
        (0..self.num_entities)
            .filter(|&e| !self.reverse[e].is_empty())
            .collect()
    }
}

/// Default file names inside a dataset directory.
pub fn split_paths(dir: &Path) -> Vec<(Split, PathBuf)> {
    Split::ALL
        .into_iter()
        .map(|s| (s, dir.join(format!("{}.txt", s.name()))))
        .filter(|(_, p)| p.exists())
        .collect()
}
