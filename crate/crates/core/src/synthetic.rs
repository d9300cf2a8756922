//! Seeded synthetic knowledge graph with a planted group hierarchy.
//!
//! Entities are partitioned into groups of equal size. The groups form a tree
//! whose root is the empty relation sequence and whose other nodes are the
//! non-decreasing relation sequences of length 1, 2, 3, ... in order, so a
//! group's parent is its sequence minus the last relation and the edge is
//! labelled by that relation. Every member of a parent group links to every
//! member of the child group, which makes each `(head, relation)` answer set
//! a whole group. Because sequences are non-decreasing, no two groups are
//! reached by the same multiset of relations from the root.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::kg::{KnowledgeGraph, Triple, Vocab};

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub num_entities: usize,
    pub num_relations: usize,
    pub group_size: usize,
    pub valid_fraction: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            num_entities: 200,
            num_relations: 5,
            group_size: 4,
            valid_fraction: 0.1,
            test_fraction: 0.1,
            seed: 0,
        }
    }
}

/// Relation sequences of the group tree in breadth-first order.
fn group_sequences(groups: usize, relations: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    let mut head = 0;
    while out.len() < groups {
        let parent = out[head].clone();
        let from = parent.last().copied().unwrap_or(0);
        for r in from..relations {
            if out.len() == groups {
                break;
            }
            let mut child = parent.clone();
            child.push(r);
            out.push(child);
        }
        head += 1;
    }
    out
}

pub fn planted_hierarchy(config: &SyntheticConfig) -> Result<KnowledgeGraph> {
    let SyntheticConfig {
        num_entities,
        num_relations,
        group_size,
        valid_fraction,
        test_fraction,
        seed,
    } = *config;
    if group_size < 2 || num_entities < 2 * group_size || num_entities % group_size != 0 {
        return Err(Error::InvalidParameter(format!(
            "need at least two groups of size >= 2 dividing the entity count, got {num_entities} entities in groups of {group_size}"
        )));
    }
    if num_relations == 0 {
        return Err(Error::InvalidParameter("need at least one relation".into()));
    }
    if !(0.0..1.0).contains(&(valid_fraction + test_fraction)) || valid_fraction < 0.0 || test_fraction < 0.0 {
        return Err(Error::InvalidParameter(
            "valid and test fractions must be non-negative and sum below 1".into(),
        ));
    }
    let groups = num_entities / group_size;
    let seqs = group_sequences(groups, num_relations);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // entity ids are shuffled so that id order carries no group information
    let mut ids: Vec<usize> = (0..num_entities).collect();
    ids.shuffle(&mut rng);
    let member = |g: usize, m: usize| ids[g * group_size + m];
    let mut names = vec![String::new(); num_entities];
    for g in 0..groups {
        for m in 0..group_size {
            names[member(g, m)] = format!("g{g}_{m}");
        }
    }

    let mut triples = Vec::new();
    for (child, seq) in seqs.iter().enumerate().skip(1) {
        let parent = seqs
            .iter()
            .position(|s| s[..] == seq[..seq.len() - 1])
            .expect("parents precede children");
        let relation = *seq.last().expect("non-root sequences are non-empty");
        for a in 0..group_size {
            for b in 0..group_size {
                triples.push(Triple {
                    head: member(parent, a),
                    relation,
                    tail: member(child, b),
                });
            }
        }
    }
    triples.shuffle(&mut rng);
    let n = triples.len();
    let n_test = (n as f64 * test_fraction).round() as usize;
    let n_valid = (n as f64 * valid_fraction).round() as usize;
    let test = triples.split_off(n - n_test);
    let valid = triples.split_off(n - n_test - n_valid);

    KnowledgeGraph::from_triples(
        Vocab::from_names(names)?,
        Vocab::from_names((0..num_relations).map(|r| format!("r{r}")).collect())?,
        [triples, valid, test],
    )
}
