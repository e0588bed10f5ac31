//! Dependency trees: data model, CoNLL-U ingestion, neighbor relations and
//! pairwise supervision targets.

mod align;
mod conllu;
mod targets;

use std::collections::HashMap;

pub use align::{overlap_align, OverlapSet};
pub use conllu::{parse_conllu, serialize_conllu};
pub use targets::{pair_targets, Ancestry, PairTargets, DEFAULT_MAX_DISTANCE};

use crate::error::{Error, Result};

/// Ordered set of relation labels.
///
/// With `L` labels, id `L` is the non-adjacent class of the relation
/// classifier and id `L + 1` is the self-loop label used for one-word
/// sentences. Neither ever labels a tree edge.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RelationVocab {
    labels: Vec<String>,
    index: HashMap<String, usize>,
    frozen: bool,
}

impl RelationVocab {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_labels<I, S>(labels: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut v = Self::new();
        for l in labels {
            let l = l.into();
            if v.index.contains_key(&l) {
                return Err(Error::Config(format!("duplicate relation label `{l}`")));
            }
            v.intern(&l)?;
        }
        Ok(v)
    }

    /// Stops [`RelationVocab::intern`] from adding labels.
    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    /// Id of `label`, adding it unless the vocabulary is frozen.
    pub fn intern(&mut self, label: &str) -> Result<usize> {
        if let Some(&id) = self.index.get(label) {
            return Ok(id);
        }
        if self.frozen {
            return Err(Error::UnknownRelation(label.to_string()));
        }
        self.labels.push(label.to_string());
        self.index.insert(label.to_string(), self.labels.len() - 1);
        Ok(self.labels.len() - 1)
    }

    pub fn id(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }

    pub fn label(&self, id: usize) -> Option<&str> {
        self.labels.get(id).map(String::as_str)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    /// Number of real labels, `L`.
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn non_adjacent(&self) -> usize {
        self.labels.len()
    }

    pub fn self_loop(&self) -> usize {
        self.labels.len() + 1
    }

    /// Rows of the relation-embedding table: labels plus the two reserved ids.
    pub fn embedding_rows(&self) -> usize {
        self.labels.len() + 2
    }

    /// Display name for a relation class, including the reserved ones.
    pub fn class_name(&self, id: usize) -> &str {
        match self.label(id) {
            Some(l) => l,
            None if id == self.non_adjacent() => "_NONADJ",
            None if id == self.self_loop() => "_SELF",
            None => "_INVALID",
        }
    }
}

/// One sentence's dependency structure.
///
/// `heads[i]` is the 1-based index of word `i`'s head, or 0 for the
/// virtual root; `labels[i]` labels the edge from that head to word `i`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DepTree {
    words: Vec<String>,
    heads: Vec<usize>,
    labels: Vec<usize>,
}

impl DepTree {
    /// Builds and validates a tree whose label ids must be below `num_labels`.
    pub fn new(words: Vec<String>, heads: Vec<usize>, labels: Vec<usize>, num_labels: usize) -> Result<Self> {
        let tree = Self { words, heads, labels };
        tree.validate(num_labels)?;
        Ok(tree)
    }

    /// Checks every structural invariant: one root, heads in range, no
    /// cycles, label ids below `num_labels`.
    pub fn validate(&self, num_labels: usize) -> Result<()> {
        let n = self.words.len();
        if n == 0 {
            return Err(Error::InvalidTree("empty sentence".into()));
        }
        if self.heads.len() != n || self.labels.len() != n {
            return Err(Error::InvalidTree(format!(
                "{} words, {} heads, {} labels",
                n,
                self.heads.len(),
                self.labels.len()
            )));
        }
        let roots = self.heads.iter().filter(|&&h| h == 0).count();
        if roots != 1 {
            return Err(Error::InvalidTree(format!("{roots} roots")));
        }
        for (i, (&h, &l)) in self.heads.iter().zip(&self.labels).enumerate() {
            if h > n {
                return Err(Error::InvalidTree(format!("word {} has dangling head {h}", i + 1)));
            }
            if h == i + 1 {
                return Err(Error::InvalidTree(format!("word {} heads itself", i + 1)));
            }
            if l >= num_labels {
                return Err(Error::InvalidTree(format!("word {} has label id {l} >= {num_labels}", i + 1)));
            }
        }
        if let Some(w) = self.first_cycle() {
            return Err(Error::InvalidTree(format!("cycle through word {}", w + 1)));
        }
        Ok(())
    }

    /// 0-based index of some word on a head cycle, if any.
    fn first_cycle(&self) -> Option<usize> {
        let n = self.words.len();
        (0..n).find(|&start| {
            let mut cur = start;
            for _ in 0..=n {
                match self.heads[cur] {
                    0 => return false,
                    h if h > n => return false,
                    h => cur = h - 1,
                }
            }
            true
        })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    /// Raw 1-based heads, 0 meaning the virtual root.
    pub fn heads(&self) -> &[usize] {
        &self.heads
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// 0-based head of word `i`, `None` for the root word.
    pub fn head(&self, i: usize) -> Option<usize> {
        self.heads[i].checked_sub(1)
    }

    /// 0-based index of the root word.
    pub fn root(&self) -> usize {
        self.heads.iter().position(|&h| h == 0).expect("validated tree has a root")
    }

    /// 0-based children of word `i`, in increasing order.
    pub fn children(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.heads
            .iter()
            .enumerate()
            .filter(move |&(_, &h)| h == i + 1)
            .map(|(c, _)| c)
    }

    /// Edges `(head, dependent, label)` with 0-based indices, root excluded.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        (0..self.len()).filter_map(|d| self.head(d).map(|h| (h, d, self.labels[d])))
    }
}

/// Orientation of a relation relative to the node that owns it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Direction {
    /// Edge from the node's head into the node.
    In,
    /// Edge from the node to one of its children.
    Out,
}

/// One incident labeled relation of a node.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Neighbor {
    pub direction: Direction,
    pub other: usize,
    pub label: usize,
}

impl Neighbor {
    /// The relation as a `(head, dependent, label)` triple seen from `owner`.
    pub fn triple(&self, owner: usize) -> (usize, usize, usize) {
        match self.direction {
            Direction::Out => (owner, self.other, self.label),
            Direction::In => (self.other, owner, self.label),
        }
    }
}

/// Incident relations of every node.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NeighborRelations {
    nodes: Vec<Vec<Neighbor>>,
}

impl NeighborRelations {
    pub fn of(&self, node: usize) -> &[Neighbor] {
        &self.nodes[node]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &[Neighbor]> {
        self.nodes.iter().map(Vec::as_slice)
    }

    /// Total relation count across nodes.
    pub fn total(&self) -> usize {
        self.nodes.iter().map(Vec::len).sum()
    }
}

/// For each node: its incoming relation from its head (unless it is the
/// root word) followed by outgoing relations to its children. A one-word
/// sentence gets a single self-loop with the vocabulary's self-loop label.
pub fn neighbor_relations(tree: &DepTree, vocab: &RelationVocab) -> NeighborRelations {
    let n = tree.len();
    let mut nodes: Vec<Vec<Neighbor>> = vec![Vec::new(); n];
    for (i, node) in nodes.iter_mut().enumerate() {
        if let Some(h) = tree.head(i) {
            node.push(Neighbor {
                direction: Direction::In,
                other: h,
                label: tree.labels()[i],
            });
        }
    }
    for (h, d, l) in tree.edges() {
        nodes[h].push(Neighbor {
            direction: Direction::Out,
            other: d,
            label: l,
        });
    }
    if n == 1 {
        nodes[0].push(Neighbor {
            direction: Direction::Out,
            other: 0,
            label: vocab.self_loop(),
        });
    }
    NeighborRelations { nodes }
}
