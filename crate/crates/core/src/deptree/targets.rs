use super::{DepTree, RelationVocab};

pub const DEFAULT_MAX_DISTANCE: usize = 16;

/// Ancestor–descendant class of an ordered word pair `(i, j)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Ancestry {
    /// `i` lies on the root-to-`j` path.
    Ancestor = 0,
    /// `j` lies on the root-to-`i` path.
    Descendant = 1,
    None = 2,
}

impl Ancestry {
    pub const CLASSES: usize = 3;

    pub fn class(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Ancestor => "ANCESTOR",
            Self::Descendant => "DESCENDANT",
            Self::None => "NONE",
        }
    }
}

/// Dense `N x N` supervision for the tree-correction heads.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PairTargets {
    n: usize,
    max_distance: usize,
    rel: Vec<usize>,
    dist: Vec<usize>,
    anc: Vec<Ancestry>,
}

impl PairTargets {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn max_distance(&self) -> usize {
        self.max_distance
    }

    /// Relation class: the edge label for a head→dependent pair, else the
    /// non-adjacent class.
    pub fn rel(&self, i: usize, j: usize) -> usize {
        self.rel[i * self.n + j]
    }

    /// Undirected tree distance, clamped to the maximum distance.
    pub fn dist(&self, i: usize, j: usize) -> usize {
        self.dist[i * self.n + j]
    }

    pub fn anc(&self, i: usize, j: usize) -> Ancestry {
        self.anc[i * self.n + j]
    }
}

/// Builds relation, distance and ancestry targets for every ordered pair.
pub fn pair_targets(tree: &DepTree, vocab: &RelationVocab, max_distance: usize) -> PairTargets {
    let n = tree.len();
    let mut rel = vec![vocab.non_adjacent(); n * n];
    for (h, d, l) in tree.edges() {
        rel[h * n + d] = l;
    }

    // root paths: ancestors of i listed from i upward, including i
    let paths: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            let mut path = vec![i];
            let mut cur = i;
            while let Some(h) = tree.head(cur) {
                path.push(h);
                cur = h;
            }
            path
        })
        .collect();
    let depth: Vec<usize> = paths.iter().map(|p| p.len() - 1).collect();

    let mut dist = vec![0; n * n];
    let mut anc = vec![Ancestry::None; n * n];
    for i in 0..n {
        let mut on_path = vec![false; n];
        for &a in &paths[i] {
            on_path[a] = true;
        }
        for j in 0..n {
            // lowest common ancestor: first node on j's upward path that is also above i
            let lca = *paths[j].iter().find(|&&a| on_path[a]).expect("common root");
            let d = depth[i] + depth[j] - 2 * depth[lca];
            dist[i * n + j] = d.min(max_distance);
            if i != j {
                anc[i * n + j] = if lca == i {
                    Ancestry::Ancestor
                } else if lca == j {
                    Ancestry::Descendant
                } else {
                    Ancestry::None
                };
            }
        }
    }
    PairTargets {
        n,
        max_distance,
        rel,
        dist,
        anc,
    }
}
