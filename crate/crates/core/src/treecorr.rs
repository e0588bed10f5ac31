//! Pairwise heads predicting the corrected tree's relation, distance and
//! ancestry for target word pairs, and their overlap-masked losses.

use rand::Rng;

use crate::deptree::PairTargets;
use crate::error::{Error, Result};
use crate::nn::{tree_mlp_prefix, Forward};
use crate::numerics::{Real, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TreeTask {
    Rel,
    Dist,
    Anc,
}

impl TreeTask {
    pub const ALL: [TreeTask; 3] = [TreeTask::Rel, TreeTask::Dist, TreeTask::Anc];

    pub fn name(self) -> &'static str {
        match self {
            Self::Rel => "rel",
            Self::Dist => "dist",
            Self::Anc => "anc",
        }
    }

    fn target(self, t: &PairTargets, i: usize, j: usize) -> usize {
        match self {
            Self::Rel => t.rel(i, j),
            Self::Dist => t.dist(i, j),
            Self::Anc => t.anc(i, j).class(),
        }
    }
}

/// Hidden pair features `ReLU(ReLU([h_i ‖ h_j]·W1 + b1)·W2 + b2)`.
pub fn pair_hidden<T: Real>(f: &mut Forward<'_, T>, words: Var, pairs: &[(usize, usize)], task: TreeTask) -> Result<Var> {
    let n = f.g.shape(words)[0];
    if let Some(&(i, j)) = pairs.iter().find(|&&(i, j)| i >= n || j >= n) {
        return Err(Error::OutOfRange(format!("pair ({i}, {j}) over {n} words")));
    }
    let (is, js): (Vec<usize>, Vec<usize>) = pairs.iter().copied().unzip();
    let hi = f.g.gather_rows(words, &is)?;
    let hj = f.g.gather_rows(words, &js)?;
    let x = f.g.concat_cols(&[hi, hj])?;
    let m = tree_mlp_prefix(f.cfg, task.name());
    let h = f.linear(x, &format!("{m}.l1"))?;
    let h = f.g.relu(h);
    let h = f.linear(h, &format!("{m}.l2"))?;
    Ok(f.g.relu(h))
}

/// Class logits `[pairs, classes]` of one task.
pub fn pair_logits<T: Real>(f: &mut Forward<'_, T>, words: Var, pairs: &[(usize, usize)], task: TreeTask) -> Result<Var> {
    let h = pair_hidden(f, words, pairs, task)?;
    f.linear(h, &format!("tree.{}", task.name()))
}

/// Ordered pairs of distinct overlapped nodes: all of them up to `cap`
/// nodes, otherwise `per_node · |nodes|` uniform draws.
pub fn select_pairs<R: Rng + ?Sized>(nodes: &[usize], cap: usize, per_node: usize, rng: &mut R) -> Vec<(usize, usize)> {
    let s = nodes.len();
    if s < 2 {
        return Vec::new();
    }
    if s <= cap {
        return nodes
            .iter()
            .flat_map(|&i| nodes.iter().filter(move |&&j| j != i).map(move |&j| (i, j)))
            .collect();
    }
    (0..per_node * s)
        .map(|_| {
            let a = rng.gen_range(0..s);
            let mut b = rng.gen_range(0..s - 1);
            if b >= a {
                b += 1;
            }
            (nodes[a], nodes[b])
        })
        .collect()
}

/// Scalar losses of the three tasks.
#[derive(Clone, Copy, Debug)]
pub struct TreeLosses {
    pub rel: Var,
    pub dist: Var,
    pub anc: Var,
}

/// Mean cross-entropy over `pairs` of each task, scaled by `M / |S|` where
/// `M` is the number of target words and `|S|` the overlap size. All three
/// are exactly zero when fewer than two nodes overlap.
pub fn treecorr_loss<T: Real>(
    f: &mut Forward<'_, T>,
    words: Var,
    targets: &PairTargets,
    overlap: &[usize],
    pairs: &[(usize, usize)],
) -> Result<TreeLosses> {
    if overlap.len() < 2 || pairs.is_empty() {
        let z = f.constant(Tensor::scalar(T::zero()));
        return Ok(TreeLosses { rel: z, dist: z, anc: z });
    }
    let factor = T::of(targets.len() as f64 / overlap.len() as f64);
    let shared = if f.cfg.shared_tree_mlp {
        Some(pair_hidden(f, words, pairs, TreeTask::Rel)?)
    } else {
        None
    };
    let mut out = [None; 3];
    for (slot, task) in out.iter_mut().zip(TreeTask::ALL) {
        let h = match shared {
            Some(h) => h,
            None => pair_hidden(f, words, pairs, task)?,
        };
        let logits = f.linear(h, &format!("tree.{}", task.name()))?;
        let gold: Vec<usize> = pairs.iter().map(|&(i, j)| task.target(targets, i, j)).collect();
        let ce = f.g.cross_entropy(logits, &gold)?;
        let mean = f.g.mean(ce);
        *slot = Some(f.g.scale(mean, factor));
    }
    let [rel, dist, anc] = out.map(|v| v.expect("every task filled"));
    Ok(TreeLosses { rel, dist, anc })
}
