/// Aligned `(hypothesis position, target position)` pairs of equal words,
/// strictly increasing in both coordinates.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct OverlapSet {
    pairs: Vec<(usize, usize)>,
}

impl OverlapSet {
    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Target-side positions, increasing.
    pub fn target_nodes(&self) -> Vec<usize> {
        self.pairs.iter().map(|&(_, t)| t).collect()
    }
}

/// Longest common subsequence of exact word matches. Among optimal
/// alignments the one whose hypothesis positions are lexicographically
/// smallest is returned.
pub fn overlap_align<S: AsRef<str>>(hyp: &[S], tgt: &[S]) -> OverlapSet {
    let (n, m) = (hyp.len(), tgt.len());
    // suffix[i][j] = LCS length of hyp[i..] and tgt[j..]
    let mut suffix = vec![vec![0usize; m + 1]; n + 1];
    for i in (0..n).rev() {
        for j in (0..m).rev() {
            suffix[i][j] = if hyp[i].as_ref() == tgt[j].as_ref() {
                1 + suffix[i + 1][j + 1]
            } else {
                suffix[i + 1][j].max(suffix[i][j + 1])
            };
        }
    }
    let mut pairs = Vec::with_capacity(suffix[0][0]);
    let (mut i, mut j) = (0, 0);
    while i < n && j < m && suffix[i][j] > 0 {
        let want = suffix[i][j];
        let hit = (j..m).find(|&k| hyp[i].as_ref() == tgt[k].as_ref() && 1 + suffix[i + 1][k + 1] == want);
        if let Some(k) = hit {
            pairs.push((i, k));
            j = k + 1;
        }
        i += 1;
    }
    OverlapSet { pairs }
}
