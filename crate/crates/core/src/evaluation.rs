//! Token-level edit extraction and precision-weighted F-scores.

use std::collections::HashMap;
use std::fmt;

use crate::error::{Error, Result};

/// Replace source tokens `[start, end)` with `replacement`. An empty span
/// is an insertion, an empty replacement a deletion.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Edit {
    pub start: usize,
    pub end: usize,
    pub replacement: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Step {
    Match,
    Sub,
    Del,
    Ins,
}

/// Minimal edits from a unit-cost Levenshtein alignment. When several
/// alignments are optimal, substitution is preferred to deletion, and
/// deletion to insertion, while tracing back from the end. Runs of
/// adjacent non-matching operations merge into one edit.
pub fn extract_edits<S: AsRef<str>>(source: &[S], hyp: &[S]) -> Vec<Edit> {
    let (n, m) = (source.len(), hyp.len());
    let mut d = vec![vec![0usize; m + 1]; n + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=m {
        d[0][j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let same = source[i - 1].as_ref() == hyp[j - 1].as_ref();
            d[i][j] = (d[i - 1][j - 1] + usize::from(!same)).min(d[i - 1][j] + 1).min(d[i][j - 1] + 1);
        }
    }
    let mut steps = Vec::with_capacity(n.max(m));
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        if i > 0 && j > 0 {
            let same = source[i - 1].as_ref() == hyp[j - 1].as_ref();
            if d[i][j] == d[i - 1][j - 1] + usize::from(!same) {
                steps.push(if same { Step::Match } else { Step::Sub });
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && d[i][j] == d[i - 1][j] + 1 {
            steps.push(Step::Del);
            i -= 1;
        } else {
            steps.push(Step::Ins);
            j -= 1;
        }
    }
    steps.reverse();

    let mut edits = Vec::new();
    let (mut i, mut j) = (0, 0);
    let mut open: Option<Edit> = None;
    for s in steps {
        if s == Step::Match {
            edits.extend(open.take());
            i += 1;
            j += 1;
            continue;
        }
        let e = open.get_or_insert_with(|| Edit {
            start: i,
            end: i,
            replacement: Vec::new(),
        });
        if matches!(s, Step::Sub | Step::Del) {
            i += 1;
            e.end = i;
        }
        if matches!(s, Step::Sub | Step::Ins) {
            e.replacement.push(hyp[j].as_ref().to_string());
            j += 1;
        }
    }
    edits.extend(open);
    edits
}

/// Applies sorted, non-overlapping edits to `source`.
pub fn apply_edits<S: AsRef<str>>(source: &[S], edits: &[Edit]) -> Vec<String> {
    let mut out = Vec::with_capacity(source.len());
    let mut pos = 0;
    for e in edits {
        out.extend(source[pos..e.start].iter().map(|s| s.as_ref().to_string()));
        out.extend(e.replacement.iter().cloned());
        pos = e.end;
    }
    out.extend(source[pos..].iter().map(|s| s.as_ref().to_string()));
    out
}

/// Size of the multiset intersection of two edit lists.
pub fn matching_edits(hyp: &[Edit], reference: &[Edit]) -> usize {
    let mut pool: HashMap<&Edit, usize> = HashMap::new();
    for e in reference {
        *pool.entry(e).or_default() += 1;
    }
    hyp.iter()
        .filter(|e| match pool.get_mut(e) {
            Some(c) if *c > 0 => {
                *c -= 1;
                true
            }
            _ => false,
        })
        .count()
}

/// `(1 + β²)·P·R / (β²·P + R)`, zero when both are zero.
pub fn f_beta(p: f64, r: f64, beta: f64) -> f64 {
    let b2 = beta * beta;
    let den = b2 * p + r;
    if den == 0.0 {
        0.0
    } else {
        (1.0 + b2) * p * r / den
    }
}

/// Precision, recall and F0.5 from edit counts. An empty hypothesis edit
/// set has precision 1, an empty reference set recall 1.
pub fn f_half(matched: usize, hyp: usize, reference: usize) -> (f64, f64, f64) {
    let p = if hyp == 0 { 1.0 } else { matched as f64 / hyp as f64 };
    let r = if reference == 0 { 1.0 } else { matched as f64 / reference as f64 };
    (p, r, f_beta(p, r, 0.5))
}

/// Per-sentence edit counts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SentenceCounts {
    pub matched: usize,
    pub hyp: usize,
    pub reference: usize,
}

pub fn sentence_counts<S: AsRef<str>>(source: &[S], hyp: &[S], reference: &[S]) -> SentenceCounts {
    let h = extract_edits(source, hyp);
    let r = extract_edits(source, reference);
    SentenceCounts {
        matched: matching_edits(&h, &r),
        hyp: h.len(),
        reference: r.len(),
    }
}

/// Corpus-level scores from summed counts.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Report {
    pub precision: f64,
    pub recall: f64,
    pub f05: f64,
    pub sentences: usize,
    pub edits_hyp: usize,
    pub edits_ref: usize,
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "P={:.4} R={:.4} F0.5={:.4} sentences={} edits_hyp={} edits_ref={}",
            self.precision, self.recall, self.f05, self.sentences, self.edits_hyp, self.edits_ref
        )
    }
}

/// Scores tokenized hypothesis and reference sentences against their sources.
pub fn evaluate(sources: &[Vec<String>], hyps: &[Vec<String>], refs: &[Vec<String>]) -> Result<(Report, Vec<SentenceCounts>)> {
    if sources.len() != hyps.len() || sources.len() != refs.len() {
        return Err(Error::Mismatch(format!(
            "{} sources, {} hypotheses, {} references",
            sources.len(),
            hyps.len(),
            refs.len()
        )));
    }
    let per: Vec<SentenceCounts> = sources
        .iter()
        .zip(hyps)
        .zip(refs)
        .map(|((s, h), r)| sentence_counts(s, h, r))
        .collect();
    let (m, h, r) = per
        .iter()
        .fold((0, 0, 0), |(m, h, r), c| (m + c.matched, h + c.hyp, r + c.reference));
    let (precision, recall, f05) = f_half(m, h, r);
    Ok((
        Report {
            precision,
            recall,
            f05,
            sentences: sources.len(),
            edits_hyp: h,
            edits_ref: r,
        },
        per,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn w(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn merges_adjacent_operations() {
        let e = extract_edits(&w("a b c d"), &w("a x y d"));
        assert_eq!(e, vec![Edit { start: 1, end: 3, replacement: w("x y") }]);
        let e = extract_edits(&w("a b"), &w("a b c"));
        assert_eq!(e, vec![Edit { start: 2, end: 2, replacement: w("c") }]);
    }

    #[test]
    fn table_values() {
        assert!((f_beta(0.744, 0.395, 0.5) - 0.632).abs() < 5e-4);
        assert!((f_beta(0.787, 0.417, 0.5) - 0.668).abs() < 5e-4);
    }

    #[test]
    fn conventions() {
        assert_eq!(f_half(0, 0, 0), (1.0, 1.0, 1.0));
        assert_eq!(f_half(0, 0, 3).2, 0.0);
        assert_eq!(f_half(0, 2, 0).2, 0.0);
    }
}
