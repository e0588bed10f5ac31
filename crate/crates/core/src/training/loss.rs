//! Correction likelihood, tree-correction losses, and their weighted sum.

use super::data::Encoded;
use crate::deptree::overlap_align;
use crate::decoder::decode;
use crate::encoder::{encode, word_pool};
use crate::error::{Error, Result};
use crate::nn::Forward;
use crate::numerics::{Real, Tensor, Var};
use crate::tokenizer::{BpeModel, EOS, PAD};
use crate::treecorr::{select_pairs, treecorr_loss};

/// Scalar loss nodes of one batch.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub total: Var,
    pub gec: Var,
    pub rel: Var,
    pub dist: Var,
    pub anc: Var,
}

fn trim_pad(ids: &[usize]) -> &[usize] {
    let end = ids.iter().rposition(|&t| t != PAD).map_or(0, |k| k + 1);
    &ids[..end]
}

fn argmax(row: &[impl Real]) -> usize {
    let mut best = 0;
    for (k, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = k;
        }
    }
    best
}

/// Teacher-forced argmax words: the prediction at each unmasked position,
/// cut at the first EOS.
fn greedy_words<T: Real>(p: &Tensor<T>, rows: &[usize], reversed: bool, bpe: &BpeModel) -> Vec<String> {
    let mut toks: Vec<usize> = rows
        .iter()
        .map(|&r| argmax(p.row(r)))
        .take_while(|&t| t != EOS)
        .collect();
    if reversed {
        toks.reverse();
    }
    bpe.decode(&toks)
}

/// Sum of `−log p[r, next[r]]` over rows whose next token is not PAD, and
/// the number of such rows. `p` is `[M, V]`, `next` has length `M`.
pub fn token_nll<T: Real>(f: &mut Forward<'_, T>, p: Var, next: &[usize]) -> Result<(Var, usize)> {
    if f.g.shape(p)[0] != next.len() {
        return Err(Error::Mismatch(format!("{} rows for {} next tokens", f.g.shape(p)[0], next.len())));
    }
    let rows: Vec<usize> = (0..next.len()).filter(|&r| next[r] != PAD).collect();
    let gold: Vec<usize> = rows.iter().map(|&r| next[r]).collect();
    let sel = f.g.gather_rows(p, &rows)?;
    let picked = f.g.pick_cols(sel, &gold)?;
    let logp = f.g.log(picked);
    let s = f.g.sum(logp);
    Ok((f.g.scale(s, -T::one()), rows.len()))
}

/// Builds the batch objective: the mean negative log-likelihood of the
/// mixed output distribution over non-PAD target tokens, plus the weighted
/// tree-correction losses averaged over sentences.
pub fn batch_loss<T: Real>(f: &mut Forward<'_, T>, batch: &[&Encoded], bpe: &BpeModel) -> Result<LossVars> {
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let tree_heads = f.cfg.uses_tree_heads();
    let mut nll_sum: Option<Var> = None;
    let mut tokens = 0usize;
    let mut tree_sums: Option<[Var; 3]> = None;
    for ex in batch {
        let src = trim_pad(&ex.src_ids);
        let tgt = &ex.tgt_ids;
        if tgt.len() < 2 {
            return Err(Error::Empty("target sequence"));
        }
        let enc = encode(f, src, &ex.src_spans, ex.src_relations.as_ref())?;
        let prefix = &tgt[..tgt.len() - 1];
        let out = decode(f, prefix, enc.o, src)?;
        let (s, count) = token_nll(f, out.p, &tgt[1..])?;
        tokens += count;
        nll_sum = Some(match nll_sum {
            Some(acc) => f.g.add(acc, s)?,
            None => s,
        });

        if !tree_heads {
            continue;
        }
        let Some(targets) = ex.tgt_targets.as_ref() else { continue };
        if targets.len() != ex.tgt_spans.len() {
            return Err(Error::Mismatch(format!(
                "{} target tree nodes for {} target words",
                targets.len(),
                ex.tgt_spans.len()
            )));
        }
        let rows: Vec<usize> = (0..prefix.len()).filter(|&r| tgt[r + 1] != PAD).collect();
        let hyp = greedy_words(f.g.value(out.p), &rows, ex.reversed, bpe);
        let overlap = overlap_align(&hyp, &ex.tgt_words).target_nodes();
        let (cap, per_node) = (f.cfg.pair_cap, f.cfg.pairs_per_node);
        let pairs = select_pairs(&overlap, cap, per_node, &mut f.rng);
        if pairs.is_empty() {
            continue;
        }
        let words = word_pool(f, out.states, &ex.tgt_spans)?;
        let l = treecorr_loss(f, words, targets, &overlap, &pairs)?;
        tree_sums = Some(match tree_sums {
            Some([a, b, c]) => [f.g.add(a, l.rel)?, f.g.add(b, l.dist)?, f.g.add(c, l.anc)?],
            None => [l.rel, l.dist, l.anc],
        });
    }
    let nll_sum = nll_sum.expect("non-empty batch");
    let gec = f.g.scale(nll_sum, T::of(1.0 / tokens.max(1) as f64));
    let zero = f.constant(Tensor::scalar(T::zero()));
    let Some(sums) = tree_sums else {
        return Ok(LossVars {
            total: gec,
            gec,
            rel: zero,
            dist: zero,
            anc: zero,
        });
    };
    let per_sentence = T::of(1.0 / batch.len() as f64);
    let [rel, dist, anc] = sums.map(|v| f.g.scale(v, per_sentence));
    let mut total = gec;
    for (v, lambda) in [(rel, f.cfg.lambda_rel), (dist, f.cfg.lambda_dist), (anc, f.cfg.lambda_anc)] {
        let w = f.g.scale(v, T::of(lambda));
        total = f.g.add(total, w)?;
    }
    Ok(LossVars {
        total,
        gec,
        rel,
        dist,
        anc,
    })
}
