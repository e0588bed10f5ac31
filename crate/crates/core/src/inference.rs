//! Beam search over any next-token distribution, probability-averaging
//! ensembles, and right-to-left re-ranking of n-best lists.

use std::cmp::Ordering;

use crate::decoder::decode;
use crate::deptree::{neighbor_relations, DepTree};
use crate::encoder::encode;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::nn::Forward;
use crate::numerics::Tensor;
use crate::tokenizer::{BOS, EOS, PAD};

/// Anything that yields a next-token distribution for a prefix.
pub trait StepModel {
    fn vocab_size(&self) -> usize;

    /// Probabilities of the next token after `prefix` (which starts with BOS).
    fn next_probs(&self, prefix: &[usize]) -> Result<Vec<f64>>;

    /// Probability of each of `seq[1..]` given the tokens before it.
    fn token_probs(&self, seq: &[usize]) -> Result<Vec<f64>> {
        (1..seq.len())
            .map(|k| Ok(self.next_probs(&seq[..k])?[seq[k]]))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    /// BOS, generated tokens, and EOS once finished.
    pub tokens: Vec<usize>,
    /// Sum of log-probabilities of the scored tokens.
    pub logprob: f64,
    /// Number of scored tokens. A hypothesis cut off at the length limit
    /// gets an EOS that is neither scored nor counted.
    pub scored: usize,
    pub finished: bool,
}

impl Hypothesis {
    fn start() -> Self {
        Self {
            tokens: vec![BOS],
            logprob: 0.0,
            scored: 0,
            finished: false,
        }
    }

    /// Length-normalized score: mean log-probability per scored token.
    pub fn score(&self) -> f64 {
        if self.scored == 0 {
            0.0
        } else {
            self.logprob / self.scored as f64
        }
    }

    /// Generated tokens without BOS and EOS.
    pub fn output(&self) -> &[usize] {
        let end = if self.tokens.last() == Some(&EOS) && self.tokens.len() > 1 {
            self.tokens.len() - 1
        } else {
            self.tokens.len()
        };
        &self.tokens[1..end]
    }
}

fn by_logprob(a: &Hypothesis, b: &Hypothesis) -> Ordering {
    b.logprob.total_cmp(&a.logprob).then_with(|| a.tokens.cmp(&b.tokens))
}

fn by_score(a: &Hypothesis, b: &Hypothesis) -> Ordering {
    b.score().total_cmp(&a.score()).then_with(|| a.tokens.cmp(&b.tokens))
}

/// True once `beam` hypotheses have finished and none of `alive` can
/// still reach the `beam`-th best normalized score. Future tokens only
/// lower the log-probability, so an alive hypothesis scores at most
/// `logprob / max_len`.
fn settled(finished: &mut [Hypothesis], alive: &[Hypothesis], beam: usize, max_len: usize) -> bool {
    if finished.len() < beam {
        return false;
    }
    finished.sort_by(by_score);
    let bar = finished[beam - 1].score();
    alive.iter().all(|h| h.logprob / max_len as f64 <= bar)
}

/// Beam search generating at most `max_len` tokens. Each step keeps the
/// `beam` best expansions with non-zero probability, ranked by cumulative
/// log-probability; those ending in EOS are set aside. Search stops when
/// no hypothesis is alive or no alive one can still enter the `beam` best
/// finished. Returns up to `beam` finished hypotheses, best normalized
/// score first.
pub fn beam_search(model: &dyn StepModel, beam: usize, max_len: usize) -> Result<Vec<Hypothesis>> {
    if beam == 0 {
        return Err(Error::Config("beam size must be at least 1".into()));
    }
    if max_len == 0 {
        return Err(Error::Config("maximum length must be at least 1".into()));
    }
    let mut alive = vec![Hypothesis::start()];
    let mut finished = Vec::new();
    for _ in 0..max_len {
        let mut cands = Vec::with_capacity(alive.len() * model.vocab_size());
        for h in &alive {
            let probs = model.next_probs(&h.tokens)?;
            for (v, &p) in probs.iter().enumerate() {
                if v == PAD || v == BOS || p <= 0.0 {
                    continue;
                }
                let mut tokens = h.tokens.clone();
                tokens.push(v);
                cands.push(Hypothesis {
                    tokens,
                    logprob: h.logprob + p.ln(),
                    scored: h.scored + 1,
                    finished: v == EOS,
                });
            }
        }
        cands.sort_by(by_logprob);
        cands.truncate(beam);
        alive.clear();
        for c in cands {
            if c.finished {
                finished.push(c);
            } else {
                alive.push(c);
            }
        }
        if alive.is_empty() || settled(&mut finished, &alive, beam, max_len) {
            alive.clear();
            break;
        }
    }
    for mut h in alive {
        h.tokens.push(EOS);
        h.finished = true;
        finished.push(h);
    }
    finished.sort_by(by_score);
    finished.truncate(beam);
    Ok(finished)
}

/// Step-by-step argmax decoding (lowest id on ties).
pub fn greedy(model: &dyn StepModel, max_len: usize) -> Result<Hypothesis> {
    let mut h = Hypothesis::start();
    for _ in 0..max_len {
        let probs = model.next_probs(&h.tokens)?;
        let mut best = None;
        for (v, &p) in probs.iter().enumerate() {
            if v == PAD || v == BOS {
                continue;
            }
            if best.map_or(true, |(_, bp)| p > bp) {
                best = Some((v, p));
            }
        }
        let (v, p) = best.ok_or(Error::Empty("vocabulary"))?;
        h.tokens.push(v);
        h.logprob += p.ln();
        h.scored += 1;
        if v == EOS {
            h.finished = true;
            return Ok(h);
        }
    }
    h.tokens.push(EOS);
    h.finished = true;
    Ok(h)
}

/// Arithmetic mean of member distributions.
pub struct Ensemble<'a> {
    members: Vec<&'a dyn StepModel>,
}

impl<'a> Ensemble<'a> {
    pub fn new(members: Vec<&'a dyn StepModel>) -> Result<Self> {
        let first = members.first().ok_or(Error::Empty("ensemble"))?;
        if members.iter().any(|m| m.vocab_size() != first.vocab_size()) {
            return Err(Error::Mismatch("ensemble members have different vocabularies".into()));
        }
        Ok(Self { members })
    }
}

impl StepModel for Ensemble<'_> {
    fn vocab_size(&self) -> usize {
        self.members[0].vocab_size()
    }

    fn next_probs(&self, prefix: &[usize]) -> Result<Vec<f64>> {
        let mut acc = self.members[0].next_probs(prefix)?;
        for m in &self.members[1..] {
            for (a, p) in acc.iter_mut().zip(m.next_probs(prefix)?) {
                *a += p;
            }
        }
        let k = self.members.len() as f64;
        acc.iter_mut().for_each(|a| *a /= k);
        Ok(acc)
    }

    fn token_probs(&self, seq: &[usize]) -> Result<Vec<f64>> {
        let mut acc = self.members[0].token_probs(seq)?;
        for m in &self.members[1..] {
            for (a, p) in acc.iter_mut().zip(m.token_probs(seq)?) {
                *a += p;
            }
        }
        let k = self.members.len() as f64;
        acc.iter_mut().for_each(|a| *a /= k);
        Ok(acc)
    }
}

/// A trained model bound to one encoded source sentence.
pub struct Translator<'m> {
    model: &'m Model,
    src_ids: Vec<usize>,
    o: Tensor<f32>,
}

impl<'m> Translator<'m> {
    /// Encodes `words`; `tree` is required when the model uses its graph encoder.
    pub fn new(model: &'m Model, words: &[String], tree: Option<&DepTree>) -> Result<Self> {
        if words.is_empty() {
            return Err(Error::Empty("input sentence"));
        }
        let (src_ids, spans) = model.bpe.encode_words(words);
        let relations = match tree {
            Some(t) if model.cfg.uses_graph_encoder() => {
                if t.words().len() != words.len() {
                    return Err(Error::Mismatch(format!("tree has {} words, sentence {}", t.len(), words.len())));
                }
                Some(neighbor_relations(t, &model.relations))
            }
            _ => None,
        };
        let mut f = Forward::eval(&model.params, &model.cfg);
        let enc = encode(&mut f, &src_ids, &spans, relations.as_ref())?;
        let o = f.g.value(enc.o).clone();
        Ok(Self { model, src_ids, o })
    }

    fn probs(&self, seq: &[usize]) -> Result<Tensor<f32>> {
        let mut f = Forward::eval(&self.model.params, &self.model.cfg);
        let o = f.constant(self.o.clone());
        let out = decode(&mut f, seq, o, &self.src_ids)?;
        Ok(f.g.value(out.p).clone())
    }
}

impl StepModel for Translator<'_> {
    fn vocab_size(&self) -> usize {
        self.model.cfg.vocab_size
    }

    fn next_probs(&self, prefix: &[usize]) -> Result<Vec<f64>> {
        let p = self.probs(prefix)?;
        Ok(p.row(prefix.len() - 1).iter().map(|&x| x as f64).collect())
    }

    fn token_probs(&self, seq: &[usize]) -> Result<Vec<f64>> {
        let p = self.probs(&seq[..seq.len() - 1])?;
        Ok((1..seq.len()).map(|k| p.get(k - 1, seq[k]) as f64).collect())
    }
}

/// Mean log-probability of `BOS inner EOS` under `model`.
pub fn sequence_score(model: &dyn StepModel, inner: &[usize]) -> Result<f64> {
    let mut seq = Vec::with_capacity(inner.len() + 2);
    seq.push(BOS);
    seq.extend_from_slice(inner);
    seq.push(EOS);
    let probs = model.token_probs(&seq)?;
    Ok(probs.iter().map(|p| p.ln()).sum::<f64>() / probs.len() as f64)
}

/// An n-best entry: sub-word ids (no BOS/EOS) and its score.
#[derive(Clone, Debug, PartialEq)]
pub struct Candidate {
    pub tokens: Vec<usize>,
    pub score: f64,
}

impl From<&Hypothesis> for Candidate {
    fn from(h: &Hypothesis) -> Self {
        Self {
            tokens: h.output().to_vec(),
            score: h.score(),
        }
    }
}

/// Re-scores each candidate as `(1 − w)·score + w·r2l`, where `r2l` is the
/// mean log-probability of the reversed candidate under `r2l_model`, and
/// re-sorts best first (stable on ties).
pub fn r2l_rerank(candidates: &[Candidate], r2l_model: &dyn StepModel, weight: f64) -> Result<Vec<Candidate>> {
    if candidates.is_empty() {
        return Err(Error::Empty("candidate list"));
    }
    let mut out = Vec::with_capacity(candidates.len());
    for c in candidates {
        let score = if weight == 0.0 {
            c.score
        } else {
            let rev: Vec<usize> = c.tokens.iter().rev().copied().collect();
            (1.0 - weight) * c.score + weight * sequence_score(r2l_model, &rev)?
        };
        out.push(Candidate {
            tokens: c.tokens.clone(),
            score,
        });
    }
    out.sort_by(|a, b| b.score.total_cmp(&a.score));
    Ok(out)
}

/// One line of an n-best file.
pub fn nbest_line(sentence: usize, rank: usize, score: f64, text: &str) -> String {
    format!("{sentence}\t{rank}\t{score:.6}\t{text}")
}
