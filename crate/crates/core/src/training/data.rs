//! Sentence-pair corpora on disk and their encoded, model-ready form.

use std::path::{Path, PathBuf};

use super::synth::SynthPair;
use crate::deptree::{
    neighbor_relations, pair_targets, parse_conllu, serialize_conllu, DepTree, NeighborRelations, PairTargets,
    RelationVocab,
};
use crate::error::{Error, Result};
use crate::tokenizer::{BpeModel, WordSpans, BOS, EOS};

/// One source/target pair with optional gold trees.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Example {
    pub source: Vec<String>,
    pub target: Vec<String>,
    pub source_tree: Option<DepTree>,
    pub target_tree: Option<DepTree>,
}

impl Example {
    pub fn new(source: Vec<String>, target: Vec<String>) -> Self {
        Self {
            source,
            target,
            source_tree: None,
            target_tree: None,
        }
    }

    pub fn has_error(&self) -> bool {
        self.source != self.target
    }
}

impl From<SynthPair> for Example {
    fn from(p: SynthPair) -> Self {
        Self {
            source: p.source.words().to_vec(),
            target: p.target.words().to_vec(),
            source_tree: Some(p.source),
            target_tree: Some(p.target),
        }
    }
}

/// `prefix.tsv`, `prefix.src.conllu`, `prefix.tgt.conllu`.
pub fn corpus_paths(prefix: &Path) -> (PathBuf, PathBuf, PathBuf) {
    let p = prefix.display();
    (
        PathBuf::from(format!("{p}.tsv")),
        PathBuf::from(format!("{p}.src.conllu")),
        PathBuf::from(format!("{p}.tgt.conllu")),
    )
}

pub fn split_words(line: &str) -> Vec<String> {
    line.split_whitespace().map(String::from).collect()
}

/// Writes the TSV and, when every example carries both trees, the sidecars.
pub fn write_corpus(prefix: &Path, examples: &[Example], vocab: &RelationVocab) -> Result<()> {
    let (tsv, src, tgt) = corpus_paths(prefix);
    let mut text = String::new();
    for ex in examples {
        text.push_str(&ex.source.join(" "));
        text.push('\t');
        text.push_str(&ex.target.join(" "));
        text.push('\n');
    }
    std::fs::write(tsv, text)?;
    let trees: Option<(Vec<DepTree>, Vec<DepTree>)> = examples
        .iter()
        .map(|e| Some((e.source_tree.clone()?, e.target_tree.clone()?)))
        .collect::<Option<Vec<_>>>()
        .map(|v| v.into_iter().unzip());
    if let Some((s, t)) = trees {
        std::fs::write(src, serialize_conllu(&s, vocab))?;
        std::fs::write(tgt, serialize_conllu(&t, vocab))?;
    }
    Ok(())
}

pub fn parse_tsv(text: &str) -> Result<Vec<Example>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(k, l)| {
            let (s, t) = l.split_once('\t').ok_or_else(|| Error::Parse {
                line: k + 1,
                msg: "expected source<TAB>target".into(),
            })?;
            Ok(Example::new(split_words(s), split_words(t)))
        })
        .collect()
}

fn attach_trees(examples: &mut [Example], trees: Vec<DepTree>, source_side: bool, path: &Path) -> Result<()> {
    if trees.len() != examples.len() {
        return Err(Error::Mismatch(format!(
            "{} has {} sentences, corpus has {}",
            path.display(),
            trees.len(),
            examples.len()
        )));
    }
    for (k, (ex, tree)) in examples.iter_mut().zip(trees).enumerate() {
        let words = if source_side { &ex.source } else { &ex.target };
        if tree.words() != words.as_slice() {
            return Err(Error::Mismatch(format!(
                "sentence {} of {} does not match the corpus words",
                k + 1,
                path.display()
            )));
        }
        if source_side {
            ex.source_tree = Some(tree);
        } else {
            ex.target_tree = Some(tree);
        }
    }
    Ok(())
}

/// Reads `prefix.tsv` plus whichever sidecars exist; `require_trees`
/// turns a missing sidecar into an error.
pub fn read_corpus(prefix: &Path, vocab: &mut RelationVocab, require_trees: bool) -> Result<Vec<Example>> {
    let (tsv, src, tgt) = corpus_paths(prefix);
    let mut examples = parse_tsv(&std::fs::read_to_string(&tsv)?)?;
    for (path, source_side) in [(src, true), (tgt, false)] {
        if path.exists() {
            let trees = parse_conllu(&std::fs::read_to_string(&path)?, vocab)?;
            attach_trees(&mut examples, trees, source_side, &path)?;
        } else if require_trees {
            return Err(Error::Config(format!("missing tree file {}", path.display())));
        }
    }
    Ok(examples)
}

/// Token ids, spans and tree structures of one pair.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoded {
    pub src_ids: Vec<usize>,
    pub src_spans: WordSpans,
    pub src_relations: Option<NeighborRelations>,
    pub tgt_ids: Vec<usize>,
    pub tgt_spans: WordSpans,
    pub tgt_words: Vec<String>,
    pub tgt_targets: Option<PairTargets>,
    /// Target sub-words are stored right to left.
    pub reversed: bool,
}

/// Reverses the sub-words between BOS and EOS, moving each word's span.
pub fn reverse_target(ids: &[usize], spans: &WordSpans) -> (Vec<usize>, WordSpans) {
    let k = ids.len() - 2;
    let mut out = Vec::with_capacity(ids.len());
    out.push(ids[0]);
    out.extend(ids[1..=k].iter().rev());
    out.push(ids[k + 1]);
    let spans = spans.iter().map(|&(s, e)| (k + 2 - e, k + 2 - s)).collect();
    (out, spans)
}

pub fn encode_example(
    ex: &Example,
    bpe: &BpeModel,
    vocab: &RelationVocab,
    max_distance: usize,
    reversed: bool,
) -> Result<Encoded> {
    if ex.source.is_empty() || ex.target.is_empty() {
        return Err(Error::Empty("sentence"));
    }
    let (src_ids, src_spans) = bpe.encode_words(&ex.source);
    let (mut tgt_ids, mut tgt_spans) = bpe.encode_words(&ex.target);
    if reversed {
        (tgt_ids, tgt_spans) = reverse_target(&tgt_ids, &tgt_spans);
    }
    debug_assert!(tgt_ids[0] == BOS && *tgt_ids.last().unwrap() == EOS);
    Ok(Encoded {
        src_ids,
        src_spans,
        src_relations: ex.source_tree.as_ref().map(|t| neighbor_relations(t, vocab)),
        tgt_ids,
        tgt_spans,
        tgt_words: ex.target.clone(),
        tgt_targets: ex.target_tree.as_ref().map(|t| pair_targets(t, vocab, max_distance)),
        reversed,
    })
}
