//! Objectives, the staged training loop, corpora and the synthetic data
//! generator.

mod data;
mod loss;
mod synth;
mod trainer;

pub use data::{
    corpus_paths, encode_example, parse_tsv, read_corpus, reverse_target, split_words, write_corpus, Encoded, Example,
};
pub use loss::{batch_loss, token_nll, LossVars};
pub use synth::{relation_vocab, synth_corpus, Corruption, SynthPair, LABELS};
pub use trainer::{
    epoch_batches, evaluate_batch, load_training, make_batches, run_stages, save_training, select, train_step,
    training_checkpoint, LogRecord, Selector, Silent, Stage, StagePlan, StepLoss, TrainObserver, TrainOptions,
    TrainState,
};

use crate::deptree::RelationVocab;
use crate::error::Result;
use crate::tokenizer::BpeModel;

/// Encodes every example; trees are kept when present.
pub fn encode_corpus(
    examples: &[Example],
    bpe: &BpeModel,
    relations: &RelationVocab,
    max_distance: usize,
    reversed: bool,
) -> Result<Vec<Encoded>> {
    examples
        .iter()
        .map(|e| encode_example(e, bpe, relations, max_distance, reversed))
        .collect()
}

/// Learns a shared source/target tokenizer from both sides of `examples`.
pub fn train_tokenizer(examples: &[Example], vocab_size: usize) -> Result<BpeModel> {
    let words: Vec<&str> = examples
        .iter()
        .flat_map(|e| e.source.iter().chain(&e.target))
        .map(String::as_str)
        .collect();
    BpeModel::train(&words, vocab_size)
}
