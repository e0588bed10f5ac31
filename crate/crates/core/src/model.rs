//! A trained model: hyperparameters, tokenizer, relation labels and weights.

use std::path::Path;

use crate::config::{escape_line, unescape_line, ModelConfig};
use crate::deptree::RelationVocab;
use crate::error::{Error, Result};
use crate::nn::init_params;
use crate::numerics::{Checkpoint, Parameters};
use crate::tokenizer::BpeModel;

const MODEL_PREFIX: &str = "model.";

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub cfg: ModelConfig,
    pub bpe: BpeModel,
    pub relations: RelationVocab,
    pub params: Parameters<f32>,
    /// Trained on right-to-left target sequences.
    pub reversed: bool,
}

impl Model {
    /// Fresh randomly initialized model; vocabulary and label counts in
    /// `cfg` are overwritten from `bpe` and `relations`.
    pub fn new(mut cfg: ModelConfig, bpe: BpeModel, relations: RelationVocab, seed: u64) -> Result<Self> {
        cfg.vocab_size = bpe.vocab_size();
        cfg.num_labels = relations.len();
        cfg.validate()?;
        let params = init_params(&cfg, seed)?;
        Ok(Self {
            cfg,
            bpe,
            relations,
            params,
            reversed: false,
        })
    }

    /// Header entries describing everything but the weights.
    pub fn header(&self) -> Vec<(String, String)> {
        let mut out: Vec<(String, String)> = self
            .cfg
            .to_pairs()
            .into_iter()
            .map(|(k, v)| (format!("{MODEL_PREFIX}{k}"), v))
            .collect();
        out.push(("direction".into(), if self.reversed { "r2l" } else { "l2r" }.into()));
        out.push(("relations".into(), escape_line(&self.relations.labels().join("\t"))));
        out.push(("bpe".into(), escape_line(&self.bpe.to_text())));
        out
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.header(),
            tensors: self.params.clone(),
        }
    }

    /// Rebuilds a model from a checkpoint, ignoring entries and tensors
    /// that belong to the training state.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let get = |k: &str| {
            ck.config_value(k)
                .ok_or_else(|| Error::Checkpoint(format!("missing header entry `{k}`")))
        };
        let mut cfg = ModelConfig::default();
        for (k, v) in &ck.config {
            if let Some(key) = k.strip_prefix(MODEL_PREFIX) {
                if !cfg.set(key, v)? {
                    return Err(Error::Checkpoint(format!("unknown model key `{key}`")));
                }
            }
        }
        cfg.validate()?;
        let reversed = match get("direction")? {
            "l2r" => false,
            "r2l" => true,
            d => return Err(Error::Checkpoint(format!("unknown direction `{d}`"))),
        };
        let labels = unescape_line(get("relations")?)?;
        let mut relations = RelationVocab::from_labels(labels.split('\t').filter(|l| !l.is_empty()))?;
        relations.freeze();
        let bpe = BpeModel::from_text(&unescape_line(get("bpe")?)?)?;
        if bpe.vocab_size() != cfg.vocab_size || relations.len() != cfg.num_labels {
            return Err(Error::Checkpoint("vocabulary sizes disagree with the model header".into()));
        }
        let mut params = Parameters::new();
        for (name, shape) in crate::nn::param_shapes(&cfg) {
            let t = ck
                .tensors
                .get(&name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{name}`")))?;
            if t.shape() != shape.as_slice() {
                return Err(Error::Checkpoint(format!("tensor `{name}` has shape {:?}, expected {shape:?}", t.shape())));
            }
            params.insert(name, t.clone())?;
        }
        Ok(Self {
            cfg,
            bpe,
            relations,
            params,
            reversed,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }

    /// Whether two models can be ensembled: same tokenizer and labels.
    pub fn compatible(&self, other: &Model) -> bool {
        self.bpe == other.bpe && self.relations.labels() == other.relations.labels()
    }
}
