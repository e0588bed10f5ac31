//! Multi-stage training loop with resumable state.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;

use super::data::Encoded;
use super::loss::batch_loss;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::nn::{Forward, Mode};
use crate::numerics::{stream_rng, AdamConfig, AdamState, Checkpoint, Parameters, Tensor};

const BATCH_SALT: u64 = 0x6261_7463_6865_7321;
const STEP_SALT: u64 = 0x7374_6570_7321_0001;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Selector {
    All,
    /// Only pairs whose source differs from the target.
    Errors,
}

impl Selector {
    pub fn name(self) -> &'static str {
        match self {
            Self::All => "all",
            Self::Errors => "errors",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Stage {
    pub dataset: String,
    pub selector: Selector,
    pub epochs: usize,
    pub lr: f64,
}

impl Stage {
    /// Parses `dataset:selector:epochs:lr`.
    pub fn parse(spec: &str) -> Result<Self> {
        let parts: Vec<&str> = spec.split(':').collect();
        let [dataset, selector, epochs, lr] = parts.as_slice() else {
            return Err(Error::Config(format!("stage `{spec}` is not dataset:selector:epochs:lr")));
        };
        let selector = match *selector {
            "all" => Selector::All,
            "errors" => Selector::Errors,
            s => return Err(Error::Config(format!("unknown selector `{s}`"))),
        };
        let epochs = epochs
            .parse()
            .map_err(|_| Error::Config(format!("bad epoch count `{epochs}`")))?;
        let lr: f64 = lr.parse().map_err(|_| Error::Config(format!("bad learning rate `{lr}`")))?;
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {lr}")));
        }
        Ok(Self {
            dataset: dataset.to_string(),
            selector,
            epochs,
            lr,
        })
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}:{}", self.dataset, self.selector.name(), self.epochs, self.lr)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StagePlan {
    pub stages: Vec<Stage>,
}

impl StagePlan {
    pub fn new(stages: Vec<Stage>) -> Result<Self> {
        if stages.is_empty() {
            return Err(Error::Empty("stage plan"));
        }
        Ok(Self { stages })
    }

    pub fn parse(specs: &[impl AsRef<str>]) -> Result<Self> {
        Self::new(specs.iter().map(|s| Stage::parse(s.as_ref())).collect::<Result<_>>()?)
    }
}

/// Indices of `data` kept by `selector`. Encodings are compared after
/// undoing any target reversal.
pub fn select(data: &[Encoded], selector: Selector) -> Vec<usize> {
    (0..data.len())
        .filter(|&k| match selector {
            Selector::All => true,
            Selector::Errors => {
                let e = &data[k];
                let mut tgt = e.tgt_ids.clone();
                if e.reversed {
                    let n = tgt.len();
                    tgt[1..n - 1].reverse();
                }
                e.src_ids != tgt
            }
        })
        .collect()
}

/// Shuffles, sorts by length, packs batches of at most `batch_tokens`
/// source plus target tokens (a longer single pair forms its own batch),
/// then shuffles batch order.
pub fn make_batches<R: rand::Rng>(data: &[Encoded], idx: &[usize], batch_tokens: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let size = |k: usize| data[k].src_ids.len() + data[k].tgt_ids.len();
    let mut order = idx.to_vec();
    order.shuffle(rng);
    order.sort_by_key(|&k| size(k));
    let mut batches = Vec::new();
    let mut cur = Vec::new();
    let mut tokens = 0;
    for k in order {
        if !cur.is_empty() && tokens + size(k) > batch_tokens {
            batches.push(std::mem::take(&mut cur));
            tokens = 0;
        }
        tokens += size(k);
        cur.push(k);
    }
    if !cur.is_empty() {
        batches.push(cur);
    }
    batches.shuffle(rng);
    batches
}

/// Optimizer state and position in the stage plan.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub seed: u64,
    pub adam: AdamState<f32>,
    /// Optimizer steps taken so far.
    pub step: u64,
    /// Next stage, epoch within it, and batch within that epoch.
    pub stage: usize,
    pub epoch: usize,
    pub batch: usize,
}

impl TrainState {
    pub fn new(seed: u64, adam: AdamConfig) -> Self {
        Self {
            seed,
            adam: AdamState::new(adam),
            step: 0,
            stage: 0,
            epoch: 0,
            batch: 0,
        }
    }

    fn header(&self) -> Vec<(String, String)> {
        let c = self.adam.config;
        [
            ("train.seed", self.seed.to_string()),
            ("train.step", self.step.to_string()),
            ("train.stage", self.stage.to_string()),
            ("train.epoch", self.epoch.to_string()),
            ("train.batch", self.batch.to_string()),
            ("train.adam_step", self.adam.step.to_string()),
            ("train.lr", c.lr.to_string()),
            ("train.beta1", c.beta1.to_string()),
            ("train.beta2", c.beta2.to_string()),
            ("train.eps", c.eps.to_string()),
            ("train.weight_decay", c.weight_decay.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    /// Training state stored in a checkpoint, if any.
    pub fn from_checkpoint(ck: &Checkpoint, params: &Parameters<f32>) -> Result<Option<Self>> {
        if ck.config_value("train.step").is_none() {
            return Ok(None);
        }
        fn num<V: std::str::FromStr>(ck: &Checkpoint, k: &str) -> Result<V> {
            let v = ck
                .config_value(k)
                .ok_or_else(|| Error::Checkpoint(format!("missing header entry `{k}`")))?;
            v.parse().map_err(|_| Error::Checkpoint(format!("bad value `{v}` for `{k}`")))
        }
        let config = AdamConfig {
            lr: num(ck, "train.lr")?,
            beta1: num(ck, "train.beta1")?,
            beta2: num(ck, "train.beta2")?,
            eps: num(ck, "train.eps")?,
            weight_decay: num(ck, "train.weight_decay")?,
        };
        let mut adam = AdamState::new(config);
        adam.step = num(ck, "train.adam_step")?;
        if adam.step > 0 {
            for name in params.names() {
                for (prefix, map) in [("adam.first.", &mut adam.first), ("adam.second.", &mut adam.second)] {
                    let t = ck
                        .tensors
                        .get(&format!("{prefix}{name}"))
                        .ok_or_else(|| Error::Checkpoint(format!("missing optimizer moment for `{name}`")))?;
                    map.insert(name.to_string(), t.data().to_vec());
                }
            }
        }
        Ok(Some(Self {
            seed: num(ck, "train.seed")?,
            adam,
            step: num(ck, "train.step")?,
            stage: num(ck, "train.stage")?,
            epoch: num(ck, "train.epoch")?,
            batch: num(ck, "train.batch")?,
        }))
    }
}

/// Checkpoint holding the model and, optionally, everything needed to
/// resume training exactly.
pub fn training_checkpoint(model: &Model, state: Option<&TrainState>) -> Result<Checkpoint> {
    let mut ck = model.to_checkpoint();
    if let Some(s) = state {
        ck.config.extend(s.header());
        for (prefix, map) in [("adam.first.", &s.adam.first), ("adam.second.", &s.adam.second)] {
            for (name, data) in map {
                let shape = model
                    .params
                    .get(name)
                    .ok_or_else(|| Error::UnknownParam(name.clone()))?
                    .shape()
                    .to_vec();
                ck.tensors.insert(format!("{prefix}{name}"), Tensor::new(shape, data.clone())?)?;
            }
        }
    }
    Ok(ck)
}

pub fn save_training(path: &Path, model: &Model, state: &TrainState) -> Result<()> {
    training_checkpoint(model, Some(state))?.save(path)
}

pub fn load_training(path: &Path) -> Result<(Model, Option<TrainState>)> {
    let ck = Checkpoint::load(path)?;
    let model = Model::from_checkpoint(&ck)?;
    let state = TrainState::from_checkpoint(&ck, &model.params)?;
    Ok((model, state))
}

/// One optimizer step's loss values.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLoss {
    pub total: f64,
    pub gec: f64,
    pub rel: f64,
    pub dist: f64,
    pub anc: f64,
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq)]
pub struct LogRecord {
    pub step: u64,
    pub stage: usize,
    pub epoch: usize,
    pub loss: StepLoss,
}

impl fmt::Display for LogRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let l = &self.loss;
        write!(
            f,
            "step={} stage={} epoch={} L={:.6} L_g={:.6} L_r={:.6} L_d={:.6} L_a={:.6}",
            self.step, self.stage, self.epoch, l.total, l.gec, l.rel, l.dist, l.anc
        )
    }
}

/// Hooks called by [`run_stages`].
pub trait TrainObserver {
    fn on_step(&mut self, _record: &LogRecord) -> Result<()> {
        Ok(())
    }

    /// After each completed epoch, with the mean step loss of that epoch.
    fn on_epoch_end(&mut self, _model: &Model, _state: &TrainState, _mean_loss: f64) -> Result<()> {
        Ok(())
    }
}

/// Observer that ignores everything.
pub struct Silent;

impl TrainObserver for Silent {}

#[derive(Clone, Copy, Debug)]
pub struct TrainOptions {
    pub batch_tokens: usize,
    /// Stop once this many optimizer steps have been taken in total.
    pub max_steps: Option<u64>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            batch_tokens: 1000,
            max_steps: None,
        }
    }
}

/// Loss values of `batch` under the current parameters, without updating.
pub fn evaluate_batch(model: &Model, batch: &[&Encoded], seed: u64, step: u64) -> Result<StepLoss> {
    let mut f = Forward::new(&model.params, &model.cfg, Mode::Train, stream_rng(seed ^ STEP_SALT, step));
    let l = batch_loss(&mut f, batch, &model.bpe)?;
    Ok(StepLoss {
        total: f.g.item(l.total) as f64,
        gec: f.g.item(l.gec) as f64,
        rel: f.g.item(l.rel) as f64,
        dist: f.g.item(l.dist) as f64,
        anc: f.g.item(l.anc) as f64,
    })
}

/// Forward, backward and one Adam update on `batch`.
pub fn train_step(model: &mut Model, state: &mut TrainState, batch: &[&Encoded]) -> Result<StepLoss> {
    let rng = stream_rng(state.seed ^ STEP_SALT, state.step);
    let (loss, grads) = {
        let mut f = Forward::new(&model.params, &model.cfg, Mode::Train, rng);
        let l = batch_loss(&mut f, batch, &model.bpe)?;
        let loss = StepLoss {
            total: f.g.item(l.total) as f64,
            gec: f.g.item(l.gec) as f64,
            rel: f.g.item(l.rel) as f64,
            dist: f.g.item(l.dist) as f64,
            anc: f.g.item(l.anc) as f64,
        };
        if !loss.total.is_finite() {
            return Err(Error::Divergence {
                step: state.step + 1,
                loss: loss.total,
            });
        }
        f.g.backward(l.total)?;
        (loss, f.g.param_grads(&model.params))
    };
    state.adam.step(&mut model.params, &grads)?;
    state.step += 1;
    Ok(loss)
}

/// Batches of epoch `epoch` of stage `stage`; a pure function of the seed.
pub fn epoch_batches(data: &[Encoded], selector: Selector, batch_tokens: usize, seed: u64, stage: usize, epoch: usize) -> Result<Vec<Vec<usize>>> {
    let idx = select(data, selector);
    if idx.is_empty() {
        return Err(Error::Empty("stage dataset after selection"));
    }
    let mut rng = stream_rng(seed ^ BATCH_SALT, ((stage as u64) << 32) | epoch as u64);
    Ok(make_batches(data, &idx, batch_tokens, &mut rng))
}

/// Runs (or resumes) the plan from the position recorded in `state`.
/// Returns `true` when the plan completed, `false` when stopped by
/// `max_steps`.
pub fn run_stages(
    model: &mut Model,
    state: &mut TrainState,
    plan: &StagePlan,
    datasets: &BTreeMap<String, Vec<Encoded>>,
    opts: &TrainOptions,
    obs: &mut dyn TrainObserver,
) -> Result<bool> {
    for stage in &plan.stages {
        let data = datasets
            .get(&stage.dataset)
            .ok_or_else(|| Error::Config(format!("unknown dataset `{}`", stage.dataset)))?;
        if select(data, stage.selector).is_empty() {
            return Err(Error::Empty("stage dataset after selection"));
        }
    }
    while state.stage < plan.stages.len() {
        let s = state.stage;
        let stage = &plan.stages[s];
        let data = &datasets[&stage.dataset];
        state.adam.config.lr = stage.lr;
        while state.epoch < stage.epochs {
            let batches = epoch_batches(data, stage.selector, opts.batch_tokens, state.seed, s, state.epoch)?;
            let mut sum = 0.0;
            let mut n = 0usize;
            while state.batch < batches.len() {
                if opts.max_steps.is_some_and(|m| state.step >= m) {
                    return Ok(false);
                }
                let batch: Vec<&Encoded> = batches[state.batch].iter().map(|&k| &data[k]).collect();
                let loss = train_step(model, state, &batch)?;
                state.batch += 1;
                sum += loss.total;
                n += 1;
                obs.on_step(&LogRecord {
                    step: state.step,
                    stage: s,
                    epoch: state.epoch,
                    loss,
                })?;
            }
            state.epoch += 1;
            state.batch = 0;
            obs.on_epoch_end(model, state, if n > 0 { sum / n as f64 } else { f64::NAN })?;
        }
        state.stage += 1;
        state.epoch = 0;
    }
    Ok(true)
}
