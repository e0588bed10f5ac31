#![allow(dead_code)]

use rand::Rng;
use sggec::numerics::{seeded_rng, Graph, Tensor, Var};
use sggec::Result;

/// Denominator floor for relative error, so that near-zero gradients are
/// compared on an absolute scale.
pub const REL_FLOOR: f64 = 1e-2;

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

pub fn random_tensor(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = seeded_rng(seed);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Compares reverse-mode gradients of a scalar function of `inputs` against
/// central differences computed in f64. Returns the worst relative error.
pub fn check_grad<F>(inputs: &[Tensor<f64>], h: f64, build: F) -> f64
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let eval = |ins: &[Tensor<f64>]| -> f64 {
        let mut g = Graph::new();
        let vars: Vec<Var> = ins.iter().map(|t| g.leaf(t.clone())).collect();
        let out = build(&mut g, &vars).unwrap();
        g.item(out)
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let out = build(&mut g, &vars).unwrap();
    g.backward(out).unwrap();
    let mut worst: f64 = 0.0;
    for (k, t) in inputs.iter().enumerate() {
        let analytic = g.grad(vars[k]).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.len()]);
        for e in 0..t.len() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[e] += h;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[e] -= h;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
            let err = rel_err(analytic[e], numeric);
            worst = worst.max(err);
        }
    }
    worst
}

use sggec::deptree::{DepTree, RelationVocab};

/// Uniformly attached random tree: word `k` hangs off an earlier word in a
/// random permutation, so heads can point left or right.
pub fn random_tree(n: usize, num_labels: usize, seed: u64) -> DepTree {
    use rand::seq::SliceRandom;
    let mut rng = seeded_rng(seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut heads = vec![0; n];
    let mut labels = vec![0; n];
    for k in 1..n {
        let parent = order[rng.gen_range(0..k)];
        heads[order[k]] = parent + 1;
        labels[order[k]] = rng.gen_range(1..num_labels);
    }
    let words = (0..n).map(|i| format!("w{}", rng.gen_range(0..5) + i % 3)).collect();
    DepTree::new(words, heads, labels, num_labels).unwrap()
}

pub fn label_vocab(n: usize) -> RelationVocab {
    RelationVocab::from_labels((0..n).map(|i| if i == 0 { "root".to_string() } else { format!("rel{i}") })).unwrap()
}

use sggec::config::ModelConfig;
use sggec::model::Model;
use sggec::nn::{Forward, Mode};
use sggec::numerics::Parameters;
use sggec::training::{encode_corpus, relation_vocab, synth_corpus, train_tokenizer, Corruption, Encoded, Example};

/// Smallest architecture exercising every component.
pub fn tiny_cfg() -> ModelConfig {
    ModelConfig {
        d_model: 8,
        d_ff: 16,
        heads: 2,
        graph_heads: 2,
        enc_layers: 1,
        graph_layers: 1,
        dec_layers: 1,
        dropout: 0.0,
        ..ModelConfig::toy()
    }
}

/// Synthetic examples, a tokenizer and a randomly initialized model.
pub fn tiny_setup(cfg: ModelConfig, sentences: usize, seed: u64) -> (Model, Vec<Example>, Vec<Encoded>) {
    let mut rng = seeded_rng(seed);
    let examples: Vec<Example> = synth_corpus(&Corruption::DEFAULT, &mut rng, sentences)
        .unwrap()
        .into_iter()
        .map(Example::from)
        .collect();
    let rel = relation_vocab();
    let bpe = train_tokenizer(&examples, 90).unwrap();
    let model = Model::new(cfg, bpe.clone(), rel.clone(), seed).unwrap();
    let max_d = model.cfg.max_distance;
    let enc = encode_corpus(&examples, &bpe, &rel, max_d, false).unwrap();
    (model, examples, enc)
}

/// Gradient of a scalar built from model parameters, checked by central
/// differences at `samples` (parameter name, flat index) positions.
pub fn check_param_grads<F>(params: &Parameters<f64>, cfg: &ModelConfig, samples: &[(String, usize)], h: f64, build: F) -> f64
where
    F: Fn(&mut Forward<'_, f64>) -> Result<Var>,
{
    let run = |p: &Parameters<f64>| -> f64 {
        let mut f = Forward::new(p, cfg, Mode::Train, seeded_rng(99));
        let out = build(&mut f).unwrap();
        f.g.item(out)
    };
    let mut f = Forward::new(params, cfg, Mode::Train, seeded_rng(99));
    let out = build(&mut f).unwrap();
    f.g.backward(out).unwrap();
    let grads = f.g.param_grads(params);
    let mut worst: f64 = 0.0;
    for (name, k) in samples {
        let mut plus = params.clone();
        plus.get_mut(name).unwrap().data_mut()[*k] += h;
        let mut minus = params.clone();
        minus.get_mut(name).unwrap().data_mut()[*k] -= h;
        let numeric = (run(&plus) - run(&minus)) / (2.0 * h);
        let err = rel_err(grads[name][*k], numeric);
        if err > 1e-3 {
            eprintln!("{name}[{k}]: analytic {} numeric {numeric}", grads[name][*k]);
        }
        worst = worst.max(err);
    }
    worst
}

/// `count` random (name, index) positions among parameters whose names
/// start with one of `prefixes` (all parameters when empty).
pub fn sample_params(params: &Parameters<f64>, prefixes: &[&str], count: usize, seed: u64) -> Vec<(String, usize)> {
    let mut rng = seeded_rng(seed);
    let pool: Vec<(String, usize)> = params
        .iter()
        .filter(|(n, _)| prefixes.is_empty() || prefixes.iter().any(|p| n.starts_with(p)))
        .flat_map(|(n, t)| (0..t.len()).map(move |k| (n.clone(), k)))
        .collect();
    (0..count).map(|_| pool[rng.gen_range(0..pool.len())].clone()).collect()
}
