mod common;

use common::*;
use proptest::prelude::*;
use sggec::config::ModelConfig;
use sggec::deptree::{neighbor_relations, NeighborRelations};
use sggec::encoder::{dual_aggregate, encode, graph_attention_layer, relation_representations, sentence_encode, word_pool};
use sggec::nn::{init_params, Forward};
use sggec::numerics::{Parameters, Tensor, Var};
use sggec::tokenizer::{WordSpans, BOS, EOS};

const LABELS: usize = 5;

fn cfg() -> ModelConfig {
    ModelConfig {
        vocab_size: 20,
        num_labels: LABELS,
        ..tiny_cfg()
    }
}

fn params(cfg: &ModelConfig, seed: u64) -> Parameters<f64> {
    init_params::<f64>(cfg, seed).unwrap()
}

fn relations(n: usize, seed: u64) -> NeighborRelations {
    neighbor_relations(&random_tree(n, LABELS, seed), &label_vocab(LABELS))
}

/// Fixed random projection to a scalar, so that gradients are not
/// flattened by layer normalization.
fn probe(f: &mut Forward<'_, f64>, x: Var, seed: u64) -> sggec::Result<Var> {
    let shape = f.g.shape(x).to_vec();
    let w = f.constant(random_tensor(&shape, seed));
    let y = f.g.mul(x, w)?;
    Ok(f.g.sum(y))
}

fn unit_spans(n: usize) -> WordSpans {
    (1..=n).map(|i| (i, i + 1)).collect()
}

#[test]
fn single_token_is_finite() {
    let cfg = cfg();
    let p = params(&cfg, 1);
    let mut f = Forward::eval(&p, &cfg);
    let h = sentence_encode(&mut f, &[5]).unwrap();
    assert_eq!(f.g.shape(h), &[1, 8]);
    assert!(f.g.value(h).is_finite());
    assert!(sentence_encode(&mut f, &[]).is_err());
}

#[test]
fn positions_change_outputs() {
    let cfg = cfg();
    let p = params(&cfg, 2);
    let run = |ids: &[usize]| {
        let mut f = Forward::eval(&p, &cfg);
        let h = sentence_encode(&mut f, ids).unwrap();
        f.g.value(h).clone()
    };
    let a = run(&[BOS, 7, 8, 9, EOS]);
    let b = run(&[BOS, 7, 9, 8, EOS]);
    assert_ne!(a.row(1), b.row(1));
}

#[test]
fn sentence_encoder_gradients() {
    let cfg = ModelConfig { enc_layers: 2, ..cfg() };
    let p = params(&cfg, 3);
    let samples = sample_params(&p, &["embed.", "encoder."], 60, 4);
    let worst = check_param_grads(&p, &cfg, &samples, 1e-5, |f| {
        let h = sentence_encode(f, &[BOS, 4, 5, 6, 4, EOS])?;
        probe(f, h, 5)
    });
    assert!(worst <= 1e-3, "worst relative error {worst}");
}

#[test]
fn word_pool_cases() {
    let p = Parameters::<f64>::new();
    let cfg = cfg();
    let mut f = Forward::eval(&p, &cfg);
    let h = random_tensor(&[5, 3], 6);
    let hv = f.constant(h.clone());
    let pooled = word_pool(&mut f, hv, &unit_spans(3)).unwrap();
    for w in 0..3 {
        assert_eq!(f.g.value(pooled).row(w), h.row(w + 1));
    }

    let mut rows = vec![vec![0.0; 3]; 4];
    rows[1] = vec![0.25, -1.5, 3.0];
    rows[2] = rows[1].clone();
    let hv = f.constant(Tensor::from_rows(&rows).unwrap());
    let pooled = word_pool(&mut f, hv, &vec![(1, 3)]).unwrap();
    assert_eq!(f.g.value(pooled).row(0), rows[1].as_slice());
}

#[test]
fn word_pool_matches_wide_mean() {
    let p = Parameters::<f32>::new();
    let cfg = cfg();
    let h = random_tensor(&[9, 6], 7);
    let spans: WordSpans = vec![(1, 2), (2, 5), (5, 6), (6, 8)];
    let mut f = Forward::eval(&p, &cfg);
    let hv = f.constant(h.cast::<f32>());
    let pooled = word_pool(&mut f, hv, &spans).unwrap();
    for (w, &(s, e)) in spans.iter().enumerate() {
        for c in 0..6 {
            let mean = (s..e).map(|r| h.get(r, c)).sum::<f64>() / (e - s) as f64;
            assert!((f.g.value(pooled).get(w, c) as f64 - mean).abs() < 1e-6);
        }
    }
}

fn set_param(p: &mut Parameters<f64>, name: &str, value: f64) {
    p.get_mut(name).unwrap().data_mut().iter_mut().for_each(|x| *x = value);
}

#[test]
fn relation_rows_with_fixed_weights() {
    let cfg = cfg();
    let nr = relations(6, 8);
    let hw = random_tensor(&[6, 8], 9);
    let mut p = params(&cfg, 10);
    for dir in ["rel_out", "rel_in"] {
        set_param(&mut p, &format!("graph.layer0.{dir}.w"), 0.0);
        set_param(&mut p, &format!("graph.layer0.{dir}.b"), 0.0);
    }
    let mut f = Forward::eval(&p, &cfg);
    let x = f.constant(hw.clone());
    let rel = relation_representations(&mut f, x, &nr, 0).unwrap();
    assert_eq!(rel.owners.len(), nr.total());
    assert!(f.g.value(rel.u).data().iter().all(|&v| v == 0.0));

    set_param(&mut p, "graph.layer0.rel_out.b", 1.0);
    let mut f = Forward::eval(&p, &cfg);
    let x = f.constant(hw);
    let rel = relation_representations(&mut f, x, &nr, 0).unwrap();
    let outgoing = nr.iter().flatten().filter(|nb| nb.direction == sggec::deptree::Direction::Out).count();
    let u = f.g.value(rel.u);
    for e in 0..outgoing {
        assert!(u.row(e).iter().all(|&v| v == 1.0));
    }
    for e in outgoing..nr.total() {
        assert!(u.row(e).iter().all(|&v| v == 0.0));
    }
}

#[test]
fn relation_representation_gradients() {
    let cfg = cfg();
    let p = params(&cfg, 11);
    let nr = relations(5, 12);
    let hw = random_tensor(&[5, 8], 13);
    let samples = sample_params(&p, &["graph.relations", "graph.layer0.rel_"], 60, 14);
    let worst = check_param_grads(&p, &cfg, &samples, 1e-5, |f| {
        let x = f.constant(hw.clone());
        let rel = relation_representations(f, x, &nr, 0)?;
        probe(f, rel.u, 15)
    });
    assert!(worst <= 1e-3, "worst relative error {worst}");
}

#[test]
fn unknown_relation_is_rejected() {
    let cfg = ModelConfig { num_labels: 2, ..cfg() };
    let p = params(&cfg, 16);
    let tree = sggec::deptree::DepTree::new(vec!["a".into(), "b".into()], vec![0, 1], vec![0, 4], LABELS).unwrap();
    let nr = neighbor_relations(&tree, &label_vocab(LABELS));
    let mut f = Forward::eval(&p, &cfg);
    let x = f.constant(random_tensor(&[2, 8], 18));
    assert!(relation_representations(&mut f, x, &nr, 0).is_err());
}

#[test]
fn singleton_neighborhood_has_unit_weight() {
    let cfg = cfg();
    let p = params(&cfg, 19);
    let nr = relations(1, 20);
    assert_eq!(nr.total(), 1);
    let mut f = Forward::eval(&p, &cfg);
    let x = f.constant(random_tensor(&[1, 8], 21));
    let layer = graph_attention_layer(&mut f, x, &nr, 0).unwrap();
    let wv = f.p("graph.layer0.wv").unwrap();
    let v = f.g.matmul(layer.relations.u, wv).unwrap();
    let v = f.g.value(v).clone();
    for (t, (&alpha, &agg)) in layer.alphas.iter().zip(&layer.aggregates).enumerate() {
        assert_eq!(f.g.value(alpha).data(), &[1.0]);
        let dk = 8 / cfg.graph_heads;
        for c in 0..dk {
            assert!((f.g.value(agg).get(0, c) - v.get(0, t * dk + c)).abs() < 1e-12);
        }
    }
}

/// Attention computed densely over every relation row of the sentence, with
/// rows owned by other nodes masked out.
fn dense_aggregates(q: &Tensor<f64>, k: &Tensor<f64>, v: &Tensor<f64>, owners: &[usize], heads: usize) -> Vec<Vec<Vec<f64>>> {
    let (n, d) = (q.rows(), q.cols());
    let dk = d / heads;
    let mut out = vec![vec![vec![0.0; dk]; n]; heads];
    for t in 0..heads {
        for i in 0..n {
            let scores: Vec<f64> = (0..owners.len())
                .map(|e| {
                    if owners[e] != i {
                        return f64::NEG_INFINITY;
                    }
                    (0..dk).map(|c| q.get(i, t * dk + c) * k.get(e, t * dk + c)).sum()
                })
                .collect();
            let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let w: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
            let z: f64 = w.iter().sum();
            for (e, we) in w.iter().enumerate() {
                for c in 0..dk {
                    out[t][i][c] += we / z * v.get(e, t * dk + c);
                }
            }
        }
    }
    out
}

#[test]
fn sparse_attention_matches_masked_dense() {
    let cfg = cfg();
    for seed in 0..10 {
        let p = params(&cfg, 100 + seed);
        let n = 2 + seed as usize * 3;
        let nr = relations(n, 200 + seed);
        let mut f = Forward::eval(&p, &cfg);
        let x = f.constant(random_tensor(&[n, 8], 300 + seed));
        let layer = graph_attention_layer(&mut f, x, &nr, 0).unwrap();
        let proj = |f: &mut Forward<'_, f64>, a: Var, name: &str| {
            let w = f.p(name).unwrap();
            let y = f.g.matmul(a, w).unwrap();
            f.g.value(y).clone()
        };
        let q = proj(&mut f, x, "graph.layer0.wq");
        let k = proj(&mut f, layer.relations.u, "graph.layer0.wk");
        let v = proj(&mut f, layer.relations.u, "graph.layer0.wv");
        let dense = dense_aggregates(&q, &k, &v, &layer.relations.owners, cfg.graph_heads);
        for (t, &agg) in layer.aggregates.iter().enumerate() {
            for i in 0..n {
                for (c, want) in dense[t][i].iter().enumerate() {
                    assert!((f.g.value(agg).get(i, c) - want).abs() < 1e-5);
                }
            }
        }
        for &alpha in &layer.alphas {
            let mut mass = vec![0.0; n];
            for (e, &o) in layer.relations.owners.iter().enumerate() {
                mass[o] += f.g.value(alpha).data()[e];
            }
            assert!(mass.iter().all(|m| (m - 1.0).abs() < 1e-6), "{mass:?}");
        }
    }
}

#[test]
fn graph_layer_gradients() {
    let cfg = cfg();
    let p = params(&cfg, 22);
    let nr = relations(5, 23);
    let hw = random_tensor(&[5, 8], 24);
    let samples = sample_params(&p, &["graph."], 80, 25);
    let worst = check_param_grads(&p, &cfg, &samples, 1e-5, |f| {
        let x = f.constant(hw.clone());
        let out = graph_attention_layer(f, x, &nr, 0)?.out;
        probe(f, out, 26)
    });
    assert!(worst <= 1e-3, "worst relative error {worst}");
}

#[test]
fn dual_aggregate_endpoints() {
    let p = Parameters::<f64>::new();
    let cfg = cfg();
    let mut f = Forward::eval(&p, &cfg);
    let h = random_tensor(&[5, 4], 27);
    let hw = random_tensor(&[3, 4], 28);
    let (hv, hwv) = (f.constant(h.clone()), f.constant(hw.clone()));
    let o = dual_aggregate(&mut f, hv, hwv, &unit_spans(3), 1.0).unwrap();
    assert_eq!(f.g.value(o), &h);
    let o = dual_aggregate(&mut f, hv, hwv, &unit_spans(3), 0.0).unwrap();
    for w in 0..3 {
        assert_eq!(f.g.value(o).row(w + 1), hw.row(w));
    }
    assert_eq!(f.g.value(o).row(0), h.row(0));
    assert_eq!(f.g.value(o).row(4), h.row(4));

    let hv = f.constant(Tensor::from_rows(&[vec![2.0, 2.0]]).unwrap());
    let hwv = f.constant(Tensor::zeros(&[1, 2]));
    let o = dual_aggregate(&mut f, hv, hwv, &vec![(0, 1)], 0.5).unwrap();
    assert_eq!(f.g.value(o).data(), &[1.0, 1.0]);
}

#[test]
fn dual_aggregate_broadcasts_over_spans() {
    let p = Parameters::<f64>::new();
    let cfg = cfg();
    let mut f = Forward::eval(&p, &cfg);
    let hv = f.constant(Tensor::zeros(&[5, 2]));
    let hwv = f.constant(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
    let o = dual_aggregate(&mut f, hv, hwv, &vec![(1, 3), (3, 4)], 0.0).unwrap();
    let o = f.g.value(o);
    assert_eq!(o.row(1), &[1.0, 2.0]);
    assert_eq!(o.row(2), &[1.0, 2.0]);
    assert_eq!(o.row(3), &[3.0, 4.0]);
}

#[test]
fn eval_is_deterministic() {
    let cfg = ModelConfig { dropout: 0.3, ..cfg() };
    let p = params(&cfg, 29).cast::<f32>();
    let nr = relations(4, 30);
    let ids = [BOS, 5, 6, 7, 8, 9, EOS];
    let spans: WordSpans = vec![(1, 2), (2, 4), (4, 5), (5, 6)];
    let run = || {
        let mut f = Forward::eval(&p, &cfg);
        let out = encode(&mut f, &ids, &spans, Some(&nr)).unwrap();
        f.g.value(out.o).clone()
    };
    assert_eq!(run().data(), run().data());
}

#[test]
fn graph_encoder_needs_a_tree() {
    let cfg = cfg();
    let p = params(&cfg, 31);
    let mut f = Forward::eval(&p, &cfg);
    assert!(encode(&mut f, &[BOS, 4, EOS], &unit_spans(1), None).is_err());
    let no_graph = ModelConfig { beta: 1.0, ..cfg };
    let mut f = Forward::eval(&p, &no_graph);
    let out = encode(&mut f, &[BOS, 4, EOS], &unit_spans(1), None).unwrap();
    assert!(out.words.is_none());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn outputs_finite_for_any_length(n in 1usize..=40, seed in 0u64..1000) {
        let cfg = cfg();
        let p = params(&cfg, seed).cast::<f32>();
        let nr = relations(n, seed + 1);
        let ids: Vec<usize> = std::iter::once(BOS)
            .chain((0..n).map(|i| 4 + (i * 7 + seed as usize) % 16))
            .chain(std::iter::once(EOS))
            .collect();
        let mut f = Forward::eval(&p, &cfg);
        let out = encode(&mut f, &ids, &unit_spans(n), Some(&nr)).unwrap();
        prop_assert!(f.g.value(out.o).is_finite());
        prop_assert!(f.g.value(out.words.unwrap()).is_finite());
    }

    #[test]
    fn attention_is_local(n in 3usize..15, seed in 0u64..1000, node_pick in 0usize..100) {
        let cfg = cfg();
        let p = params(&cfg, seed);
        let nr = relations(n, seed + 7);
        let i = node_pick % n;
        let mut allowed = vec![false; n];
        allowed[i] = true;
        for nb in nr.of(i) {
            allowed[nb.other] = true;
        }
        let hw = random_tensor(&[n, 8], seed + 11);
        let mut zeroed = hw.clone();
        for w in (0..n).filter(|&w| !allowed[w]) {
            zeroed.data_mut()[w * 8..(w + 1) * 8].iter_mut().for_each(|x| *x = 0.0);
        }
        let run = |x: &Tensor<f64>| {
            let mut f = Forward::eval(&p, &cfg);
            let xv = f.constant(x.clone());
            let layer = graph_attention_layer(&mut f, xv, &nr, 0).unwrap();
            layer.aggregates.iter().map(|&a| f.g.value(a).row(i).to_vec()).collect::<Vec<_>>()
        };
        let (a, b) = (run(&hw), run(&zeroed));
        for (x, y) in a.iter().flatten().zip(b.iter().flatten()) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }
}
