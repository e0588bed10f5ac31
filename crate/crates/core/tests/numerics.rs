mod common;

use std::collections::BTreeMap;

use common::{check_grad, random_tensor};
use proptest::prelude::*;
use sggec::numerics::{seeded_rng, AdamConfig, AdamState, Checkpoint, Graph, Parameters, Tensor};
use sggec::Error;

const H: f64 = 1e-3;
const TOL: f64 = 1e-4;

fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
}

#[test]
fn matmul_identity_and_hand_case() {
    let mut g = Graph::<f64>::new();
    let eye = g.constant(t(&[3, 3], &[1., 0., 0., 0., 1., 0., 0., 0., 1.]));
    let x = g.constant(random_tensor(&[3, 2], 1));
    let y = g.matmul(eye, x).unwrap();
    assert_eq!(g.value(y), g.value(x));

    let a = g.constant(t(&[2, 2], &[1., 2., 3., 4.]));
    let b = g.constant(t(&[2, 1], &[1., 1.]));
    let c = g.matmul(a, b).unwrap();
    assert_eq!(g.value(c).data(), &[3., 7.]);
}

#[test]
fn matmul_shape_error_names_both_shapes() {
    let mut g = Graph::<f32>::new();
    let a = g.constant(Tensor::zeros(&[2, 3]));
    let b = g.constant(Tensor::zeros(&[2, 3]));
    let err = g.matmul(a, b).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("[2, 3]") && matches!(err, Error::Dimension { .. }), "{msg}");
}

#[test]
fn matmul_gradient_matches_finite_differences() {
    let worst = check_grad(&[random_tensor(&[5, 4], 2), random_tensor(&[4, 3], 3)], H, |g, v| {
        let c = g.matmul(v[0], v[1])?;
        let w = g.constant(random_tensor(&[5, 3], 4));
        let p = g.mul(c, w)?;
        Ok(g.sum(p))
    });
    assert!(worst < TOL, "worst rel err {worst}");
}

#[test]
fn softmax_examples() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(t(&[1, 3], &[0., 0., 0.]));
    let s = g.softmax(x, None).unwrap();
    for &p in g.value(s).data() {
        assert!((p - 1.0 / 3.0).abs() < 1e-12);
    }
    let x = g.constant(t(&[1, 3], &[5., -2., 9.]));
    let s = g.softmax(x, Some(&[false, true, false])).unwrap();
    assert_eq!(g.value(s).data(), &[0.0, 1.0, 0.0]);
    let err = g.softmax(x, Some(&[false, false, false])).unwrap_err();
    assert!(matches!(err, Error::DegenerateMask { row: 0 }));
}

#[test]
fn softmax_f32_matches_f64_oracle() {
    let row = random_tensor(&[4, 7], 9);
    let mut g = Graph::<f32>::new();
    let x = g.constant(row.cast());
    let s = g.softmax(x, None).unwrap();
    for r in 0..4 {
        let logits = row.row(r);
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = logits.iter().map(|v| (v - max).exp()).sum();
        for j in 0..7 {
            let oracle = (logits[j] - max).exp() / z;
            let got = f64::from(g.value(s).get(r, j));
            assert!((got - oracle).abs() < 1e-6, "{got} vs {oracle}");
        }
    }
}

proptest! {
    #[test]
    fn softmax_rows_normalized_and_masked_exactly_zero(
        rows in 1usize..5,
        cols in 1usize..9,
        seed in 0u64..1000,
        mask_bits in proptest::collection::vec(any::<bool>(), 40),
    ) {
        let x = random_tensor(&[rows, cols], seed).cast::<f32>();
        let mut mask: Vec<bool> = mask_bits.iter().cycle().take(rows * cols).copied().collect();
        for r in 0..rows {
            mask[r * cols + (seed as usize % cols)] = true;
        }
        let mut g = Graph::<f32>::new();
        let v = g.constant(x);
        let s = g.softmax(v, Some(&mask)).unwrap();
        for r in 0..rows {
            let row = g.value(s).row(r);
            let sum: f64 = row.iter().map(|&p| f64::from(p)).sum();
            prop_assert!((sum - 1.0).abs() < 1e-6);
            for j in 0..cols {
                if !mask[r * cols + j] {
                    prop_assert_eq!(row[j], 0.0);
                }
            }
        }
    }
}

#[test]
fn layer_norm_of_constant_vector_is_zero() {
    let mut g = Graph::<f32>::new();
    let x = g.constant(Tensor::full(&[2, 5], 3.5));
    let gamma = g.constant(Tensor::full(&[5], 1.0));
    let beta = g.constant(Tensor::zeros(&[5]));
    let y = g.layer_norm(x, gamma, beta).unwrap();
    assert!(g.value(y).data().iter().all(|&v| v == 0.0));
}

#[test]
fn dropout_modes() {
    let mut rng = seeded_rng(0);
    let mut g = Graph::<f32>::new();
    let x = g.constant(Tensor::full(&[4, 8], 2.0));
    assert_eq!(g.dropout(x, 0.0, true, &mut rng).unwrap(), x);
    assert_eq!(g.dropout(x, 0.5, false, &mut rng).unwrap(), x);
    assert!(matches!(g.dropout(x, 1.0, true, &mut rng), Err(Error::InvalidProbability(_))));
    assert!(g.dropout(x, -0.1, true, &mut rng).is_err());
    let y = g.dropout(x, 0.5, true, &mut rng).unwrap();
    let vals = g.value(y).data();
    assert!(vals.iter().all(|&v| v == 0.0 || v == 4.0));
    assert!(vals.contains(&0.0) && vals.contains(&4.0));
}

#[test]
fn cross_entropy_value_gradient_and_errors() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(t(&[1, 3], &[0., 0., 0.]));
    let ce = g.cross_entropy(x, &[1]).unwrap();
    assert!((g.value(ce).data()[0] - 3f64.ln()).abs() < 1e-12);
    assert!(matches!(g.cross_entropy(x, &[3]), Err(Error::InvalidClass { index: 3, classes: 3 })));

    let worst = check_grad(&[random_tensor(&[4, 5], 11)], H, |g, v| {
        let ce = g.cross_entropy(v[0], &[0, 4, 2, 2])?;
        let w = g.constant(t(&[4], &[1.0, 0.5, -2.0, 0.25]));
        let p = g.mul(ce, w)?;
        Ok(g.sum(p))
    });
    assert!(worst < TOL, "worst rel err {worst}");
}

#[test]
fn backward_trivial_cases() {
    let mut g = Graph::<f64>::new();
    let x = g.leaf(random_tensor(&[3, 2], 5));
    let s = g.sum(x);
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[1.0; 6]);

    let mut g = Graph::<f64>::new();
    let x = g.leaf(Tensor::scalar(3.0));
    let sq = g.mul(x, x).unwrap();
    g.backward(sq).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[6.0]);
    g.backward(sq).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[12.0], "repeated backward accumulates");
    g.zero_grad();
    assert!(g.grad(x).is_none());

    let mut g = Graph::<f64>::new();
    let x = g.leaf(random_tensor(&[2, 2], 6));
    assert!(matches!(g.backward(x), Err(Error::NonScalarLoss(_))));
}

#[test]
fn every_reachable_differentiable_node_gets_a_grad() {
    let mut g = Graph::<f64>::new();
    let a = g.leaf(random_tensor(&[3, 4], 1));
    let b = g.leaf(random_tensor(&[4, 2], 2));
    let c = g.constant(random_tensor(&[3, 2], 3));
    let m = g.matmul(a, b).unwrap();
    let r = g.relu(m);
    let s = g.add(r, c).unwrap();
    let loss = g.mean(s);
    let unrelated = g.leaf(random_tensor(&[2], 4));
    g.backward(loss).unwrap();
    for v in [a, b, m, r, s, loss] {
        let grad = g.grad(v).expect("grad present");
        assert_eq!(grad.len(), g.value(v).len());
    }
    assert!(g.grad(unrelated).is_none());
}

#[test]
fn elementwise_and_shape_op_gradients() {
    // values kept away from the ReLU kink
    let mut shifted = random_tensor(&[3, 4], 21);
    for v in shifted.data_mut() {
        *v += if *v >= 0.0 { 0.1 } else { -0.1 };
    }
    let w = random_tensor(&[3, 4], 22);
    let cases: Vec<(&str, f64)> = vec![
        (
            "relu/sigmoid/add_row/mul_col",
            check_grad(&[shifted.clone(), random_tensor(&[4], 23), random_tensor(&[3], 24)], H, |g, v| {
                let r = g.relu(v[0]);
                let s = g.sigmoid(v[0]);
                let a = g.add(r, s)?;
                let b = g.add_row(a, v[1])?;
                let c = g.mul_col(b, v[2])?;
                let wc = g.constant(w.clone());
                let p = g.mul(c, wc)?;
                Ok(g.sum(p))
            }),
        ),
        (
            "log/scale/add_scalar/sub",
            check_grad(&[random_tensor(&[2, 3], 25)], H, |g, v| {
                let sq = g.mul(v[0], v[0])?;
                let pos = g.add_scalar(sq, 0.5);
                let l = g.log(pos);
                let s = g.scale(l, -1.7);
                let d = g.sub(s, v[0])?;
                Ok(g.mean(d))
            }),
        ),
        (
            "masked softmax",
            check_grad(&[random_tensor(&[3, 4], 26)], H, |g, v| {
                let mask = [true, false, true, true, true, true, false, false, false, true, true, true];
                let s = g.softmax(v[0], Some(&mask))?;
                let wc = g.constant(w.clone());
                let p = g.mul(s, wc)?;
                Ok(g.sum(p))
            }),
        ),
        (
            "layer_norm",
            check_grad(
                &[random_tensor(&[3, 4], 27), random_tensor(&[4], 28), random_tensor(&[4], 29)],
                H,
                |g, v| {
                    let y = g.layer_norm(v[0], v[1], v[2])?;
                    let wc = g.constant(w.clone());
                    let p = g.mul(y, wc)?;
                    Ok(g.sum(p))
                },
            ),
        ),
        (
            "gather/scatter/concat/slice/transpose",
            check_grad(&[random_tensor(&[4, 3], 30), random_tensor(&[2, 3], 31)], H, |g, v| {
                let a = g.gather_rows(v[0], &[3, 0, 0, 2])?;
                let b = g.scatter_add_rows(a, &[1, 1, 0, 1], 2)?;
                let c = g.concat_cols(&[b, v[1]])?;
                let d = g.slice_cols(c, 1, 5)?;
                let e = g.concat_rows(&[d, d])?;
                let tr = g.transpose(e)?;
                let wc = g.constant(random_tensor(&[4, 4], 32));
                let p = g.mul(tr, wc)?;
                Ok(g.sum(p))
            }),
        ),
        (
            "row_dot/segment_softmax/pick_cols/reshape",
            check_grad(&[random_tensor(&[5, 3], 33), random_tensor(&[5, 3], 34)], H, |g, v| {
                let s = g.row_dot(v[0], v[1])?;
                let a = g.segment_softmax(s, &[0, 1, 0, 2, 1])?;
                let col = g.reshape(a, &[5, 1])?;
                let scaled = g.mul_col(v[0], col)?;
                let picked = g.pick_cols(scaled, &[0, 2, 1, 1, 0])?;
                let wc = g.constant(t(&[5], &[1.0, -1.0, 2.0, 0.5, 3.0]));
                let p = g.mul(picked, wc)?;
                Ok(g.sum(p))
            }),
        ),
    ];
    for (name, worst) in cases {
        assert!(worst < TOL, "{name}: worst rel err {worst}");
    }
}

#[test]
fn segment_softmax_normalizes_each_segment() {
    let mut g = Graph::<f64>::new();
    let s = g.constant(t(&[5], &[0.3, 2.0, -1.0, 4.0, 0.0]));
    let a = g.segment_softmax(s, &[0, 1, 0, 2, 1]).unwrap();
    let v = g.value(a).data();
    assert!((v[0] + v[2] - 1.0).abs() < 1e-12);
    assert!((v[1] + v[4] - 1.0).abs() < 1e-12);
    assert_eq!(v[3], 1.0);
}

fn scalar_params(value: f32) -> Parameters<f32> {
    let mut p = Parameters::new();
    p.insert("w", Tensor::scalar(value)).unwrap();
    p
}

#[test]
fn adam_zero_gradient_without_decay_is_a_no_op() {
    let mut p = scalar_params(0.75);
    let mut state = AdamState::new(AdamConfig {
        weight_decay: 0.0,
        ..AdamConfig::default()
    });
    let grads = BTreeMap::from([("w".to_string(), vec![0.0f32])]);
    for _ in 0..3 {
        state.step(&mut p, &grads).unwrap();
    }
    assert_eq!(p.get("w").unwrap().data(), &[0.75]);
}

#[test]
fn adam_first_step_moves_by_learning_rate() {
    let mut p = Parameters::<f64>::new();
    p.insert("w", Tensor::scalar(1.0)).unwrap();
    let mut state = AdamState::new(AdamConfig {
        lr: 1e-4,
        weight_decay: 0.0,
        ..AdamConfig::default()
    });
    let grads = BTreeMap::from([("w".to_string(), vec![1.0f64])]);
    state.step(&mut p, &grads).unwrap();
    let moved = 1.0 - p.get("w").unwrap().data()[0];
    assert!((moved - 1e-4).abs() < 1e-8, "moved {moved}");
}

#[test]
fn adam_missing_gradient_names_parameter() {
    let mut p = scalar_params(1.0);
    let mut state = AdamState::new(AdamConfig::default());
    let err = state.step(&mut p, &BTreeMap::new()).unwrap_err();
    assert!(matches!(err, Error::MissingGrad(ref n) if n == "w"));
}

#[test]
fn adam_descends_quadratic_bowl_monotonically() {
    let mut p = Parameters::<f64>::new();
    p.insert("x", Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap()).unwrap();
    let mut state = AdamState::new(AdamConfig {
        lr: 0.05,
        ..AdamConfig::default()
    });
    let loss_of = |p: &Parameters<f64>| p.get("x").unwrap().data().iter().map(|v| v * v).sum::<f64>();
    let mut prev = loss_of(&p);
    for _ in 0..10 {
        let mut g = Graph::new();
        let x = g.param(&p, "x").unwrap();
        let sq = g.mul(x, x).unwrap();
        let loss = g.sum(sq);
        g.backward(loss).unwrap();
        let grads = g.param_grads(&p);
        state.step(&mut p, &grads).unwrap();
        let now = loss_of(&p);
        assert!(now < prev, "{now} !< {prev}");
        prev = now;
    }
}

proptest! {
    #[test]
    fn checkpoint_round_trip_is_bytewise_identity(
        shapes in proptest::collection::vec(proptest::collection::vec(1usize..4, 1..4), 1..5),
        seed in any::<u64>(),
    ) {
        let mut tensors = Parameters::new();
        for (i, shape) in shapes.iter().enumerate() {
            let t = random_tensor(shape, seed.wrapping_add(i as u64)).cast::<f32>();
            tensors.insert(format!("p{i}.w"), t).unwrap();
        }
        let ck = Checkpoint { config: vec![("seed".into(), seed.to_string())], tensors };
        let bytes = ck.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        prop_assert_eq!(back.to_bytes().unwrap(), bytes);
        prop_assert_eq!(back, ck);
    }
}
