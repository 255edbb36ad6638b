use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::gradcheck::{self, GradCheckReport};
use super::*;

fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    t(shape, &(0..n).map(|_| rng.gen_range(-2.0..2.0)).collect::<Vec<_>>())
}

/// Random projection weights so every check reduces to a scalar that depends
/// on every output element.
fn project(g: &mut Graph<f64>, y: Var, rng_seed: u64) -> Result<Var, AutodiffError> {
    let n = g.value(y).len();
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let w: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let wv = g.constant(g.shape(y).to_vec(), w)?;
    let p = g.mul(y, wv)?;
    Ok(g.sum(p))
}

fn trials<F>(name: &str, shapes: &[&[usize]], build: F)
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var, AutodiffError> + Copy,
{
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    for trial in 0..100u64 {
        let inputs: Vec<_> = shapes.iter().map(|s| random(&mut rng, s)).collect();
        let report: GradCheckReport = gradcheck::check(&inputs, 1e-6, |g, vs| {
            let y = build(g, vs)?;
            project(g, y, trial)
        })
        .unwrap();
        worst = worst.max(report.max_rel_error);
    }
    assert!(worst < 1e-4, "{name}: max relative error {worst:e}");
}

#[test]
fn matmul_identity_and_hand_example() {
    let mut g = Graph::<f64>::no_grad();
    let i2 = g.leaf(&t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
    let m = g.leaf(&t(&[2, 2], &[3.5, -1.0, 2.0, 7.0]));
    let p = g.matmul(i2, m).unwrap();
    assert_eq!(g.value(p), &[3.5, -1.0, 2.0, 7.0]);

    let a = g.leaf(&t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
    let b = g.leaf(&t(&[2, 1], &[1.0, 1.0]));
    let p = g.matmul(a, b).unwrap();
    assert_eq!(g.shape(p), &[2, 1]);
    assert_eq!(g.value(p), &[3.0, 7.0]);
}

#[test]
fn matmul_shape_error_names_both_shapes() {
    let mut g = Graph::<f64>::new();
    let a = g.leaf(&Tensor::zeros(vec![2, 3]));
    let b = g.leaf(&Tensor::zeros(vec![2, 3]));
    let err = g.matmul(a, b).unwrap_err();
    assert_eq!(err, AutodiffError::ShapeMismatch { op: "matmul", left: vec![2, 3], right: vec![2, 3] });
    assert!(err.to_string().contains("[2, 3] and [2, 3]"));
}

#[test]
fn matmul_gradient_of_sum_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = random(&mut rng, &[3, 4]);
    let b = random(&mut rng, &[4, 2]);
    let report = gradcheck::check(&[a, b], 1e-6, |g, v| {
        let p = g.matmul(v[0], v[1])?;
        Ok(g.sum(p))
    })
    .unwrap();
    assert!(report.max_rel_error < 1e-6, "{report:?}");
}

#[test]
fn softmax_rows_masked_examples() {
    let mut g = Graph::<f64>::no_grad();
    let x = g.leaf(&Tensor::zeros(vec![4, 4]));
    let y = g.softmax_rows_masked(x).unwrap();
    let v = g.value(y);
    for i in 0..4 {
        for j in 0..4 {
            let want = if j <= i { 1.0 / (i + 1) as f64 } else { 0.0 };
            assert!((v[i * 4 + j] - want).abs() < 1e-15);
        }
    }
    let x = g.leaf(&t(&[3, 3], &[5.0, -100.0, 300.0, 1.0, 2.0, 3.0, 0.0, 0.0, 0.0]));
    let y = g.softmax_rows_masked(x).unwrap();
    assert_eq!(&g.value(y)[..3], &[1.0, 0.0, 0.0]);
}

#[test]
fn softmax_rows_sum_to_one_and_mask_is_exact_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for n in 1..12 {
        let mut g = Graph::<f64>::no_grad();
        let x = g.leaf(&random(&mut rng, &[n, n]));
        let y = g.softmax_rows_masked(x).unwrap();
        let v = g.value(y);
        for i in 0..n {
            let s: f64 = v[i * n..(i + 1) * n].iter().sum();
            assert!((s - 1.0).abs() < 1e-6);
            for j in i + 1..n {
                assert_eq!(v[i * n + j], 0.0);
            }
        }
    }
}

#[test]
fn softmax_non_square_is_rejected() {
    let mut g = Graph::<f64>::new();
    let x = g.leaf(&Tensor::zeros(vec![2, 3]));
    assert!(matches!(g.softmax_rows_masked(x), Err(AutodiffError::ShapeMismatch { .. })));
}

#[test]
fn finite_difference_every_differentiable_op() {
    trials("matmul", &[&[3, 4], &[4, 5]], |g, v| g.matmul(v[0], v[1]));
    trials("transpose", &[&[3, 4]], |g, v| g.transpose(v[0]));
    trials("softmax_rows_masked", &[&[5, 5]], |g, v| g.softmax_rows_masked(v[0]));
    trials("add", &[&[2, 3], &[2, 3]], |g, v| g.add(v[0], v[1]));
    trials("add_row", &[&[3, 4], &[4]], |g, v| g.add_row(v[0], v[1]));
    trials("mul", &[&[2, 3], &[2, 3]], |g, v| g.mul(v[0], v[1]));
    trials("scale", &[&[2, 3]], |g, v| Ok(g.scale(v[0], -1.7)));
    trials("add_scalar", &[&[2, 3]], |g, v| Ok(g.add_scalar(v[0], 0.3)));
    trials("divide", &[&[2, 3], &[2, 3]], |g, v| {
        // keep the denominator away from zero: 2.5 + b in [0.5, 4.5]
        let b = g.add_scalar(v[1], 2.5);
        g.divide(v[0], b)
    });
    trials("maximum_with_zero", &[&[3, 3]], |g, v| Ok(g.maximum_with_zero(v[0])));
    trials("clamp_min", &[&[3, 3]], |g, v| Ok(g.clamp_min(v[0], 0.25)));
    trials("exp", &[&[2, 3]], |g, v| Ok(g.exp(v[0])));
    trials("mean_over_selection", &[&[3, 3]], |g, v| g.mean_over_selection(v[0], &[0, 4, 5, 8]));
    trials("sum", &[&[2, 3]], |g, v| Ok(g.sum(v[0])));
    trials("concat_last_dim", &[&[2, 3], &[2, 1]], |g, v| g.concat_last_dim(&[v[0], v[1]]));
    trials("layer_norm", &[&[3, 5], &[5], &[5]], |g, v| g.layer_norm(v[0], v[1], v[2]));
    trials("gelu", &[&[3, 4]], |g, v| Ok(g.gelu(v[0])));
    trials("embedding_lookup", &[&[5, 3]], |g, v| g.embedding_lookup(v[0], &[4, 0, 4, 2]));
    trials("cross_entropy_from_logits", &[&[4, 6]], |g, v| {
        g.cross_entropy_from_logits(v[0], &[Some(1), None, Some(5), Some(0)])
    });
}

#[test]
fn cross_entropy_perfect_prediction_limit() {
    let mut g = Graph::<f64>::new();
    let mut logits = vec![0.0; 2 * 5];
    logits[3] = 20.0;
    logits[5 + 1] = 20.0;
    let x = g.leaf(&t(&[2, 5], &logits).with_grad());
    let l = g.cross_entropy_from_logits(x, &[Some(3), Some(1)]).unwrap();
    // -log(e^20 / (e^20 + 4)) ~ 4 e^-20 ~ 8.2e-9
    assert!(g.scalar_value(l) < 1e-8);
}

#[test]
fn cross_entropy_all_masked_is_zero_with_zero_gradient() {
    let mut g = Graph::<f64>::new();
    let x = g.leaf(&t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).with_grad());
    let l = g.cross_entropy_from_logits(x, &[None, None]).unwrap();
    assert_eq!(g.scalar_value(l), 0.0);
    let grads = g.backward(l).unwrap();
    assert!(grads.get(x).unwrap().iter().all(|&v| v == 0.0));
}

#[test]
fn hinge_dead_zone_has_zero_gradient() {
    let mut g = Graph::<f64>::new();
    let x = g.leaf(&Tensor::scalar(-0.3).with_grad());
    let y = g.maximum_with_zero(x);
    assert_eq!(g.scalar_value(y), 0.0);
    let grads = g.backward(y).unwrap();
    assert_eq!(grads.get(x).unwrap(), &[0.0]);
}

#[test]
fn divide_by_zero_is_a_skip_signal() {
    let mut g = Graph::<f64>::new();
    let a = g.leaf(&Tensor::scalar(1.0));
    let b = g.leaf(&Tensor::scalar(0.0));
    assert_eq!(g.divide(a, b).unwrap_err(), AutodiffError::ZeroDenominator);
}

#[test]
fn gradient_accumulates_over_branches() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = random(&mut rng, &[3, 3]).with_grad();
    let w = random(&mut rng, &[3, 3]);

    let branch = |use_f: bool, use_g: bool| -> Vec<f64> {
        let mut g = Graph::new();
        let xv = g.leaf(&x);
        let wv = g.leaf(&w);
        let f = g.matmul(xv, wv).unwrap();
        let f = g.sum(f);
        let e = g.exp(xv);
        let e = g.sum(e);
        let y = match (use_f, use_g) {
            (true, true) => g.add(f, e).unwrap(),
            (true, false) => f,
            _ => e,
        };
        g.backward(y).unwrap().get(xv).unwrap().to_vec()
    };
    let both = branch(true, true);
    let f = branch(true, false);
    let e = branch(false, true);
    for i in 0..both.len() {
        assert!((both[i] - (f[i] + e[i])).abs() < 1e-12);
    }
}

#[test]
fn backward_is_bit_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let a = random(&mut rng, &[6, 6]).with_grad();
    let run = || {
        let mut g = Graph::new();
        let x = g.leaf(&a);
        let s = g.softmax_rows_masked(x).unwrap();
        let p = g.matmul(s, x).unwrap();
        let l = g.gelu(p);
        let l = g.sum(l);
        g.backward(l).unwrap().get(x).unwrap().to_vec()
    };
    let first = run();
    let second = run();
    assert!(first.iter().zip(&second).all(|(x, y)| x.to_bits() == y.to_bits()));
}

#[test]
fn every_participating_leaf_gets_a_gradient() {
    let mut g = Graph::<f32>::new();
    let a = g.leaf(&Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap().with_grad());
    let unused = g.leaf(&Tensor::new(vec![2], vec![1.0, 2.0]).unwrap().with_grad());
    let c = g.leaf(&Tensor::new(vec![1, 2], vec![3.0, 4.0]).unwrap());
    let p = g.mul(a, c).unwrap();
    let l = g.sum(p);
    let grads = g.backward(l).unwrap();
    assert_eq!(grads.get(a).unwrap(), &[3.0, 4.0]);
    assert_eq!(grads.get(unused).unwrap(), &[0.0, 0.0]);
    assert!(grads.get(c).is_none());
}

#[test]
fn backward_rejects_non_scalar_loss() {
    let mut g = Graph::<f64>::new();
    let a = g.leaf(&Tensor::zeros(vec![2]).with_grad());
    assert!(matches!(g.backward(a), Err(AutodiffError::NonScalarLoss { .. })));
}
