//! Analytic gradients of every operator against central finite differences.

use ndcompute::testing::check_input_gradients;
use ndcompute::{Graph, OpKind, Result, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;
const FLOOR: f64 = 1e-6;

fn random(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Values bounded away from zero, for kinked operators.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.random_range(0.05..1.5);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

fn check(
    name: &str,
    inputs: Vec<Tensor>,
    build: impl Fn(&mut Graph, &[Var]) -> Result<Var>,
) -> f64 {
    let worst = check_input_gradients(&inputs, H, FLOOR, build).unwrap();
    assert!(worst <= TOL, "{name}: relative error {worst:e}");
    worst
}

#[test]
fn conv2d_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for (stride, padding) in [(1, 0), (2, 0), (1, 1), (2, 1)] {
        let x = random(&mut rng, &[2, 7, 6, 3], -1.0, 1.0);
        let w = random(&mut rng, &[3, 3, 3, 4], -0.5, 0.5);
        let b = random(&mut rng, &[4], -0.5, 0.5);
        check("conv2d", vec![x, w, b], |g, v| {
            g.apply(OpKind::Conv2d { stride, padding }, &[v[0], v[1], v[2]])
        });
    }
}

#[test]
fn dense_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random(&mut rng, &[5, 4], -1.0, 1.0);
    let w = random(&mut rng, &[4, 3], -1.0, 1.0);
    let b = random(&mut rng, &[3], -1.0, 1.0);
    check("dense", vec![x, w, b], |g, v| g.dense(v[0], v[1], v[2]));
}

#[test]
fn pointwise_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = away_from_zero(&mut rng, &[4, 5]);
    check("relu", vec![x.clone()], |g, v| g.relu(v[0]));
    check("leaky_relu", vec![x.clone()], |g, v| g.leaky_relu(v[0], 0.01));
    check("exp", vec![x.clone()], |g, v| g.exp(v[0]));
    check("square", vec![x.clone()], |g, v| g.square(v[0]));
    check("scale", vec![x.clone()], |g, v| g.scale(v[0], -2.5));
    check("clip", vec![x.clone()], |g, v| g.clip(v[0], -0.7, 0.8));
    let pos = random(&mut rng, &[4, 5], 0.2, 3.0);
    check("log", vec![pos], |g, v| g.log(v[0]));
}

#[test]
fn normalizer_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = random(&mut rng, &[3, 6], -2.0, 2.0);
    check("softmax", vec![x.clone()], |g, v| g.softmax(v[0]));
    check("log_softmax", vec![x.clone()], |g, v| g.log_softmax(v[0]));
    check("cross_entropy", vec![x.clone()], |g, v| {
        g.cross_entropy_with_logits(v[0], vec![0, 5, 2])
    });
    let p = random(&mut rng, &[3, 6], 0.05, 1.0);
    check("entropy", vec![p], |g, v| g.entropy(v[0]));
}

#[test]
fn sparsemax_gradients_on_stable_support() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut checked = 0;
    while checked < 20 {
        let len = rng.random_range(2..12);
        let z = random(&mut rng, &[len], -1.5, 1.5);
        // Skip inputs whose support could change under ±h.
        let mut out = vec![0.0; len];
        ndcompute::kernels::sparsemax_row(z.data(), &mut out);
        let tau = z
            .data()
            .iter()
            .zip(&out)
            .find(|(_, &p)| p > 0.0)
            .map(|(zi, p)| zi - p)
            .unwrap();
        if z.data().iter().any(|zi| (zi - tau).abs() < 1e-3) {
            continue;
        }
        check("sparsemax", vec![z], |g, v| g.sparsemax(v[0]));
        checked += 1;
    }
}

#[test]
fn binary_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let a = random(&mut rng, &[3, 4], -1.0, 1.0);
    let mut b = random(&mut rng, &[3, 4], -1.0, 1.0);
    // keep minimum away from ties
    for (bi, ai) in b.data_mut().iter_mut().zip(a.data()) {
        if (*bi - ai).abs() < 0.05 {
            *bi += 0.2;
        }
    }
    check("add", vec![a.clone(), b.clone()], |g, v| g.add(v[0], v[1]));
    check("sub", vec![a.clone(), b.clone()], |g, v| g.sub(v[0], v[1]));
    check("mul", vec![a.clone(), b.clone()], |g, v| g.mul(v[0], v[1]));
    check("minimum", vec![a.clone(), b.clone()], |g, v| g.minimum(v[0], v[1]));
    let c = random(&mut rng, &[3, 2], -1.0, 1.0);
    check("concat", vec![a, c, b], |g, v| g.concat(&[v[0], v[1], v[2]]));
}

#[test]
fn reduction_and_indexing_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = random(&mut rng, &[4, 3], -1.0, 1.0);
    check("sum", vec![x.clone()], |g, v| g.sum(v[0]));
    check("mean", vec![x.clone()], |g, v| g.mean(v[0]));
    check("reshape", vec![x.clone()], |g, v| g.reshape(v[0], vec![2, 6]));
    check("index_select", vec![x.clone()], |g, v| g.index_select(v[0], vec![3, 0, 3, 1]));
    check("gather", vec![x], |g, v| g.gather(v[0], vec![2, 0, 1, 1]));
    let w = random(&mut rng, &[2, 5], 0.0, 1.0);
    let vals = random(&mut rng, &[2, 5, 3], -1.0, 1.0);
    check("weighted_sum", vec![w, vals], |g, v| g.weighted_sum(v[0], v[1]));
}

#[test]
fn composed_network_gradients() {
    // conv → leaky relu → flatten → dense → softmax cross-entropy
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = random(&mut rng, &[2, 6, 6, 2], 0.0, 1.0);
    let w1 = random(&mut rng, &[3, 3, 2, 3], -0.5, 0.5);
    let b1 = random(&mut rng, &[3], -0.1, 0.1);
    let w2 = random(&mut rng, &[12, 4], -0.5, 0.5);
    let b2 = random(&mut rng, &[4], -0.1, 0.1);
    check("network", vec![x, w1, b1, w2, b2], |g, v| {
        let h = g.conv2d(v[0], v[1], v[2], 2, 0)?;
        let h = g.leaky_relu(h, 0.01)?;
        let h = g.reshape(h, vec![2, 12])?;
        let z = g.dense(h, v[3], v[4])?;
        let ce = g.cross_entropy_with_logits(z, vec![1, 3])?;
        g.mean(ce)
    });
}

#[test]
fn disconnected_parameter_gets_zero_gradient() {
    let mut p = ndcompute::ParameterSet::new();
    let used = p.add("used", Tensor::vector(vec![1.0, 2.0])).unwrap();
    let unused = p.add("unused", Tensor::vector(vec![3.0])).unwrap();
    p.grad_mut(unused).data_mut()[0] = 42.0;
    let mut g = Graph::new();
    let w = g.param(&p, used);
    let x = g.constant(Tensor::vector(vec![0.5, -4.0]));
    let y = g.mul(w, x).unwrap();
    let loss = g.sum(y).unwrap();
    g.gradients(loss, &mut p).unwrap();
    // linear map: gradient equals the fixed input
    assert_eq!(p.grad(used).data(), &[0.5, -4.0]);
    assert_eq!(p.grad(unused).data(), &[0.0]);
}
