//! Shared helpers for the integration suites: seeded random tensors, a
//! central finite-difference gradient checker, and randomized
//! convolution agreement checks.

#![allow(dead_code)]

use lwnet3d::graph::{Grads, Node};
use lwnet3d::layers::{Conv3, Mode};
use lwnet3d::tensor::{Extent3, Tensor5};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub fn random_tensor(shape: [usize; 5], seed: u64) -> Tensor5<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let len: usize = shape.iter().product();
    let data: Vec<f64> = (0..len).map(|_| normal.sample(&mut rng)).collect();
    Tensor5::from_vec(shape, data).unwrap()
}

pub fn random_vec(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    (0..len).map(|_| normal.sample(&mut rng)).collect()
}

/// Scalar objective: the output contracted with a fixed random cotangent.
fn objective(node: &mut Node<f64>, x: &Tensor5<f64>, mode: Mode, cotangent: &[f64]) -> f64 {
    let (y, _) = node.forward(x, mode, false).expect("forward");
    y.data().iter().zip(cotangent).map(|(&a, &b)| a * b).sum()
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-4)
}

pub struct FdReport {
    pub max_rel_err: f64,
    pub checked: usize,
}

fn nudge(node: &mut Node<f64>, name: &str, i: usize, delta: f64) {
    node.visit_params(&mut |n, _, data| {
        if n == name {
            data[i] += delta;
        }
    });
}

/// Compare analytic gradients (input and every parameter) of
/// `sum(cotangent * node(x))` against central finite differences with
/// step `h`, returning the worst relative error observed.
pub fn fd_check(node: &mut Node<f64>, x: &Tensor5<f64>, mode: Mode, h: f64) -> FdReport {
    let out_shape = node.out_shape(x.shape()).expect("out shape");
    let out_len: usize = out_shape.iter().product();
    let cotangent = random_vec(out_len, 0xC07A);

    let (y, cache) = node.forward(x, mode, true).expect("forward");
    assert_eq!(y.shape(), out_shape);
    let grad_out = Tensor5::from_vec(out_shape, cotangent.clone()).unwrap();
    let mut grads = Grads::new();
    let grad_x = node.backward(cache.as_ref().unwrap(), &grad_out, &mut grads).expect("backward");

    let mut max_rel_err: f64 = 0.0;
    let mut checked = 0usize;

    // Input gradient.
    let mut xp = x.clone();
    for i in 0..x.len() {
        let orig = xp.data()[i];
        xp.data_mut()[i] = orig + h;
        let plus = objective(node, &xp, mode, &cotangent);
        xp.data_mut()[i] = orig - h;
        let minus = objective(node, &xp, mode, &cotangent);
        xp.data_mut()[i] = orig;
        let numeric = (plus - minus) / (2.0 * h);
        max_rel_err = max_rel_err.max(rel_err(grad_x.data()[i], numeric));
        checked += 1;
    }

    // Parameter gradients, one tensor at a time.
    let mut param_names = Vec::new();
    node.visit_params(&mut |name, _, data| param_names.push((name.to_string(), data.len())));
    for (name, len) in param_names {
        let analytic = grads.get(&name).cloned().unwrap_or_else(|| vec![0.0; len]);
        for i in 0..len {
            nudge(node, &name, i, h);
            let plus = objective(node, x, mode, &cotangent);
            nudge(node, &name, i, -2.0 * h);
            let minus = objective(node, x, mode, &cotangent);
            nudge(node, &name, i, h);
            let numeric = (plus - minus) / (2.0 * h);
            max_rel_err = max_rel_err.max(rel_err(analytic[i], numeric));
            checked += 1;
        }
    }

    FdReport { max_rel_err, checked }
}

/// Random convolution configuration plus a matching input shape.
pub fn random_conv_f32(rng: &mut ChaCha8Rng) -> (Conv3<f32>, [usize; 5]) {
    let groups = [1usize, 1, 2][rng.random_range(0..3)];
    let cg = rng.random_range(1..=3);
    let og = rng.random_range(1..=3);
    let in_channels = cg * groups;
    let out_channels = og * groups;
    let kernel = Extent3::new(
        rng.random_range(1..=3),
        rng.random_range(1..=3),
        rng.random_range(1..=3),
    );
    let stride = Extent3::new(
        rng.random_range(1..=2),
        rng.random_range(1..=2),
        rng.random_range(1..=2),
    );
    let padding = Extent3::new(
        rng.random_range(0..=1),
        rng.random_range(0..=1),
        rng.random_range(0..=1),
    );
    let mut conv = Conv3::new(in_channels, out_channels, kernel, stride, padding, groups);
    for w in conv.weight.data_mut() {
        *w = rng.random_range(-1.0..1.0);
    }
    let shape = [
        rng.random_range(1..=2),
        in_channels,
        rng.random_range(kernel.d..=kernel.d + 3),
        rng.random_range(kernel.h..=kernel.h + 3),
        rng.random_range(kernel.w..=kernel.w + 3),
    ];
    (conv, shape)
}

/// Optimized conv path vs the nested-loop reference on `cases` random
/// configurations; relative tolerance 1e-4 in 32-bit.
pub fn conv_reference_agreement(cases: usize, seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for case in 0..cases {
        let (conv, shape) = random_conv_f32(&mut rng);
        let len: usize = shape.iter().product();
        let data: Vec<f32> = (0..len).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        let x = Tensor5::from_vec(shape, data).unwrap();
        let fast = conv.forward(&x).map_err(|e| e.to_string())?;
        let slow = conv.forward_naive(&x).map_err(|e| e.to_string())?;
        for (i, (&a, &b)) in fast.data().iter().zip(slow.data()).enumerate() {
            let rel = (a - b).abs() / a.abs().max(b.abs()).max(1.0);
            if rel > 1e-4 {
                return Err(format!("case {case}, element {i}: {a} vs {b}"));
            }
        }
    }
    Ok(())
}

pub fn random_tensor_f32(shape: [usize; 5], seed: u64) -> Tensor5<f32> {
    let src = random_tensor(shape, seed);
    let data: Vec<f32> = src.data().iter().map(|&v| v as f32).collect();
    Tensor5::from_vec(shape, data).unwrap()
}
