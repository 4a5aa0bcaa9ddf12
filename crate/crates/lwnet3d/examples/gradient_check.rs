//! Verify analytic gradients of a small convolution stack against central
//! finite differences in f64.
//!
//! Run with: cargo run --example gradient_check

use lwnet3d::graph::{Grads, Layer, Node};
use lwnet3d::layers::{BatchNorm3, Conv3, Mode};
use lwnet3d::tensor::{Extent3, Tensor5};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Scalar objective: a fixed linear functional of the network output, so
/// its gradient with respect to the output is a constant cotangent.
fn objective(y: &Tensor5<f64>) -> f64 {
    y.data().iter().enumerate().map(|(i, v)| v * ((i % 7) as f64 - 3.0)).sum()
}

fn cotangent(shape: [usize; 5]) -> Tensor5<f64> {
    let n: usize = shape.iter().product();
    Tensor5::from_vec(shape, (0..n).map(|i| (i % 7) as f64 - 3.0).collect()).unwrap()
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut conv = Conv3::new(2, 3, Extent3::cube(3), Extent3::new(2, 1, 1), Extent3::cube(1), 1);
    for w in conv.weight.data_mut() {
        *w = rng.random_range(-0.5..0.5);
    }
    let mut node = Node::seq(vec![
        Node::layer("conv", Layer::Conv3(conv)),
        Node::layer("bn", Layer::BatchNorm(BatchNorm3::new(3))),
        Node::layer("act", Layer::Relu),
    ]);

    let shape = [2, 2, 5, 4, 4];
    let n: usize = shape.iter().product();
    let x = Tensor5::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())?;

    // Analytic gradients from one cached forward and one backward pass.
    let (y, cache) = node.forward(&x, Mode::Train, true)?;
    let mut grads = Grads::new();
    let grad_x = node.backward(cache.as_ref().unwrap(), &cotangent(y.shape()), &mut grads)?;

    // Central finite differences over every input element.
    let h = 1e-5;
    let mut max_err = 0.0f64;
    for i in 0..n {
        let mut xp = x.clone();
        xp.data_mut()[i] += h;
        let mut xm = x.clone();
        xm.data_mut()[i] -= h;
        let fd = (objective(&node.forward(&xp, Mode::Train, false)?.0)
            - objective(&node.forward(&xm, Mode::Train, false)?.0))
            / (2.0 * h);
        let a = grad_x.data()[i];
        let err = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-4);
        max_err = max_err.max(err);
    }
    println!("input gradient: {n} elements, max relative error {max_err:.3e}");

    // The same comparison for every parameter of every layer.
    let names: Vec<String> = grads.keys().cloned().collect();
    for pname in names {
        let len = grads[&pname].len();
        let mut max_err = 0.0f64;
        for i in 0..len {
            let mut eval = |delta: f64| -> Result<f64, Box<dyn std::error::Error>> {
                node.visit_params(&mut |name, _, data| {
                    if name == pname {
                        data[i] += delta;
                    }
                });
                let v = objective(&node.forward(&x, Mode::Train, false)?.0);
                node.visit_params(&mut |name, _, data| {
                    if name == pname {
                        data[i] -= delta;
                    }
                });
                Ok(v)
            };
            let fd = (eval(h)? - eval(-h)?) / (2.0 * h);
            let a = grads[&pname][i];
            let err = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-4);
            max_err = max_err.max(err);
        }
        println!("{pname}: {len} elements, max relative error {max_err:.3e}");
    }
    Ok(())
}
