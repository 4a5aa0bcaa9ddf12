//! Central finite-difference verification of every layer's backward
//! pass, and of a miniature end-to-end model.

mod common;

use common::{fd_check, random_tensor, random_vec};
use lwnet3d::graph::{Layer, Node};
use lwnet3d::layers::{AvgPool3, BatchNorm3, Conv3, Linear, MaxPool3, Mode};
use lwnet3d::models::{build_custom, ModelSpec};
use lwnet3d::tensor::Extent3;

const H: f64 = 1e-5;
const LAYER_TOL: f64 = 1e-6;
const MODEL_TOL: f64 = 1e-5;

/// Give every parameter a nonzero random value so gradients are not
/// trivially zero.
fn randomize(node: &mut Node<f64>, seed: u64) {
    let mut counter = seed;
    node.visit_params(&mut |_, _, data| {
        let vals = random_vec(data.len(), counter);
        for (d, v) in data.iter_mut().zip(vals) {
            *d = 0.3 * v;
        }
        counter += 1;
    });
}

fn check_layer(mut node: Node<f64>, in_shape: [usize; 5], mode: Mode, seed: u64) {
    randomize(&mut node, seed);
    let x = random_tensor(in_shape, seed ^ 0x5EED);
    let report = fd_check(&mut node, &x, mode, H);
    assert!(
        report.max_rel_err < LAYER_TOL,
        "max relative error {} over {} entries",
        report.max_rel_err,
        report.checked
    );
}

#[test]
fn conv_plain() {
    let conv = Conv3::<f64>::new(2, 3, Extent3::new(2, 3, 3), Extent3::cube(1), Extent3::cube(0), 1);
    check_layer(Node::layer("conv", Layer::Conv3(conv)), [2, 2, 4, 5, 5], Mode::Train, 1);
}

#[test]
fn conv_strided_padded() {
    let conv = Conv3::<f64>::new(3, 4, Extent3::cube(3), Extent3::cube(2), Extent3::cube(1), 1);
    check_layer(Node::layer("conv", Layer::Conv3(conv)), [1, 3, 5, 5, 5], Mode::Train, 2);
}

#[test]
fn conv_depthwise() {
    let conv = Conv3::<f64>::new(4, 4, Extent3::cube(3), Extent3::cube(1), Extent3::cube(1), 4);
    check_layer(Node::layer("conv", Layer::Conv3(conv)), [2, 4, 3, 4, 4], Mode::Train, 3);
}

#[test]
fn conv_pointwise() {
    let conv = Conv3::<f64>::new(3, 6, Extent3::cube(1), Extent3::cube(1), Extent3::cube(0), 1);
    check_layer(Node::layer("conv", Layer::Conv3(conv)), [2, 3, 3, 3, 3], Mode::Train, 4);
}

#[test]
fn conv_grouped() {
    let conv = Conv3::<f64>::new(4, 6, Extent3::new(2, 2, 2), Extent3::cube(1), Extent3::cube(0), 2);
    check_layer(Node::layer("conv", Layer::Conv3(conv)), [2, 4, 3, 4, 4], Mode::Train, 5);
}

#[test]
fn batchnorm_train_mode() {
    let bn = BatchNorm3::<f64>::new(3);
    check_layer(Node::layer("bn", Layer::BatchNorm(bn)), [2, 3, 2, 3, 3], Mode::Train, 6);
}

#[test]
fn batchnorm_eval_mode() {
    let mut bn = BatchNorm3::<f64>::new(3);
    // Non-trivial running statistics.
    bn.running_mean = vec![0.2, -0.4, 0.1];
    bn.running_var = vec![1.5, 0.7, 2.0];
    check_layer(Node::layer("bn", Layer::BatchNorm(bn)), [2, 3, 2, 3, 3], Mode::Eval, 7);
}

#[test]
fn relu() {
    check_layer(Node::layer("relu", Layer::Relu), [2, 3, 3, 3, 3], Mode::Train, 8);
}

#[test]
fn maxpool() {
    let pool = MaxPool3 { kernel: Extent3::cube(3), stride: Extent3::cube(2) };
    check_layer(Node::layer("pool", Layer::MaxPool(pool)), [2, 2, 5, 5, 5], Mode::Train, 9);
}

#[test]
fn avgpool_floor_and_ceil() {
    let floor = AvgPool3 { kernel: Extent3::cube(2), stride: Extent3::cube(2), ceil_mode: false };
    check_layer(Node::layer("pool", Layer::AvgPool(floor)), [2, 2, 4, 4, 4], Mode::Train, 10);
    // Odd extents exercise the truncated boundary windows.
    let ceil = AvgPool3 { kernel: Extent3::cube(2), stride: Extent3::cube(2), ceil_mode: true };
    check_layer(Node::layer("pool", Layer::AvgPool(ceil)), [2, 2, 5, 3, 5], Mode::Train, 11);
}

#[test]
fn adaptive_avgpool() {
    check_layer(Node::layer("pool", Layer::AdaptiveAvgPool), [2, 3, 2, 4, 4], Mode::Train, 12);
}

#[test]
fn linear() {
    let lin = Linear::<f64>::new(6, 4);
    check_layer(Node::layer("fc", Layer::Linear(lin)), [3, 6, 1, 1, 1], Mode::Train, 13);
}

#[test]
fn log_softmax() {
    check_layer(Node::layer("ls", Layer::LogSoftmax), [3, 5, 1, 1, 1], Mode::Train, 14);
}

#[test]
fn residual_branch_with_post_relu() {
    let main = Node::seq(vec![
        Node::layer(
            "conv",
            Layer::Conv3(Conv3::<f64>::new(
                2,
                2,
                Extent3::cube(3),
                Extent3::cube(1),
                Extent3::cube(1),
                1,
            )),
        ),
        Node::layer("bn", Layer::BatchNorm(BatchNorm3::new(2))),
    ]);
    let node = Node::Residual {
        main: Box::new(main),
        shortcut: Box::new(Node::seq(vec![])),
        post_relu: true,
    };
    check_layer(node, [2, 2, 3, 4, 4], Mode::Train, 15);
}

/// Whole miniature model, stem through log-softmax, in eval mode (the
/// deepest stage sees a single spectral-spatial position, where
/// train-mode batch statistics are undefined).
#[test]
fn end_to_end_miniature_model() {
    let mut model = build_custom::<f64>(ModelSpec::miniature(), "lwnet20", 3, 21).unwrap();
    // Move BN running statistics off their initialization so eval mode
    // exercises nontrivial scaling.
    let mut counter = 100u64;
    model.root.visit_state(&mut |name, _, data| {
        let vals = random_vec(data.len(), counter);
        if name.ends_with(".running_mean") {
            for (d, v) in data.iter_mut().zip(vals) {
                *d = 0.1 * v;
            }
            counter += 1;
        } else if name.ends_with(".running_var") {
            for (d, v) in data.iter_mut().zip(vals) {
                *d = 1.0 + 0.2 * v.abs();
            }
            counter += 1;
        }
    });
    let x = random_tensor([1, 1, 16, 9, 9], 99);
    let report = fd_check(&mut model.root, &x, Mode::Eval, H);
    assert!(
        report.max_rel_err < MODEL_TOL,
        "max relative error {} over {} entries",
        report.max_rel_err,
        report.checked
    );
}
