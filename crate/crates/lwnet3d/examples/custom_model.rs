//! Assemble a reduced-width network from an explicit stage layout, run a
//! forward pass, and trace the shape through each top-level piece.
//!
//! Run with: cargo run --example custom_model

use lwnet3d::layers::Mode;
use lwnet3d::models::{build_custom, ModelSpec};
use lwnet3d::tensor::Tensor5;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // Half-width variant of the 20-layer network: one residual unit per
    // stage, 4-channel stem, stage widths 4/8/16/32.
    let spec = ModelSpec::miniature();
    let mut model = build_custom::<f32>(spec, "lwnet-mini", 5, 3)?;

    let input_shape = [2, 1, 32, 9, 9];
    println!("input: {input_shape:?}");
    println!("output: {:?}", model.root.out_shape(input_shape)?);

    let mut layers = 0usize;
    model.root.visit_layers(&mut |_, _| layers += 1);
    println!("layers: {layers}");

    let n: usize = input_shape.iter().product();
    let x = Tensor5::from_vec(input_shape, (0..n).map(|i| (i as f32 * 0.37).sin()).collect())?;
    let (y, _) = model.root.forward(&x, Mode::Eval, false)?;
    println!("forward output shape: {:?}", y.shape());
    for row in 0..y.shape()[0] {
        let probs: Vec<f32> =
            y.data()[row * 5..(row + 1) * 5].iter().map(|l| l.exp()).collect();
        println!("sample {row}: class probabilities {probs:?} (sum {:.6})", probs.iter().sum::<f32>());
    }
    Ok(())
}
