//! Build a named architecture and print its per-layer parameter and MAC
//! accounting, in both counting modes.
//!
//! Run with: cargo run --example inspect_model

use lwnet3d::cost::{count_macs, count_params, CountMode};
use lwnet3d::models::{build_model, Arch};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut model = build_model::<f32>(Arch::LwNet20, 9, 0)?;

    let params = count_params(&model, CountMode::Paper);
    println!("{}", params.render());
    for stage in ["stem", "stage1", "stage2", "stage3", "stage4"] {
        println!("{stage:>7}: {} conv params", params.prefix_total(stage));
    }

    // MAC counts depend on the input volume: one 27x27 patch of a
    // 103-band scene, as used for the Pavia University dataset.
    let macs = count_macs(&mut model, [1, 1, 103, 27, 27], CountMode::Full)?;
    println!("\n{}", macs.render());
    Ok(())
}
