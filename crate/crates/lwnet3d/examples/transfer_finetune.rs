//! Transfer learning: pretrain on one scene, save a checkpoint, then
//! fine-tune on a second scene with a different class count. Every tensor
//! except the classifier is carried over.
//!
//! Run with: cargo run --example transfer_finetune

use lwnet3d::checkpoint::{fine_tune, save_checkpoint, Checkpoint, transfer_into};
use lwnet3d::data::{
    build_set, make_splits, normalize_scene, synth_scene, NormStats, SplitSpec, TestRule,
};
use lwnet3d::metrics::evaluate;
use lwnet3d::models::{build_model, Arch};
use lwnet3d::train::{train, LabeledSet, OptimizerConfig};

type Sets = (LabeledSet<f32>, LabeledSet<f32>, LabeledSet<f32>);

fn sets(classes: usize, hw: usize, seed: u64) -> Result<Sets, Box<dyn std::error::Error>> {
    let scene = synth_scene(classes, 16, hw, hw, 0.05, seed)?;
    let spec =
        SplitSpec { train_per_class: 20, val_per_class: 5, test_rule: TestRule::Remainder, seed };
    let (tr, va, te) = make_splits(&scene, &spec)?;
    let stats = NormStats::from_training_pixels(&scene, &tr)?;
    let scene = normalize_scene(&scene, &stats);
    Ok((build_set(&scene, &tr, 9)?, build_set(&scene, &va, 9)?, build_set(&scene, &te, 9)?))
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // Pretrain a 16-class source model and checkpoint it.
    let (src_train, src_val, _) = sets(16, 64, 11)?;
    let mut source = build_model(Arch::LwNet20, 16, 11)?;
    let cfg = OptimizerConfig { epochs: 6, seed: 11, ..OptimizerConfig::default() };
    train(&mut source, &src_train, &src_val, &cfg)?;
    let dir = tempfile::tempdir()?;
    let path = dir.path().join("source.lwck");
    save_checkpoint(&mut source, &path, 11, "pretrained on 16-class source scene")?;

    // Fine-tune on a 4-class target, reinitializing only the classifier.
    let (tgt_train, tgt_val, tgt_test) = sets(4, 32, 23)?;
    let ckpt = Checkpoint::load(&path)?;
    let mut target = build_model(Arch::LwNet20, 4, 23)?;
    let report = transfer_into(&mut target, &ckpt, Some("fc"))?;
    println!(
        "transferred {} tensors; reinitialized {:?}",
        report.transferred.len(),
        report.reinitialized
    );

    let ft_cfg = OptimizerConfig { epochs: 4, seed: 23, ..OptimizerConfig::default() };
    fine_tune(&mut target, &tgt_train, &tgt_val, &ft_cfg)?;
    let tuned = evaluate(&mut target, &tgt_test, 20)?.overall_accuracy;

    // Scratch baseline under the identical budget, for comparison.
    let mut scratch = build_model(Arch::LwNet20, 4, 23)?;
    train(&mut scratch, &tgt_train, &tgt_val, &ft_cfg)?;
    let cold = evaluate(&mut scratch, &tgt_test, 20)?.overall_accuracy;

    println!("fine-tuned test OA {tuned:.4}  vs scratch {cold:.4}");
    Ok(())
}
