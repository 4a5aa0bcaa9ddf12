//! Scene file round trips: write and re-read the cube and label rasters,
//! cut a mirror-padded patch around a pixel, and lift an RGB image to a
//! band-replicated cube.
//!
//! Run with: cargo run --example scene_io

use lwnet3d::data::{extract_cube, inflate_rgb, synth_scene};
use lwnet3d::io::{read_hsc, read_hsl, write_hsc, write_hsl};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let scene = synth_scene(3, 12, 20, 20, 0.02, 1)?;
    let dir = tempfile::tempdir()?;
    let cube_path = dir.path().join("scene.hsc");
    let label_path = dir.path().join("labels.hsl");

    write_hsc(&cube_path, &scene)?;
    write_hsl(&label_path, &scene)?;
    let mut reread = read_hsc(&cube_path)?;
    read_hsl(&label_path, &mut reread)?;
    assert_eq!(reread.cube, scene.cube);
    assert_eq!(reread.labels, scene.labels);
    println!(
        "round trip ok: {}x{} scene, {} bands, {} labeled pixels",
        reread.height,
        reread.width,
        reread.bands,
        reread.labeled_positions().count()
    );

    // A corner patch exercises the mirror padding: indices reflect off the
    // scene border without repeating the edge pixel.
    let patch = extract_cube(&scene, 0, 0, 7)?;
    println!(
        "patch at (0, 0): size {}, class {}, {} values",
        patch.size,
        patch.label,
        patch.data.len()
    );

    // Inflate a tiny interleaved RGB image to 3*l spectral bands.
    let (h, w) = (4, 6);
    let rgb: Vec<f32> = (0..h * w * 3).map(|i| (i as f32) / (h * w * 3) as f32).collect();
    let lifted = inflate_rgb(h, w, &rgb, 12);
    println!("inflated RGB: {} bands over {}x{}", lifted.bands, lifted.height, lifted.width);
    Ok(())
}
