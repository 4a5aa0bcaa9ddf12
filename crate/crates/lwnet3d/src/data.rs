//! Scene ingestion, cube extraction, split management, normalization,
//! RGB inflation, and synthetic scene generation.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::scalar::Scalar;
use crate::train::LabeledSet;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("window size must be odd, got {0}")]
    EvenWindow(usize),
    #[error("center pixel ({0}, {1}) is unlabeled")]
    UnlabeledCenter(usize, usize),
    #[error("position ({0}, {1}) outside scene")]
    OutOfScene(usize, usize),
    #[error("class {class} has only {available} labeled pixels, {requested} requested")]
    InsufficientPixels { class: usize, available: usize, requested: usize },
    #[error("band {0} has zero standard deviation")]
    DegenerateBand(usize),
    #[error("degenerate scene extents")]
    DegenerateExtents,
    #[error("scene needs >= 2 classes and >= 8 bands, got {classes} / {bands}")]
    TooSmall { classes: usize, bands: usize },
}

/// A (height x width x bands) radiance cube with an integer label
/// raster. Label 0 means unlabeled. Storage is band-major: band, then
/// row, then column.
#[derive(Debug, Clone, PartialEq)]
pub struct HsiScene {
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    pub cube: Vec<f32>,
    pub labels: Vec<u16>,
    pub class_names: Option<Vec<String>>,
}

impl HsiScene {
    #[inline]
    pub fn value(&self, band: usize, row: usize, col: usize) -> f32 {
        self.cube[(band * self.height + row) * self.width + col]
    }

    #[inline]
    pub fn label(&self, row: usize, col: usize) -> u16 {
        self.labels[row * self.width + col]
    }

    /// Highest label id present.
    pub fn num_classes(&self) -> usize {
        self.labels.iter().copied().max().unwrap_or(0) as usize
    }

    pub fn labeled_positions(&self) -> impl Iterator<Item = (usize, usize, u16)> + '_ {
        (0..self.height).flat_map(move |r| {
            (0..self.width).filter_map(move |c| {
                let l = self.label(r, c);
                (l != 0).then_some((r, c, l))
            })
        })
    }
}

/// One S x S x L sample; class label is the center pixel's.
#[derive(Debug, Clone)]
pub struct SampleCube {
    /// Flat (L, S, S) data, band-major.
    pub data: Vec<f32>,
    pub bands: usize,
    pub size: usize,
    pub label: usize,
    pub origin: (usize, usize),
}

/// Mirror reflection at the border, without repeating the edge sample.
fn reflect(mut i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    loop {
        if i < 0 {
            i = -i;
        } else if i >= n {
            i = 2 * n - 2 - i;
        } else {
            return i as usize;
        }
    }
}

/// Extract the S x S window centered at (row, col) across all bands,
/// mirror-padding outside the scene.
pub fn extract_cube(
    scene: &HsiScene,
    row: usize,
    col: usize,
    size: usize,
) -> Result<SampleCube, DataError> {
    if size % 2 == 0 {
        return Err(DataError::EvenWindow(size));
    }
    if row >= scene.height || col >= scene.width {
        return Err(DataError::OutOfScene(row, col));
    }
    let label = scene.label(row, col);
    if label == 0 {
        return Err(DataError::UnlabeledCenter(row, col));
    }
    let half = (size / 2) as isize;
    let mut data = Vec::with_capacity(scene.bands * size * size);
    for band in 0..scene.bands {
        for dr in -half..=half {
            let r = reflect(row as isize + dr, scene.height);
            for dc in -half..=half {
                let c = reflect(col as isize + dc, scene.width);
                data.push(scene.value(band, r, c));
            }
        }
    }
    Ok(SampleCube { data, bands: scene.bands, size, label: label as usize, origin: (row, col) })
}

/// How many test pixels each class contributes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TestRule {
    /// Every labeled pixel not drawn for train/val.
    Remainder,
    /// A fixed per-class count.
    Explicit(usize),
}

/// Per-class split sizes and the sampling seed.
#[derive(Debug, Clone)]
pub struct SplitSpec {
    pub train_per_class: usize,
    pub val_per_class: usize,
    pub test_rule: TestRule,
    pub seed: u64,
}

/// (row, col, class) triples of one split.
pub type SplitList = Vec<(usize, usize, u16)>;

/// Seeded per-class sampling without replacement into disjoint
/// train/val/test lists.
pub fn make_splits(
    scene: &HsiScene,
    spec: &SplitSpec,
) -> Result<(SplitList, SplitList, SplitList), DataError> {
    let classes = scene.num_classes();
    let mut train = Vec::new();
    let mut val = Vec::new();
    let mut test = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    for class in 1..=classes as u16 {
        let mut positions: Vec<(usize, usize, u16)> =
            scene.labeled_positions().filter(|&(_, _, l)| l == class).collect();
        let needed = spec.train_per_class
            + spec.val_per_class
            + match spec.test_rule {
                TestRule::Remainder => 0,
                TestRule::Explicit(n) => n,
            };
        if positions.len() < needed {
            return Err(DataError::InsufficientPixels {
                class: class as usize,
                available: positions.len(),
                requested: needed,
            });
        }
        positions.shuffle(&mut rng);
        let mut it = positions.into_iter();
        train.extend(it.by_ref().take(spec.train_per_class));
        val.extend(it.by_ref().take(spec.val_per_class));
        match spec.test_rule {
            TestRule::Remainder => test.extend(it),
            TestRule::Explicit(n) => test.extend(it.take(n)),
        }
    }
    Ok((train, val, test))
}

/// Per-band mean and population standard deviation, computed on the
/// training pixels only.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    pub fn from_training_pixels(scene: &HsiScene, train: &SplitList) -> Result<Self, DataError> {
        let n = train.len() as f64;
        let mut mean = vec![0.0; scene.bands];
        let mut std = vec![0.0; scene.bands];
        for band in 0..scene.bands {
            let mut acc = 0.0;
            for &(r, c, _) in train {
                acc += scene.value(band, r, c) as f64;
            }
            mean[band] = acc / n;
            let mut var = 0.0;
            for &(r, c, _) in train {
                let dev = scene.value(band, r, c) as f64 - mean[band];
                var += dev * dev;
            }
            std[band] = (var / n).sqrt();
            if std[band] <= 0.0 {
                return Err(DataError::DegenerateBand(band));
            }
        }
        Ok(NormStats { mean, std })
    }
}

/// Standardize a whole scene per band: (x - mean) / std.
pub fn normalize_scene(scene: &HsiScene, stats: &NormStats) -> HsiScene {
    let mut out = scene.clone();
    for band in 0..scene.bands {
        let m = stats.mean[band] as f32;
        let s = stats.std[band] as f32;
        let plane = &mut out.cube[band * scene.height * scene.width..(band + 1) * scene.height * scene.width];
        for v in plane {
            *v = (*v - m) / s;
        }
    }
    out
}

/// Extract and assemble a split into a model-ready set. Labels are
/// shifted to 0-based class indices.
pub fn build_set<T: Scalar>(
    scene: &HsiScene,
    split: &SplitList,
    size: usize,
) -> Result<LabeledSet<T>, DataError> {
    let mut cubes = Vec::with_capacity(split.len());
    let mut labels = Vec::with_capacity(split.len());
    for &(r, c, _) in split {
        let cube = extract_cube(scene, r, c, size)?;
        cubes.push(cube.data.iter().map(|&v| T::of_f64(v as f64)).collect());
        labels.push(cube.label - 1);
    }
    Ok(LabeledSet { bands: scene.bands, size, cubes, labels })
}

/// Repeat the three channels of an RGB image l times along the band
/// axis: band k of the output is channel k mod 3.
pub fn inflate_rgb(height: usize, width: usize, rgb: &[f32], l: usize) -> HsiScene {
    assert_eq!(rgb.len(), height * width * 3, "rgb data must be (h, w, 3) interleaved");
    let bands = 3 * l;
    let mut cube = vec![0.0f32; bands * height * width];
    for band in 0..bands {
        let ch = band % 3;
        let plane = &mut cube[band * height * width..(band + 1) * height * width];
        for (i, v) in plane.iter_mut().enumerate() {
            *v = rgb[i * 3 + ch];
        }
    }
    HsiScene { height, width, bands, cube, labels: vec![0; height * width], class_names: None }
}

/// Generate a fully labeled synthetic scene: class signatures are random
/// mixtures of Gaussian bumps over the band axis, the label raster is the
/// Voronoi partition of seeded sites, and pixel spectra are the class
/// signature plus white noise.
pub fn synth_scene(
    classes: usize,
    bands: usize,
    height: usize,
    width: usize,
    noise: f64,
    seed: u64,
) -> Result<HsiScene, DataError> {
    if height == 0 || width == 0 {
        return Err(DataError::DegenerateExtents);
    }
    if classes < 2 || bands < 8 {
        return Err(DataError::TooSmall { classes, bands });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut signatures = vec![vec![0.0f64; bands]; classes];
    for sig in &mut signatures {
        for _ in 0..3 {
            let amp: f64 = rng.random_range(0.5..1.5);
            let center: f64 = rng.random_range(0.0..bands as f64);
            let widthb: f64 = rng.random_range(bands as f64 / 16.0..bands as f64 / 4.0);
            for (b, v) in sig.iter_mut().enumerate() {
                let z = (b as f64 - center) / widthb;
                *v += amp * (-0.5 * z * z).exp();
            }
        }
    }

    let sites: Vec<(f64, f64)> = (0..classes)
        .map(|_| (rng.random_range(0.0..height as f64), rng.random_range(0.0..width as f64)))
        .collect();
    let mut labels = vec![0u16; height * width];
    for r in 0..height {
        for c in 0..width {
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for (i, &(sr, sc)) in sites.iter().enumerate() {
                let d = (r as f64 - sr).powi(2) + (c as f64 - sc).powi(2);
                if d < best_d {
                    best_d = d;
                    best = i;
                }
            }
            labels[r * width + c] = (best + 1) as u16;
        }
    }

    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut cube = vec![0.0f32; bands * height * width];
    // Band-major fill keeps the noise draw order independent of layout
    // concerns: one draw per (band, row, col).
    for band in 0..bands {
        for r in 0..height {
            for c in 0..width {
                let class = (labels[r * width + c] - 1) as usize;
                let v = signatures[class][band] + noise * normal.sample(&mut rng);
                cube[(band * height + r) * width + c] = v as f32;
            }
        }
    }
    Ok(HsiScene { height, width, bands, cube, labels, class_names: None })
}

/// Brute-force nearest-centroid spectral classifier; independent oracle
/// for scene separability.
pub fn nearest_centroid_oa(scene: &HsiScene) -> f64 {
    let classes = scene.num_classes();
    let mut centroids = vec![vec![0.0f64; scene.bands]; classes];
    let mut counts = vec![0usize; classes];
    for (r, c, l) in scene.labeled_positions() {
        let k = (l - 1) as usize;
        counts[k] += 1;
        for band in 0..scene.bands {
            centroids[k][band] += scene.value(band, r, c) as f64;
        }
    }
    for (centroid, &count) in centroids.iter_mut().zip(&counts) {
        for v in centroid.iter_mut() {
            *v /= count as f64;
        }
    }
    let mut correct = 0usize;
    let mut total = 0usize;
    for (r, c, l) in scene.labeled_positions() {
        let mut best = 0usize;
        let mut best_d = f64::INFINITY;
        for (k, centroid) in centroids.iter().enumerate() {
            let mut d = 0.0;
            for band in 0..scene.bands {
                let dev = scene.value(band, r, c) as f64 - centroid[band];
                d += dev * dev;
            }
            if d < best_d {
                best_d = d;
                best = k;
            }
        }
        total += 1;
        if best == (l - 1) as usize {
            correct += 1;
        }
    }
    correct as f64 / total as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_scene() -> HsiScene {
        // 4x4, 2 bands, all labeled class 1 except (0,0) class 2.
        let height = 4;
        let width = 4;
        let bands = 2;
        let mut cube = vec![0.0f32; bands * height * width];
        for (i, v) in cube.iter_mut().enumerate() {
            *v = i as f32;
        }
        let mut labels = vec![1u16; height * width];
        labels[0] = 2;
        HsiScene { height, width, bands, cube, labels, class_names: None }
    }

    #[test]
    fn interior_extraction_is_raw_neighborhood() {
        let scene = toy_scene();
        let cube = extract_cube(&scene, 1, 1, 3).unwrap();
        for band in 0..2 {
            for dr in 0..3usize {
                for dc in 0..3usize {
                    assert_eq!(
                        cube.data[(band * 3 + dr) * 3 + dc],
                        scene.value(band, dr, dc)
                    );
                }
            }
        }
    }

    #[test]
    fn corner_extraction_keeps_exact_center() {
        let scene = toy_scene();
        let cube = extract_cube(&scene, 0, 0, 3).unwrap();
        for band in 0..2 {
            assert_eq!(cube.data[(band * 3 + 1) * 3 + 1], scene.value(band, 0, 0));
        }
        // Mirror reflection: position (-1, -1) maps to (1, 1).
        assert_eq!(cube.data[0], scene.value(0, 1, 1));
    }

    #[test]
    fn constant_scene_gives_constant_cube() {
        let mut scene = toy_scene();
        scene.cube.fill(3.5);
        let cube = extract_cube(&scene, 0, 3, 5).unwrap();
        assert!(cube.data.iter().all(|&v| v == 3.5));
    }

    #[test]
    fn extraction_errors() {
        let mut scene = toy_scene();
        assert!(matches!(extract_cube(&scene, 1, 1, 4), Err(DataError::EvenWindow(4))));
        scene.labels[5] = 0;
        assert!(matches!(extract_cube(&scene, 1, 1, 3), Err(DataError::UnlabeledCenter(1, 1))));
    }

    #[test]
    fn splits_disjoint_and_deterministic() {
        let scene = synth_scene(3, 8, 16, 16, 0.1, 5).unwrap();
        let spec = SplitSpec { train_per_class: 4, val_per_class: 2, test_rule: TestRule::Remainder, seed: 9 };
        let (tr, va, te) = make_splits(&scene, &spec).unwrap();
        assert_eq!(tr.len(), 12);
        assert_eq!(va.len(), 6);
        assert_eq!(tr.len() + va.len() + te.len(), 256);
        let mut all: Vec<_> = tr.iter().chain(&va).chain(&te).map(|&(r, c, _)| (r, c)).collect();
        all.sort();
        all.dedup();
        assert_eq!(all.len(), 256);

        let (tr2, va2, te2) = make_splits(&scene, &spec).unwrap();
        assert_eq!((tr, va, te), (tr2, va2, te2));
    }

    #[test]
    fn zero_validation_split_is_empty() {
        let scene = synth_scene(2, 8, 8, 8, 0.0, 1).unwrap();
        let spec = SplitSpec { train_per_class: 2, val_per_class: 0, test_rule: TestRule::Remainder, seed: 0 };
        let (_, va, _) = make_splits(&scene, &spec).unwrap();
        assert!(va.is_empty());
    }

    #[test]
    fn normalization_hand_computed() {
        // Single band, three training pixels valued 2, 4, 6.
        let scene = HsiScene {
            height: 1,
            width: 3,
            bands: 1,
            cube: vec![2.0, 4.0, 6.0],
            labels: vec![1, 1, 1],
            class_names: None,
        };
        let train: SplitList = vec![(0, 0, 1), (0, 1, 1), (0, 2, 1)];
        let stats = NormStats::from_training_pixels(&scene, &train).unwrap();
        let normed = normalize_scene(&scene, &stats);
        assert!((normed.cube[0] + 1.2247).abs() < 1e-4);
        assert!(normed.cube[1].abs() < 1e-6);
        assert!((normed.cube[2] - 1.2247).abs() < 1e-4);
    }

    #[test]
    fn normalization_shift_invariant_and_invertible() {
        let scene = synth_scene(2, 8, 8, 8, 0.1, 3).unwrap();
        let train: SplitList = scene.labeled_positions().collect();
        let stats = NormStats::from_training_pixels(&scene, &train).unwrap();
        let normed = normalize_scene(&scene, &stats);

        let mut shifted = scene.clone();
        for v in &mut shifted.cube {
            *v += 5.0;
        }
        let stats2 = NormStats::from_training_pixels(&shifted, &train).unwrap();
        let normed2 = normalize_scene(&shifted, &stats2);
        for (a, b) in normed.cube.iter().zip(&normed2.cube) {
            assert!((a - b).abs() < 1e-4);
        }

        // De-standardize recovers inputs.
        for band in 0..scene.bands {
            for i in 0..64 {
                let n = normed.cube[band * 64 + i] as f64;
                let back = n * stats.std[band] + stats.mean[band];
                let orig = scene.cube[band * 64 + i] as f64;
                assert!((back - orig).abs() <= 1e-5 * orig.abs().max(1.0));
            }
        }

        let mut flat = scene.clone();
        flat.cube.fill(1.0);
        assert!(NormStats::from_training_pixels(&flat, &train).is_err());
    }

    #[test]
    fn inflation_periodicity() {
        let rgb: Vec<f32> = (0..32 * 32 * 3).map(|i| i as f32).collect();
        let scene = inflate_rgb(32, 32, &rgb, 12);
        assert_eq!(scene.bands, 36);
        for k in 0..36 {
            for i in 0..32 * 32 {
                assert_eq!(scene.cube[k * 32 * 32 + i], rgb[i * 3 + k % 3]);
            }
        }
        let id = inflate_rgb(32, 32, &rgb, 1);
        assert_eq!(id.bands, 3);
        for i in 0..32 * 32 {
            assert_eq!(id.cube[32 * 32 + i], rgb[i * 3 + 1]);
        }
    }

    #[test]
    fn synth_scene_properties() {
        let clean = synth_scene(3, 16, 12, 12, 0.0, 11).unwrap();
        // Zero noise: all pixels of a class share one spectrum.
        for band in 0..clean.bands {
            let mut by_class = std::collections::HashMap::new();
            for (r, c, l) in clean.labeled_positions() {
                let v = clean.value(band, r, c);
                let entry = by_class.entry(l).or_insert(v);
                assert_eq!(*entry, v);
            }
        }
        let again = synth_scene(3, 16, 12, 12, 0.0, 11).unwrap();
        assert_eq!(clean, again);
    }

    #[test]
    fn acceptance_scene_is_separable() {
        let scene = synth_scene(4, 16, 48, 48, 0.05, 0).unwrap();
        assert!(nearest_centroid_oa(&scene) >= 0.99);
    }
}
