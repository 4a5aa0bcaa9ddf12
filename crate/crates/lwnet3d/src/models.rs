//! Whole-network assembly: the lightweight network and the ten 3-D
//! residual baselines, built from a declarative per-stage description.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::graph::{Cache, Grads, Layer, Node};
use crate::layers::{AvgPool3, BatchNorm3, Conv3, LayerError, Linear, MaxPool3, Mode};
use crate::scalar::Scalar;
use crate::tensor::{Extent3, Tensor5};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("unknown architecture {0:?}")]
    UnknownArch(String),
    #[error("num_classes must be >= 2, got {0}")]
    TooFewClasses(usize),
    #[error("invalid unit config: {0}")]
    BadUnitConfig(String),
    #[error(transparent)]
    Layer(#[from] LayerError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arch {
    LwNet20,
    ResNet10,
    ResNet14a,
    ResNet18,
    ResNet34,
    ResNet38,
    ResNet14b,
    ResNet20,
    ResNet26,
    ResNet50,
    ResNet56,
}

impl Arch {
    pub const ALL: [Arch; 11] = [
        Arch::LwNet20,
        Arch::ResNet10,
        Arch::ResNet14a,
        Arch::ResNet18,
        Arch::ResNet34,
        Arch::ResNet38,
        Arch::ResNet14b,
        Arch::ResNet20,
        Arch::ResNet26,
        Arch::ResNet50,
        Arch::ResNet56,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Arch::LwNet20 => "lwnet20",
            Arch::ResNet10 => "resnet10",
            Arch::ResNet14a => "resnet14a",
            Arch::ResNet18 => "resnet18",
            Arch::ResNet34 => "resnet34",
            Arch::ResNet38 => "resnet38",
            Arch::ResNet14b => "resnet14b",
            Arch::ResNet20 => "resnet20",
            Arch::ResNet26 => "resnet26",
            Arch::ResNet50 => "resnet50",
            Arch::ResNet56 => "resnet56",
        }
    }

    pub fn spec(&self) -> ModelSpec {
        let (kind, blocks) = match self {
            Arch::LwNet20 => (BlockKind::Lw, [1, 2, 2, 1]),
            Arch::ResNet10 => (BlockKind::Basic, [1, 1, 1, 1]),
            Arch::ResNet14a => (BlockKind::Basic, [1, 2, 2, 1]),
            Arch::ResNet18 => (BlockKind::Basic, [2, 2, 2, 2]),
            Arch::ResNet34 => (BlockKind::Basic, [3, 4, 6, 3]),
            Arch::ResNet38 => (BlockKind::Basic, [3, 5, 7, 3]),
            Arch::ResNet14b => (BlockKind::Bottleneck, [1, 1, 1, 1]),
            Arch::ResNet20 => (BlockKind::Bottleneck, [1, 2, 2, 1]),
            Arch::ResNet26 => (BlockKind::Bottleneck, [2, 2, 2, 2]),
            Arch::ResNet50 => (BlockKind::Bottleneck, [3, 4, 6, 3]),
            Arch::ResNet56 => (BlockKind::Bottleneck, [3, 5, 7, 3]),
        };
        ModelSpec { kind, blocks, ..ModelSpec::default() }
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Arch {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Arch::ALL
            .iter()
            .find(|a| a.as_str() == s)
            .copied()
            .ok_or_else(|| ModelError::UnknownArch(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    Basic,
    Bottleneck,
    Lw,
}

/// Declarative stage layout from which both the runnable network and the
/// cost report are built.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub kind: BlockKind,
    pub blocks: [usize; 4],
    pub stem_width: usize,
    /// Per-stage widths; inner widths for bottleneck stages.
    pub widths: [usize; 4],
    /// Channel expansion inside an LW unit, as a multiple of the unit's
    /// output width.
    pub expansion: usize,
    pub stem_kernel: Extent3,
    pub maxpool_kernel: Extent3,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            kind: BlockKind::Lw,
            blocks: [1, 2, 2, 1],
            stem_width: 32,
            widths: [32, 64, 128, 256],
            expansion: 4,
            stem_kernel: Extent3::new(8, 3, 3),
            maxpool_kernel: Extent3::cube(3),
        }
    }
}

impl ModelSpec {
    /// Width of the feature vector entering the classifier.
    pub fn feature_width(&self) -> usize {
        match self.kind {
            BlockKind::Bottleneck => self.widths[3] * 4,
            _ => self.widths[3],
        }
    }

    /// Desk-scale stand-in used by the whole-model gradient checks.
    pub fn miniature() -> Self {
        ModelSpec {
            blocks: [1, 1, 1, 1],
            stem_width: 4,
            widths: [4, 8, 16, 32],
            ..ModelSpec::default()
        }
    }
}

/// Configuration of one LW unit.
#[derive(Debug, Clone, Copy)]
pub struct LwUnitConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    pub expansion: usize,
    pub stride: usize,
}

impl LwUnitConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        match self.stride {
            1 if self.in_channels != self.out_channels => Err(ModelError::BadUnitConfig(format!(
                "stride-1 unit needs in == out, got {} -> {}",
                self.in_channels, self.out_channels
            ))),
            2 if self.out_channels != 2 * self.in_channels => {
                Err(ModelError::BadUnitConfig(format!(
                    "stride-2 unit needs out == 2*in, got {} -> {}",
                    self.in_channels, self.out_channels
                )))
            }
            1 | 2 => Ok(()),
            s => Err(ModelError::BadUnitConfig(format!("stride must be 1 or 2, got {s}"))),
        }
    }
}

/// Seeded weight initializer shared by all builders.
pub struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    pub fn new(seed: u64) -> Self {
        Init { rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    /// Zero-mean Gaussian with std sqrt(2 / fan_in).
    fn fill<T: Scalar>(&mut self, fan_in: usize, data: &mut [T]) {
        let normal = Normal::new(0.0f64, (2.0 / fan_in as f64).sqrt()).expect("normal params");
        for v in data {
            *v = T::of_f64(normal.sample(&mut self.rng));
        }
    }

    fn conv<T: Scalar>(
        &mut self,
        in_ch: usize,
        out_ch: usize,
        kernel: Extent3,
        stride: Extent3,
        padding: Extent3,
        groups: usize,
    ) -> Conv3<T> {
        let mut conv = Conv3::new(in_ch, out_ch, kernel, stride, padding, groups);
        let fan_in = (in_ch / groups) * kernel.volume();
        self.fill(fan_in, conv.weight.data_mut());
        conv
    }

    fn linear<T: Scalar>(&mut self, in_features: usize, out_features: usize) -> Linear<T> {
        let mut lin = Linear::new(in_features, out_features);
        self.fill(in_features, &mut lin.weight);
        lin
    }
}

fn pointwise<T: Scalar>(init: &mut Init, name: &str, in_ch: usize, out_ch: usize) -> Node<T> {
    Node::layer(
        name,
        Layer::Conv3(init.conv(in_ch, out_ch, Extent3::cube(1), Extent3::cube(1), Extent3::cube(0), 1)),
    )
}

fn bn<T: Scalar>(name: &str, channels: usize) -> Node<T> {
    Node::layer(name, Layer::BatchNorm(BatchNorm3::new(channels)))
}

fn relu<T: Scalar>(name: &str) -> Node<T> {
    Node::layer(name, Layer::Relu)
}

/// Pointwise expand, 3x3x3 depthwise (stride-carrying), pointwise
/// project, each batch-normalized; summed with an identity or pooled
/// projection shortcut. No activation after the sum.
pub fn lw_unit<T: Scalar>(
    cfg: LwUnitConfig,
    prefix: &str,
    init: &mut Init,
) -> Result<Node<T>, ModelError> {
    cfg.validate()?;
    let expanded = cfg.expansion * cfg.out_channels;
    let stride = Extent3::cube(cfg.stride);
    let main = Node::seq(vec![
        pointwise(init, &format!("{prefix}.pw1"), cfg.in_channels, expanded),
        bn(&format!("{prefix}.bn1"), expanded),
        relu(&format!("{prefix}.relu1")),
        Node::layer(
            format!("{prefix}.dw"),
            Layer::Conv3(init.conv(
                expanded,
                expanded,
                Extent3::cube(3),
                stride,
                Extent3::cube(1),
                expanded,
            )),
        ),
        bn(&format!("{prefix}.bn2"), expanded),
        relu(&format!("{prefix}.relu2")),
        pointwise(init, &format!("{prefix}.pw2"), expanded, cfg.out_channels),
        bn(&format!("{prefix}.bn3"), cfg.out_channels),
    ]);
    let shortcut = if cfg.stride == 1 {
        Node::seq(vec![])
    } else {
        Node::seq(vec![
            Node::layer(
                format!("{prefix}.shortcut.pool"),
                Layer::AvgPool(AvgPool3 {
                    kernel: Extent3::cube(2),
                    stride: Extent3::cube(2),
                    ceil_mode: true,
                }),
            ),
            pointwise(init, &format!("{prefix}.shortcut.conv"), cfg.in_channels, cfg.out_channels),
            bn(&format!("{prefix}.shortcut.bn"), cfg.out_channels),
        ])
    };
    Ok(Node::Residual { main: Box::new(main), shortcut: Box::new(shortcut), post_relu: false })
}

fn projection_shortcut<T: Scalar>(
    init: &mut Init,
    prefix: &str,
    in_ch: usize,
    out_ch: usize,
    stride: usize,
) -> Node<T> {
    if stride == 1 && in_ch == out_ch {
        Node::seq(vec![])
    } else {
        Node::seq(vec![
            Node::layer(
                format!("{prefix}.shortcut.conv"),
                Layer::Conv3(init.conv(
                    in_ch,
                    out_ch,
                    Extent3::cube(1),
                    Extent3::cube(stride),
                    Extent3::cube(0),
                    1,
                )),
            ),
            bn(&format!("{prefix}.shortcut.bn"), out_ch),
        ])
    }
}

/// Two 3x3x3 convolutions; ReLU after the sum.
pub fn basic_block<T: Scalar>(prefix: &str, in_ch: usize, width: usize, stride: usize, init: &mut Init) -> Node<T> {
    let main = Node::seq(vec![
        Node::layer(
            format!("{prefix}.conv1"),
            Layer::Conv3(init.conv(
                in_ch,
                width,
                Extent3::cube(3),
                Extent3::cube(stride),
                Extent3::cube(1),
                1,
            )),
        ),
        bn(&format!("{prefix}.bn1"), width),
        relu(&format!("{prefix}.relu1")),
        Node::layer(
            format!("{prefix}.conv2"),
            Layer::Conv3(init.conv(width, width, Extent3::cube(3), Extent3::cube(1), Extent3::cube(1), 1)),
        ),
        bn(&format!("{prefix}.bn2"), width),
    ]);
    let shortcut = projection_shortcut(init, prefix, in_ch, width, stride);
    Node::Residual { main: Box::new(main), shortcut: Box::new(shortcut), post_relu: true }
}

/// 1x1x1 reduce, 3x3x3 (stride-carrying), 1x1x1 expand to 4x the inner
/// width; ReLU after the sum.
pub fn bottleneck_block<T: Scalar>(
    prefix: &str,
    in_ch: usize,
    inner: usize,
    stride: usize,
    init: &mut Init,
) -> Node<T> {
    let out = inner * 4;
    let main = Node::seq(vec![
        pointwise(init, &format!("{prefix}.conv1"), in_ch, inner),
        bn(&format!("{prefix}.bn1"), inner),
        relu(&format!("{prefix}.relu1")),
        Node::layer(
            format!("{prefix}.conv2"),
            Layer::Conv3(init.conv(
                inner,
                inner,
                Extent3::cube(3),
                Extent3::cube(stride),
                Extent3::cube(1),
                1,
            )),
        ),
        bn(&format!("{prefix}.bn2"), inner),
        relu(&format!("{prefix}.relu2")),
        pointwise(init, &format!("{prefix}.conv3"), inner, out),
        bn(&format!("{prefix}.bn3"), out),
    ]);
    let shortcut = projection_shortcut(init, prefix, in_ch, out, stride);
    Node::Residual { main: Box::new(main), shortcut: Box::new(shortcut), post_relu: true }
}

/// A runnable network plus the metadata checkpoints and reports need.
#[derive(Debug, Clone)]
pub struct ModelGraph<T> {
    pub root: Node<T>,
    pub arch_name: String,
    pub num_classes: usize,
    pub spec: ModelSpec,
}

pub const CLASSIFIER_PREFIX: &str = "fc";

impl<T: Scalar> ModelGraph<T> {
    pub fn forward(&mut self, x: &Tensor5<T>, mode: Mode) -> Result<Tensor5<T>, ModelError> {
        let (y, _) = self.root.forward(x, mode, false)?;
        Ok(y)
    }

    pub fn forward_cached(
        &mut self,
        x: &Tensor5<T>,
        mode: Mode,
    ) -> Result<(Tensor5<T>, Cache<T>), ModelError> {
        let (y, cache) = self.root.forward(x, mode, true)?;
        Ok((y, cache.expect("cache requested")))
    }

    pub fn backward(&self, cache: &Cache<T>, grad_out: &Tensor5<T>) -> Result<Grads<T>, ModelError> {
        let mut grads = Grads::new();
        self.root.backward(cache, grad_out, &mut grads)?;
        Ok(grads)
    }

    pub fn param_names(&mut self) -> Vec<String> {
        let mut names = Vec::new();
        self.root.visit_params(&mut |name, _, _| names.push(name.to_string()));
        names
    }

    /// Sum of squares over every learnable parameter.
    pub fn l2_norm_squared(&mut self) -> T {
        let mut acc = T::zero();
        self.root.visit_params(&mut |_, _, data| {
            for &v in data.iter() {
                acc += v * v;
            }
        });
        acc
    }
}

/// Build one of the named architectures with deterministic seeded
/// initialization.
pub fn build_model<T: Scalar>(
    arch: Arch,
    num_classes: usize,
    seed: u64,
) -> Result<ModelGraph<T>, ModelError> {
    build_custom(arch.spec(), arch.as_str(), num_classes, seed)
}

/// Build from an explicit stage layout; used for miniature test variants.
pub fn build_custom<T: Scalar>(
    spec: ModelSpec,
    arch_name: &str,
    num_classes: usize,
    seed: u64,
) -> Result<ModelGraph<T>, ModelError> {
    if num_classes < 2 {
        return Err(ModelError::TooFewClasses(num_classes));
    }
    let mut init = Init::new(seed);
    let mut nodes = vec![
        Node::layer(
            "stem.conv",
            Layer::Conv3(init.conv(
                1,
                spec.stem_width,
                spec.stem_kernel,
                Extent3::cube(1),
                Extent3::cube(0),
                1,
            )),
        ),
        bn("stem.bn", spec.stem_width),
        relu("stem.relu"),
        Node::layer(
            "stem.maxpool",
            Layer::MaxPool(MaxPool3 { kernel: spec.maxpool_kernel, stride: Extent3::cube(2) }),
        ),
    ];

    let mut in_ch = spec.stem_width;
    for (stage, (&width, &count)) in spec.widths.iter().zip(&spec.blocks).enumerate() {
        let stage_no = stage + 1;
        // The first stage keeps full resolution; later stages downsample
        // in their first block.
        let first_stride = if stage == 0 { 1 } else { 2 };
        for block in 0..count {
            let stride = if block == 0 { first_stride } else { 1 };
            let prefix = match spec.kind {
                BlockKind::Lw => format!("stage{stage_no}.unit{}", block + 1),
                _ => format!("stage{stage_no}.block{}", block + 1),
            };
            let node = match spec.kind {
                BlockKind::Lw => {
                    let cfg = LwUnitConfig {
                        in_channels: in_ch,
                        out_channels: width,
                        expansion: spec.expansion,
                        stride,
                    };
                    lw_unit(cfg, &prefix, &mut init)?
                }
                BlockKind::Basic => basic_block(&prefix, in_ch, width, stride, &mut init),
                BlockKind::Bottleneck => bottleneck_block(&prefix, in_ch, width, stride, &mut init),
            };
            in_ch = match spec.kind {
                BlockKind::Bottleneck => width * 4,
                _ => width,
            };
            nodes.push(node);
        }
    }

    nodes.push(Node::layer("head.pool", Layer::AdaptiveAvgPool));
    nodes.push(Node::layer(CLASSIFIER_PREFIX, Layer::Linear(init.linear(in_ch, num_classes))));
    nodes.push(Node::layer("head.logsoftmax", Layer::LogSoftmax));

    Ok(ModelGraph {
        root: Node::Seq(nodes),
        arch_name: arch_name.to_string(),
        num_classes,
        spec,
    })
}
