//! Parameter and multiply-accumulate accounting per layer.
//!
//! Two parameter modes exist: `Full` counts every learnable tensor
//! element; `Paper` counts only the stem convolution and the main-path
//! convolutions of each block (no batch-norm affine terms, no shortcut
//! projections, no classifier), which is the arithmetic behind the
//! published per-group totals.

use crate::graph::Layer;
use crate::layers::LayerError;
use crate::models::ModelGraph;
use crate::scalar::Scalar;
use crate::tensor::Extent3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CountMode {
    Full,
    Paper,
}

impl CountMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            CountMode::Full => "full",
            CountMode::Paper => "paper",
        }
    }
}

#[derive(Debug, Clone)]
pub struct CostRow {
    pub name: String,
    pub params: usize,
    pub macs: u64,
    pub out_shape: Option<[usize; 5]>,
}

#[derive(Debug, Clone)]
pub struct CostReport {
    pub mode: CountMode,
    pub rows: Vec<CostRow>,
    pub total_params: usize,
    pub total_macs: u64,
}

impl CostReport {
    /// Sum of parameters over rows whose name starts with `prefix`.
    pub fn prefix_total(&self, prefix: &str) -> usize {
        self.rows.iter().filter(|r| r.name.starts_with(prefix)).map(|r| r.params).sum()
    }

    pub fn render(&self) -> String {
        let name_w = self.rows.iter().map(|r| r.name.len()).max().unwrap_or(4).max(5);
        let mut out = format!(
            "{:<name_w$}  {:>12}  {:>14}  {}\n",
            "layer", "params", "macs", "output shape"
        );
        for r in &self.rows {
            let shape = r
                .out_shape
                .map(|s| format!("{:?}", s))
                .unwrap_or_default();
            out.push_str(&format!(
                "{:<name_w$}  {:>12}  {:>14}  {}\n",
                r.name, r.params, r.macs, shape
            ));
        }
        out.push_str(&format!(
            "{:<name_w$}  {:>12}  {:>14}\n",
            "total", self.total_params, self.total_macs
        ));
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("layer,params,macs,out_shape\n");
        for r in &self.rows {
            let shape = r
                .out_shape
                .map(|s| format!("{}x{}x{}x{}x{}", s[0], s[1], s[2], s[3], s[4]))
                .unwrap_or_default();
            out.push_str(&format!("{},{},{},{}\n", r.name, r.params, r.macs, shape));
        }
        out.push_str(&format!("total,{},{},\n", self.total_params, self.total_macs));
        out
    }
}

/// Parameters of one convolution layer: kernel volume x in/groups x out.
pub fn conv_param_count(kernel: Extent3, in_channels: usize, out_channels: usize, groups: usize) -> usize {
    kernel.volume() * (in_channels / groups) * out_channels
}

fn layer_params<T: Scalar>(name: &str, layer: &Layer<T>, mode: CountMode) -> usize {
    match (layer, mode) {
        (Layer::Conv3(conv), CountMode::Full) => conv.param_count(),
        (Layer::Conv3(conv), CountMode::Paper) => {
            if name.contains(".shortcut.") {
                0
            } else {
                conv.param_count()
            }
        }
        (Layer::BatchNorm(bn), CountMode::Full) => 2 * bn.channels,
        (Layer::BatchNorm(_), CountMode::Paper) => 0,
        (Layer::Linear(lin), CountMode::Full) => lin.weight.len() + lin.bias.len(),
        (Layer::Linear(_), CountMode::Paper) => 0,
        _ => 0,
    }
}

/// Parameter accounting without shape propagation.
pub fn count_params<T: Scalar>(model: &ModelGraph<T>, mode: CountMode) -> CostReport {
    let mut rows = Vec::new();
    model.root.visit_layers(&mut |name, layer| {
        let params = layer_params(name, layer, mode);
        if params > 0 || matches!(layer, Layer::Conv3(_) | Layer::Linear(_)) {
            rows.push(CostRow { name: name.to_string(), params, macs: 0, out_shape: None });
        }
    });
    let total_params = rows.iter().map(|r| r.params).sum();
    CostReport { mode, rows, total_params, total_macs: 0 }
}

/// Parameter and MAC accounting for a concrete input shape. MACs count
/// one multiply-accumulate per kernel tap per output element for
/// convolutions and out x in per row for the classifier; normalization,
/// activations, and reductions count zero.
pub fn count_macs<T: Scalar>(
    model: &ModelGraph<T>,
    input: [usize; 5],
    mode: CountMode,
) -> Result<CostReport, LayerError> {
    let mut rows = Vec::new();
    model.root.visit_shapes(input, &mut |name, layer, _in, out| {
        let params = layer_params(name, layer, mode);
        let macs = match layer {
            Layer::Conv3(conv) => {
                let out_elems: u64 = out.iter().product::<usize>() as u64;
                out_elems
                    * (conv.kernel.volume() as u64)
                    * (conv.in_channels / conv.groups) as u64
            }
            Layer::Linear(lin) => (out[0] * lin.out_features * lin.in_features) as u64,
            _ => 0,
        };
        if params > 0 || macs > 0 {
            rows.push(CostRow { name: name.to_string(), params, macs, out_shape: Some(out) });
        }
    })?;
    let total_params = rows.iter().map(|r| r.params).sum();
    let total_macs = rows.iter().map(|r| r.macs).sum();
    Ok(CostReport { mode, rows, total_params, total_macs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{build_model, Arch, CLASSIFIER_PREFIX};

    #[test]
    fn stem_conv_has_2304_parameters() {
        assert_eq!(conv_param_count(Extent3::new(8, 3, 3), 1, 32, 1), 2304);
    }

    #[test]
    fn paper_mode_group_totals() {
        let model = build_model::<f32>(Arch::LwNet20, 9, 0).unwrap();
        let report = count_params(&model, CountMode::Paper);
        assert_eq!(report.prefix_total("stem."), 2304);
        assert_eq!(report.prefix_total("stage1."), 11648);
        assert_eq!(report.prefix_total("stage2."), 71168);
        assert_eq!(report.prefix_total("stage3."), 257024);
        assert_eq!(report.prefix_total("stage4."), 420864);
        assert_eq!(report.total_params, 763008);
    }

    #[test]
    fn paper_total_is_band_count_independent() {
        // Pure parameter accounting never consults an input shape.
        let model = build_model::<f32>(Arch::LwNet20, 16, 7).unwrap();
        assert_eq!(count_params(&model, CountMode::Paper).total_params, 763008);
    }

    #[test]
    fn full_mode_difference_is_bn_shortcut_classifier() {
        let model = build_model::<f32>(Arch::LwNet20, 9, 0).unwrap();
        let full = count_params(&model, CountMode::Full);
        let paper = count_params(&model, CountMode::Paper);
        assert!(full.total_params > paper.total_params);
        let extras: usize = full
            .rows
            .iter()
            .filter(|r| {
                r.name.contains(".shortcut.")
                    || r.name.contains(".bn")
                    || r.name.starts_with(CLASSIFIER_PREFIX)
                    || r.name.contains("stem.bn")
            })
            .map(|r| r.params)
            .sum();
        assert_eq!(full.total_params - paper.total_params, extras);
    }

    #[test]
    fn counter_example_layer_arithmetic() {
        // Three convolution layers of a large plain 3-D CNN.
        assert_eq!(conv_param_count(Extent3::new(4, 4, 32), 1, 128, 1), 65536);
        assert_eq!(conv_param_count(Extent3::new(5, 5, 32), 128, 192, 1), 19_660_800);
        assert_eq!(conv_param_count(Extent3::new(4, 4, 32), 192, 256, 1), 25_165_824);
    }

    #[test]
    fn pointwise_macs_by_definition() {
        use crate::layers::Conv3;
        use crate::graph::{Layer, Node};
        use crate::models::ModelSpec;
        let conv = Conv3::<f32>::new(4, 3, Extent3::cube(1), Extent3::cube(1), Extent3::cube(0), 1);
        let model = ModelGraph {
            root: Node::layer("pw", Layer::Conv3(conv)),
            arch_name: "pw".into(),
            num_classes: 2,
            spec: ModelSpec::default(),
        };
        let report = count_macs(&model, [1, 4, 2, 2, 2], CountMode::Full).unwrap();
        // 8 output voxels x 3 out channels x 4 in channels.
        assert_eq!(report.total_macs, 8 * 3 * 4);

        let one = Conv3::<f32>::new(1, 1, Extent3::cube(1), Extent3::cube(1), Extent3::cube(0), 1);
        let m1 = ModelGraph {
            root: Node::layer("id", Layer::Conv3(one)),
            arch_name: "id".into(),
            num_classes: 2,
            spec: ModelSpec::default(),
        };
        assert_eq!(count_macs(&m1, [1, 1, 1, 1, 1], CountMode::Full).unwrap().total_macs, 1);
    }
}
