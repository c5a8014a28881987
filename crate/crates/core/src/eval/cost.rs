use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{affinity_macs, AffinityVariant, CalibNet, PipelineConfig};
use crate::scalar::Scalar;

/// One costed layer. Spatial sizes are those of the layer's input.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum LayerSpec {
    Conv2d {
        kernel: usize,
        c_in: usize,
        c_out: usize,
        #[serde(default = "yes")]
        bias: bool,
        height: usize,
        width: usize,
    },
    GroupNorm {
        channels: usize,
    },
    /// Applied row-wise to a `rows × c_in` matrix.
    Linear {
        c_in: usize,
        c_out: usize,
        rows: usize,
    },
    /// Channel mean/max pooling followed by a 7×7, 2 → 1 convolution.
    SpatialAttention {
        height: usize,
        width: usize,
    },
    Matmul {
        m: usize,
        k: usize,
        n: usize,
    },
    /// Affinity path of the fusion block (excluding its attention and pre-op layers).
    Affinity {
        height: usize,
        width: usize,
        #[serde(default)]
        non_local: bool,
    },
    Identity,
}

fn yes() -> bool {
    true
}

const LAYER_TYPES: [&str; 7] = ["conv2d", "group_norm", "linear", "spatial_attention", "matmul", "affinity", "identity"];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostReport {
    pub parameter_count: u64,
    pub mac_count: u64,
}

impl std::ops::Add for CostReport {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        Self {
            parameter_count: self.parameter_count + o.parameter_count,
            mac_count: self.mac_count + o.mac_count,
        }
    }
}

impl std::iter::Sum for CostReport {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::default(), |a, b| a + b)
    }
}

impl LayerSpec {
    pub fn cost(&self) -> CostReport {
        let u = |v: usize| v as u64;
        let (parameter_count, mac_count) = match *self {
            LayerSpec::Conv2d { kernel, c_in, c_out, bias, height, width } => {
                let w = u(kernel * kernel * c_in * c_out);
                (w + if bias { u(c_out) } else { 0 }, u(height * width) * w)
            }
            LayerSpec::GroupNorm { channels } => (2 * u(channels), 0),
            LayerSpec::Linear { c_in, c_out, rows } => (u(c_in * c_out + c_out), u(rows * c_in * c_out)),
            LayerSpec::SpatialAttention { height, width } => (7 * 7 * 2 + 1, u(height * width) * 7 * 7 * 2),
            LayerSpec::Matmul { m, k, n } => (0, u(m * k * n)),
            LayerSpec::Affinity { height, width, non_local } => {
                let variant = if non_local { AffinityVariant::NonLocal } else { AffinityVariant::Shared };
                (4, affinity_macs(variant, u(height), u(width)))
            }
            LayerSpec::Identity => (0, 0),
        };
        CostReport { parameter_count, mac_count }
    }
}

/// A named group of layers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    pub name: String,
    pub layers: Vec<LayerSpec>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelDescription {
    pub stages: Vec<Stage>,
}

impl ModelDescription {
    /// Parses JSON, reporting unrecognized layer types by name.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        if let Some(stages) = value.get("stages").and_then(|s| s.as_array()) {
            for layer in stages.iter().filter_map(|s| s.get("layers")?.as_array()).flatten() {
                match layer.get("type").and_then(|t| t.as_str()) {
                    Some(t) if LAYER_TYPES.contains(&t) => {}
                    Some(t) => return Err(Error::UnknownLayer(t.to_string())),
                    None => return Err(Error::UnknownLayer(layer.to_string())),
                }
            }
        }
        Ok(serde_json::from_value(value)?)
    }

    pub fn stage_costs(&self) -> Vec<(String, CostReport)> {
        self.stages
            .iter()
            .map(|s| (s.name.clone(), s.layers.iter().map(LayerSpec::cost).sum()))
            .collect()
    }
}

/// Total cost of a description.
pub fn count_costs(model: &ModelDescription) -> CostReport {
    model.stage_costs().into_iter().map(|(_, c)| c).sum()
}

/// Layer-level description of the network for a `height × width` input.
pub fn describe_pipeline(cfg: &PipelineConfig, height: usize, width: usize) -> Result<ModelDescription> {
    cfg.validate()?;
    let s = CalibNet::<f64>::STRIDE;
    if height == 0 || width == 0 || height % s != 0 || width % s != 0 {
        return Err(Error::invalid("describe", format!("input {height}×{width} not divisible by {s}")));
    }
    let (c, n) = (cfg.channels, cfg.n_kernels);
    let (h2, w2, h3, w3) = (height / 4, width / 4, height / 8, width / 8);
    let conv = |kernel, c_in, c_out, height, width| LayerSpec::Conv2d { kernel, c_in, c_out, bias: true, height, width };
    let encoder = |c_in: usize| {
        let mut layers = Vec::new();
        let mut ci = c_in;
        for level in 0..3 {
            layers.push(conv(3, ci, c, height >> level, width >> level));
            layers.push(LayerSpec::GroupNorm { channels: c });
            ci = c;
        }
        layers
    };
    let dsa = |h, w| vec![conv(1, c, 1, h, w), conv(1, c, 1, h, w)];
    let wsf = |h, w| {
        vec![
            conv(3, c, c, h, w),
            LayerSpec::GroupNorm { channels: c },
            conv(3, c, c, h, w),
            LayerSpec::GroupNorm { channels: c },
            LayerSpec::SpatialAttention { height: h, width: w },
            LayerSpec::SpatialAttention { height: h, width: w },
            LayerSpec::Affinity { height: h, width: w, non_local: false },
        ]
    };
    let tower = || vec![conv(3, c + 2, c, h3, w3), conv(3, c, n, h3, w3)];
    let stage = |name: &str, layers: Vec<LayerSpec>| Stage { name: name.into(), layers };
    Ok(ModelDescription {
        stages: vec![
            stage("rgb_encoder", encoder(3)),
            stage("depth_encoder", encoder(1)),
            stage("kernel_dsa", dsa(h3, w3)),
            stage(
                "dik",
                [
                    tower(),
                    tower(),
                    vec![
                        LayerSpec::Matmul { m: 2 * n, k: h3 * w3, n: c },
                        LayerSpec::Linear { c_in: 2 * n, c_out: n, rows: c },
                        LayerSpec::Linear { c_in: c, c_out: c, rows: n },
                        LayerSpec::Linear { c_in: c, c_out: 1, rows: n },
                        LayerSpec::Linear { c_in: c, c_out: 1, rows: n },
                    ],
                ]
                .concat(),
            ),
            stage(
                "mask_branch",
                [
                    dsa(h3, w3),
                    dsa(h2, w2),
                    wsf(h3, w3),
                    wsf(h2, w2),
                    vec![conv(3, c, c, h2, w2), conv(1, c, c, h2, w2)],
                ]
                .concat(),
            ),
            stage("mask_head", vec![LayerSpec::Matmul { m: n, k: c, n: h2 * w2 }]),
            stage(
                "region_heads",
                vec![conv(1, c, 1, h2, w2), conv(1, c, 1, h3, w3), conv(1, c, 1, h2, w2), conv(1, c, 1, h3, w3)],
            ),
        ],
    })
}

/// Parameters and MACs measured on a live network by running one forward pass.
pub fn measure<T: Scalar>(net: &CalibNet<T>, height: usize, width: usize) -> Result<CostReport> {
    use crate::params::Parameterized;
    use crate::tensor::Tensor;
    let rgb = Tensor::<T>::zeros(&[height, width, 3]);
    let depth = Tensor::<T>::zeros(&[height, width, 1]);
    let (out, macs) = crate::flops::count(|| net.forward_detailed(&rgb, &depth));
    out?;
    Ok(CostReport {
        parameter_count: net.param_count() as u64,
        mac_count: macs,
    })
}
