//! The RGB-D salient instance segmentation network.

mod dik;
mod dsa;
mod encoder;
mod head;
mod mask_branch;
mod wsf;

pub use dik::{AttentionTower, Dik, DikCache, KernelSet};
pub use dsa::{similarity_score, Dsa, DsaCache};
pub use encoder::{StubEncoder, StubEncoderCache};
pub use head::{dynamic_mask_head, dynamic_mask_head_backward, HeadCache, RegionCache, RegionHeads, RegionMaps};
pub use mask_branch::{MaskBranch, MaskBranchCache, MaskInputGrads, MaskInputs};
pub use wsf::{affinity_macs, AffinityVariant, Wsf, WsfCache};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::default_groups;
use crate::params::{join, Init, Parameterized};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub n_kernels: usize,
    pub channels: usize,
    /// Group-norm groups; must divide `channels`.
    pub groups: usize,
    /// Predictions below this score are dropped by [`CalibNet::infer`].
    pub score_threshold: f64,
    /// Soft-mask binarization threshold.
    pub mask_threshold: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self::with_size(50, 256)
    }
}

impl PipelineConfig {
    pub fn with_size(n_kernels: usize, channels: usize) -> Self {
        Self {
            n_kernels,
            channels,
            groups: default_groups(channels).min(channels),
            score_threshold: 0.3,
            mask_threshold: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_kernels == 0 {
            return Err(Error::invalid("config", "n_kernels must be at least 1"));
        }
        if self.channels == 0 || self.groups == 0 || self.channels % self.groups != 0 {
            return Err(Error::invalid(
                "config",
                format!("channels {} not divisible by groups {}", self.channels, self.groups),
            ));
        }
        for (name, v) in [("score_threshold", self.score_threshold), ("mask_threshold", self.mask_threshold)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::invalid("config", format!("{name} {v} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// One kernel's output.
#[derive(Clone, Debug, PartialEq)]
pub struct InstancePrediction<T> {
    /// Kernel slot that produced this prediction.
    pub slot: usize,
    pub score: T,
    pub objectness: T,
    /// `H × W`, values in `(0, 1)`.
    pub mask: Tensor<T>,
}

impl<T: Scalar> InstancePrediction<T> {
    pub fn binary_mask(&self, threshold: T) -> Tensor<T> {
        self.mask.map(|v| if v >= threshold { T::one() } else { T::zero() })
    }
}

/// Encoder outputs for both modalities.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderFeatures<T> {
    pub c2: Tensor<T>,
    pub t3_rgb: Tensor<T>,
    pub d2: Tensor<T>,
    pub t3_depth: Tensor<T>,
}

/// Everything the network emits for one RGB-D pair, in kernel-slot order.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardOutput<T> {
    /// `N × H × W` soft masks.
    pub masks: Tensor<T>,
    /// `N` confidence scores.
    pub scores: Tensor<T>,
    /// `N` objectness scores.
    pub objectness: Tensor<T>,
    pub regions: RegionMaps<T>,
    /// DSA similarity scores: kernel branch, mask branch 1/8, mask branch 1/4.
    pub similarity: [T; 3],
}

impl<T: Scalar> ForwardOutput<T> {
    pub fn len(&self) -> usize {
        self.scores.numel()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn mask(&self, slot: usize) -> Result<Tensor<T>> {
        let (_, h, w) = self.masks.dims3()?;
        self.masks.slice(0, slot, slot + 1)?.into_reshape(&[h, w])
    }

    /// All predictions sorted by score, highest first; ties keep slot order.
    pub fn predictions(&self) -> Result<Vec<InstancePrediction<T>>> {
        let mut out = (0..self.len())
            .map(|k| {
                Ok(InstancePrediction {
                    slot: k,
                    score: self.scores.data()[k],
                    objectness: self.objectness.data()[k],
                    mask: self.mask(k)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        out.sort_by(|a, b| b.score.partial_cmp(&a.score).expect("finite scores").then(a.slot.cmp(&b.slot)));
        Ok(out)
    }
}

/// Upstream gradients for [`CalibNet::backward`].
#[derive(Clone, Debug, PartialEq)]
pub struct OutputGrads<T> {
    pub masks: Tensor<T>,
    pub scores: Tensor<T>,
    pub objectness: Tensor<T>,
    pub regions: RegionMaps<T>,
}

impl<T: Scalar> OutputGrads<T> {
    pub fn zeros_like(out: &ForwardOutput<T>) -> Self {
        Self {
            masks: out.masks.zeros_like(),
            scores: out.scores.zeros_like(),
            objectness: out.objectness.zeros_like(),
            regions: RegionMaps::zeros_like(&out.regions),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ForwardCache<T> {
    rgb_encoder: StubEncoderCache<T>,
    depth_encoder: StubEncoderCache<T>,
    kernel_dsa: DsaCache<T>,
    dik: DikCache<T>,
    mask_branch: MaskBranchCache<T>,
    head: HeadCache<T>,
    regions: RegionCache<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CalibNet<T> {
    pub config: PipelineConfig,
    pub rgb_encoder: StubEncoder<T>,
    pub depth_encoder: StubEncoder<T>,
    /// Calibrates the depth features entering the kernel branch.
    pub kernel_dsa: Dsa<T>,
    pub dik: Dik<T>,
    pub mask_branch: MaskBranch<T>,
    pub region_heads: RegionHeads<T>,
}

impl<T: Scalar> CalibNet<T> {
    /// Input sides must be multiples of this.
    pub const STRIDE: usize = 8;

    pub fn new(config: PipelineConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let (c, g) = (config.channels, config.groups);
        let mut init = Init::new(seed);
        Ok(Self {
            rgb_encoder: StubEncoder::init(3, c, g, &mut init)?,
            depth_encoder: StubEncoder::init(1, c, g, &mut init)?,
            kernel_dsa: Dsa::init(c, &mut init),
            dik: Dik::init(c, config.n_kernels, &mut init)?,
            mask_branch: MaskBranch::init(c, g, &mut init)?,
            region_heads: RegionHeads::init(c, &mut init),
            config,
        })
    }

    pub fn encode(&self, rgb: &Tensor<T>, depth: &Tensor<T>) -> Result<EncoderFeatures<T>> {
        let (features, _, _) = self.encode_cached(rgb, depth)?;
        Ok(features)
    }

    fn encode_cached(&self, rgb: &Tensor<T>, depth: &Tensor<T>) -> Result<(EncoderFeatures<T>, StubEncoderCache<T>, StubEncoderCache<T>)> {
        let (h, w, c) = rgb.dims3()?;
        if c != 3 {
            return Err(Error::invalid("forward", format!("rgb must have 3 channels, got {c}")));
        }
        if depth.shape() != [h, w, 1] {
            return Err(Error::shape("forward depth", depth.shape(), &[h, w, 1]));
        }
        if h % Self::STRIDE != 0 || w % Self::STRIDE != 0 {
            return Err(Error::invalid("forward", format!("input {h}×{w} not divisible by {}", Self::STRIDE)));
        }
        let ((c2, t3_rgb), rgb_cache) = self.rgb_encoder.forward(rgb)?;
        let ((d2, t3_depth), depth_cache) = self.depth_encoder.forward(depth)?;
        Ok((EncoderFeatures { c2, t3_rgb, d2, t3_depth }, rgb_cache, depth_cache))
    }

    /// All `N` predictions, sorted by score.
    pub fn forward(&self, rgb: &Tensor<T>, depth: &Tensor<T>) -> Result<Vec<InstancePrediction<T>>> {
        self.forward_detailed(rgb, depth)?.0.predictions()
    }

    /// Predictions at or above the configured score threshold.
    pub fn infer(&self, rgb: &Tensor<T>, depth: &Tensor<T>) -> Result<Vec<InstancePrediction<T>>> {
        let threshold = T::of(self.config.score_threshold);
        let mut preds = self.forward(rgb, depth)?;
        preds.retain(|p| p.score >= threshold);
        Ok(preds)
    }

    pub fn forward_detailed(&self, rgb: &Tensor<T>, depth: &Tensor<T>) -> Result<(ForwardOutput<T>, ForwardCache<T>)> {
        let (h, w, _) = rgb.dims3()?;
        let (f, rgb_encoder, depth_encoder) = self.encode_cached(rgb, depth)?;
        let (t3_depth_k, v_kernel, kernel_dsa) = self.kernel_dsa.forward(&f.t3_rgb, &f.t3_depth)?;
        let (kernels, dik) = self.dik.forward(&f.t3_rgb, &t3_depth_k)?;
        let inputs = MaskInputs {
            c2: &f.c2,
            t3: &f.t3_rgb,
            d2: &f.d2,
            t3_depth: &f.t3_depth,
        };
        let (feature, mask_branch) = self.mask_branch.forward(&inputs)?;
        let (masks, head) = dynamic_mask_head(&kernels.kernels, &feature, h, w)?;
        let (regions, region_cache) = self.region_heads.forward(&f.c2, &f.t3_rgb, &f.d2, &f.t3_depth)?;
        let similarity = [v_kernel, mask_branch.dsa_high.score, mask_branch.dsa_low.score];
        Ok((
            ForwardOutput {
                masks,
                scores: kernels.scores,
                objectness: kernels.objectness,
                regions,
                similarity,
            },
            ForwardCache {
                rgb_encoder,
                depth_encoder,
                kernel_dsa,
                dik,
                mask_branch,
                head,
                regions: region_cache,
            },
        ))
    }

    /// Parameter gradients for the given output gradients.
    pub fn backward(&self, cache: &ForwardCache<T>, grad: &OutputGrads<T>) -> Result<Self> {
        let mut grads = self.zeroed();
        let (g_kernels, g_feature) = dynamic_mask_head_backward(&cache.head, &grad.masks)?;
        let gm = self.mask_branch.backward(&cache.mask_branch, &g_feature, &mut grads.mask_branch)?;
        let (mut g_t3, g_t3_depth_k) = self.dik.backward(&cache.dik, &g_kernels, &grad.scores, &grad.objectness, &mut grads.dik)?;
        let (g_t3_dsa, g_t3_depth_dsa) = self.kernel_dsa.backward(&cache.kernel_dsa, &g_t3_depth_k, &mut grads.kernel_dsa)?;
        let [r_c2, r_t3, r_d2, r_d3] = self.region_heads.backward(&cache.regions, &grad.regions, &mut grads.region_heads)?;

        g_t3.add_assign(&g_t3_dsa)?;
        g_t3.add_assign(&gm.t3)?;
        g_t3.add_assign(&r_t3)?;
        let mut g_c2 = gm.c2;
        g_c2.add_assign(&r_c2)?;
        let mut g_t3_depth = g_t3_depth_dsa;
        g_t3_depth.add_assign(&gm.t3_depth)?;
        g_t3_depth.add_assign(&r_d3)?;
        let mut g_d2 = gm.d2;
        g_d2.add_assign(&r_d2)?;

        self.rgb_encoder.backward(&cache.rgb_encoder, &g_c2, &g_t3, &mut grads.rgb_encoder)?;
        self.depth_encoder.backward(&cache.depth_encoder, &g_d2, &g_t3_depth, &mut grads.depth_encoder)?;
        Ok(grads)
    }
}

impl<T: Scalar> Parameterized<T> for CalibNet<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>)) {
        self.rgb_encoder.visit(&join(prefix, "rgb_encoder"), f);
        self.depth_encoder.visit(&join(prefix, "depth_encoder"), f);
        self.kernel_dsa.visit(&join(prefix, "kernel_dsa"), f);
        self.dik.visit(&join(prefix, "dik"), f);
        self.mask_branch.visit(&join(prefix, "mask_branch"), f);
        self.region_heads.visit(&join(prefix, "region_heads"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        self.rgb_encoder.visit_mut(&join(prefix, "rgb_encoder"), f);
        self.depth_encoder.visit_mut(&join(prefix, "depth_encoder"), f);
        self.kernel_dsa.visit_mut(&join(prefix, "kernel_dsa"), f);
        self.dik.visit_mut(&join(prefix, "dik"), f);
        self.mask_branch.visit_mut(&join(prefix, "mask_branch"), f);
        self.region_heads.visit_mut(&join(prefix, "region_heads"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{grad_check_module, GradCheckOptions};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        Tensor::from_fn(shape, |_| rng.gen_range(0.0..1.0))
    }

    #[test]
    fn encoder_scales() {
        let net = CalibNet::<f64>::new(PipelineConfig::with_size(4, 16), 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let f = net.encode(&random(&[64, 96, 3], &mut rng), &random(&[64, 96, 1], &mut rng)).unwrap();
        assert_eq!(f.c2.shape(), &[16, 24, 16]);
        assert_eq!(f.t3_rgb.shape(), &[8, 12, 16]);
        assert_eq!(f.d2.shape(), &[16, 24, 16]);
        assert_eq!(f.t3_depth.shape(), &[8, 12, 16]);
    }

    #[test]
    fn modalities_do_not_share_weights() {
        let net = CalibNet::<f64>::new(PipelineConfig::with_size(2, 8), 3).unwrap();
        // Same single-channel input fed to both encoders (RGB as three equal channels).
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let gray = random(&[16, 16, 1], &mut rng);
        let rgb = Tensor::concat(&[&gray, &gray, &gray], 2).unwrap();
        let f = net.encode(&rgb, &gray).unwrap();
        assert_ne!(f.c2, f.d2);
        assert_ne!(net.dik.rgb_tower, net.dik.depth_tower);
    }

    #[test]
    fn forward_shapes_ranges_and_order() {
        let net = CalibNet::<f64>::new(PipelineConfig::with_size(10, 16), 7).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let rgb = random(&[64, 96, 3], &mut rng);
        let depth = random(&[64, 96, 1], &mut rng);
        let preds = net.forward(&rgb, &depth).unwrap();
        assert_eq!(preds.len(), 10);
        for p in &preds {
            assert_eq!(p.mask.shape(), &[64, 96]);
            assert!(p.score > 0.0 && p.score < 1.0);
            assert!(p.mask.data().iter().all(|&v| v > 0.0 && v < 1.0));
        }
        assert!(preds.windows(2).all(|w| w[0].score >= w[1].score));
        let again = net.forward(&rgb, &depth).unwrap();
        assert_eq!(preds, again);
        let mut slots: Vec<usize> = preds.iter().map(|p| p.slot).collect();
        slots.sort_unstable();
        assert_eq!(slots, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn same_seed_same_parameters() {
        let a = CalibNet::<f64>::new(PipelineConfig::with_size(3, 8), 11).unwrap();
        let b = CalibNet::<f64>::new(PipelineConfig::with_size(3, 8), 11).unwrap();
        let c = CalibNet::<f64>::new(PipelineConfig::with_size(3, 8), 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn rejects_bad_sizes() {
        let net = CalibNet::<f64>::new(PipelineConfig::with_size(2, 8), 0).unwrap();
        assert!(net.forward(&Tensor::zeros(&[12, 16, 3]), &Tensor::zeros(&[12, 16, 1])).is_err());
        assert!(net.forward(&Tensor::zeros(&[16, 16, 3]), &Tensor::zeros(&[8, 16, 1])).is_err());
        assert!(CalibNet::<f64>::new(PipelineConfig { groups: 3, ..PipelineConfig::with_size(2, 8) }, 0).is_err());
        assert!(CalibNet::<f64>::new(PipelineConfig::with_size(0, 8), 0).is_err());
    }

    #[test]
    fn infer_filters_by_score() {
        let mut cfg = PipelineConfig::with_size(6, 8);
        cfg.score_threshold = 0.5;
        let net = CalibNet::<f64>::new(cfg, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rgb = random(&[16, 16, 3], &mut rng);
        let depth = random(&[16, 16, 1], &mut rng);
        let all = net.forward(&rgb, &depth).unwrap();
        let kept = net.infer(&rgb, &depth).unwrap();
        assert_eq!(kept.len(), all.iter().filter(|p| p.score >= 0.5).count());
    }

    #[test]
    fn full_backward_matches_finite_differences() {
        let net = CalibNet::<f64>::new(PipelineConfig::with_size(2, 4), 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rgb = random(&[16, 16, 3], &mut rng);
        let depth = random(&[16, 16, 1], &mut rng);
        let (out, cache) = net.forward_detailed(&rgb, &depth).unwrap();
        let sym = |t: &Tensor<f64>, rng: &mut ChaCha8Rng| Tensor::from_fn(t.shape(), |_| rng.gen_range(-1.0..1.0));
        let g = OutputGrads {
            masks: sym(&out.masks, &mut rng),
            scores: sym(&out.scores, &mut rng),
            objectness: sym(&out.objectness, &mut rng),
            regions: RegionMaps {
                c2: sym(&out.regions.c2, &mut rng),
                t3: sym(&out.regions.t3, &mut rng),
                d2: sym(&out.regions.d2, &mut rng),
                d3: sym(&out.regions.d3, &mut rng),
            },
        };
        let grads = net.backward(&cache, &g).unwrap();
        let r = grad_check_module(
            &net,
            &[],
            &[],
            &grads,
            |m, _| {
                let (o, _) = m.forward_detailed(&rgb, &depth)?;
                Ok(o.masks.dot(&g.masks)?
                    + o.scores.dot(&g.scores)?
                    + o.objectness.dot(&g.objectness)?
                    + o.regions.c2.dot(&g.regions.c2)?
                    + o.regions.t3.dot(&g.regions.t3)?
                    + o.regions.d2.dot(&g.regions.d2)?
                    + o.regions.d3.dot(&g.regions.d3)?)
            },
            &GradCheckOptions::default().with_tol(1e-3).sampled(6, 3),
        )
        .unwrap();
        assert!(r.passed(), "{r:?}");
    }
}
