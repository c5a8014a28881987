//! Weight-sharing fusion: spatial attention maps from both modalities form a
//! compact `h × h` affinity that re-weights each modality before they are summed.

use crate::error::{Error, Result};
use crate::nn::{Conv2d, ConvNormRelu, ConvNormReluCache, SpatialAttention, SpatialAttentionCache};
use crate::params::{join, Init, Parameterized};
use crate::scalar::Scalar;
use crate::tensor::{sigmoid_backward, softmax_backward, Tensor};

/// Which affinity the re-weighting uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AffinityVariant {
    /// `h × h` affinity between rows of the two attention maps.
    Shared,
    /// `hw × hw` pixel-to-pixel affinity.
    NonLocal,
}

/// Multiply-accumulates of the affinity path (affinity product, the two
/// per-modality 1×1 maps and the two re-weighting products).
pub fn affinity_macs(variant: AffinityVariant, h: u64, w: u64) -> u64 {
    match variant {
        AffinityVariant::Shared => 3 * h * h * w + 2 * h * h,
        AffinityVariant::NonLocal => 5 * (h * w) * (h * w),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Wsf<T> {
    pub pre_rgb: ConvNormRelu<T>,
    pub pre_depth: ConvNormRelu<T>,
    pub sa_rgb: SpatialAttention<T>,
    pub sa_depth: SpatialAttention<T>,
    /// Single-channel 1×1 convolution on the affinity, RGB side.
    pub affinity_rgb: Conv2d<T>,
    pub affinity_depth: Conv2d<T>,
}

#[derive(Clone, Debug)]
struct AffinityCache<T> {
    w_r: Tensor<T>,
    w_d: Tensor<T>,
    w_s: Tensor<T>,
    s_r: Tensor<T>,
    s_d: Tensor<T>,
}

#[derive(Clone, Debug)]
pub struct WsfCache<T> {
    sa_rgb: SpatialAttentionCache<T>,
    sa_depth: SpatialAttentionCache<T>,
    affinity: AffinityCache<T>,
    gate_rgb: Tensor<T>,
    gate_depth: Tensor<T>,
    pre_rgb: ConvNormReluCache<T>,
    pre_depth: ConvNormReluCache<T>,
    feat_rgb: Tensor<T>,
    feat_depth: Tensor<T>,
}

impl<T: Scalar> WsfCache<T> {
    /// The shared affinity `W_r · W_dᵀ`.
    pub fn shared_affinity(&self) -> &Tensor<T> {
        &self.affinity.w_s
    }
}

/// Applies a single-channel 1×1 convolution to a matrix.
fn pointwise<T: Scalar>(conv: &Conv2d<T>, m: &Tensor<T>) -> Result<Tensor<T>> {
    let (r, c) = m.dims2()?;
    conv.forward(&m.reshape(&[r, c, 1])?)?.into_reshape(&[r, c])
}

fn pointwise_backward<T: Scalar>(conv: &Conv2d<T>, m: &Tensor<T>, g: &Tensor<T>, grads: &mut Conv2d<T>) -> Result<Tensor<T>> {
    let (r, c) = m.dims2()?;
    conv.backward(&m.reshape(&[r, c, 1])?, &g.reshape(&[r, c, 1])?, grads)?
        .into_reshape(&[r, c])
}

/// Multiplies every channel of `x` (`h × w × c`) by `gate` (`h × w`).
fn gate_channels<T: Scalar>(x: &Tensor<T>, gate: &Tensor<T>) -> Result<Tensor<T>> {
    let (h, w, c) = x.dims3()?;
    if gate.shape() != [h, w] {
        return Err(Error::shape("wsf gate", gate.shape(), &[h, w]));
    }
    let g = gate.data();
    Ok(Tensor::from_fn(x.shape(), |i| x.data()[i] * g[i / c]))
}

/// Channel sums of `a ⊙ b`, giving an `h × w` map.
fn channel_dot<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (h, w, c) = a.dims3()?;
    let data = a
        .data()
        .chunks(c)
        .zip(b.data().chunks(c))
        .map(|(x, y)| x.iter().zip(y).map(|(&p, &q)| p * q).sum())
        .collect();
    Tensor::new(vec![h, w], data)
}

impl<T: Scalar> Wsf<T> {
    pub fn init(channels: usize, groups: usize, init: &mut Init) -> Result<Self> {
        Ok(Self {
            pre_rgb: ConvNormRelu::init(channels, channels, groups, init)?,
            pre_depth: ConvNormRelu::init(channels, channels, groups, init)?,
            sa_rgb: SpatialAttention::init(init),
            sa_depth: SpatialAttention::init(init),
            affinity_rgb: Conv2d::init(1, 1, 1, init),
            affinity_depth: Conv2d::init(1, 1, 1, init),
        })
    }

    /// Refines two `h × w` attention maps through their affinity, returning
    /// the pre-sigmoid maps `(M_r, M_d)`.
    pub fn reweight(&self, variant: AffinityVariant, w_r: &Tensor<T>, w_d: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let (h, w) = w_r.dims2()?;
        let (a, b) = match variant {
            AffinityVariant::Shared => (w_r.clone(), w_d.clone()),
            AffinityVariant::NonLocal => (w_r.reshape(&[h * w, 1])?, w_d.reshape(&[h * w, 1])?),
        };
        let (m_r, m_d, _) = self.reweight_cached(&a, &b)?;
        Ok((m_r.into_reshape(&[h, w])?, m_d.into_reshape(&[h, w])?))
    }

    fn reweight_cached(&self, w_r: &Tensor<T>, w_d: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>, AffinityCache<T>)> {
        let w_s = w_r.matmul(&w_d.transpose()?)?;
        let s_r = pointwise(&self.affinity_rgb, &w_s)?.softmax(1)?;
        let s_d = pointwise(&self.affinity_depth, &w_s)?.softmax(1)?;
        let m_r = w_r.add(&s_r.transpose()?.matmul(w_r)?)?;
        let m_d = w_d.add(&s_d.matmul(w_d)?)?;
        Ok((
            m_r,
            m_d,
            AffinityCache {
                w_r: w_r.clone(),
                w_d: w_d.clone(),
                w_s,
                s_r,
                s_d,
            },
        ))
    }

    fn reweight_backward(
        &self,
        cache: &AffinityCache<T>,
        g_m_r: &Tensor<T>,
        g_m_d: &Tensor<T>,
        grads: &mut Self,
    ) -> Result<(Tensor<T>, Tensor<T>)> {
        let AffinityCache { w_r, w_d, w_s, s_r, s_d } = cache;
        let mut g_w_r = g_m_r.add(&s_r.matmul(g_m_r)?)?;
        let g_s_r = w_r.matmul(&g_m_r.transpose()?)?;
        let mut g_w_d = g_m_d.add(&s_d.transpose()?.matmul(g_m_d)?)?;
        let g_s_d = g_m_d.matmul(&w_d.transpose()?)?;

        let g_a_r = softmax_backward(s_r, &g_s_r, 1)?;
        let g_a_d = softmax_backward(s_d, &g_s_d, 1)?;
        let mut g_w_s = pointwise_backward(&self.affinity_rgb, w_s, &g_a_r, &mut grads.affinity_rgb)?;
        g_w_s.add_assign(&pointwise_backward(&self.affinity_depth, w_s, &g_a_d, &mut grads.affinity_depth)?)?;

        g_w_r.add_assign(&g_w_s.matmul(w_d)?)?;
        g_w_d.add_assign(&g_w_s.transpose()?.matmul(w_r)?)?;
        Ok((g_w_r, g_w_d))
    }

    pub fn forward(&self, x_rgb: &Tensor<T>, x_depth: &Tensor<T>) -> Result<(Tensor<T>, WsfCache<T>)> {
        if x_rgb.shape() != x_depth.shape() {
            return Err(Error::shape("wsf", x_rgb.shape(), x_depth.shape()));
        }
        let (w_r, sa_rgb) = self.sa_rgb.forward(x_rgb)?;
        let (w_d, sa_depth) = self.sa_depth.forward(x_depth)?;
        let (m_r, m_d, affinity) = self.reweight_cached(&w_r, &w_d)?;
        let gate_rgb = m_r.sigmoid();
        let gate_depth = m_d.sigmoid();
        let (feat_rgb, pre_rgb) = self.pre_rgb.forward(x_rgb)?;
        let (feat_depth, pre_depth) = self.pre_depth.forward(x_depth)?;
        let out = gate_channels(&feat_rgb, &gate_rgb)?.add(&gate_channels(&feat_depth, &gate_depth)?)?;
        Ok((
            out,
            WsfCache {
                sa_rgb,
                sa_depth,
                affinity,
                gate_rgb,
                gate_depth,
                pre_rgb,
                pre_depth,
                feat_rgb,
                feat_depth,
            },
        ))
    }

    /// Returns `(grad_rgb, grad_depth)`.
    pub fn backward(&self, cache: &WsfCache<T>, grad_out: &Tensor<T>, grads: &mut Self) -> Result<(Tensor<T>, Tensor<T>)> {
        let g_feat_rgb = gate_channels(grad_out, &cache.gate_rgb)?;
        let g_feat_depth = gate_channels(grad_out, &cache.gate_depth)?;
        let g_m_r = sigmoid_backward(&cache.gate_rgb, &channel_dot(grad_out, &cache.feat_rgb)?)?;
        let g_m_d = sigmoid_backward(&cache.gate_depth, &channel_dot(grad_out, &cache.feat_depth)?)?;
        let (g_w_r, g_w_d) = self.reweight_backward(&cache.affinity, &g_m_r, &g_m_d, grads)?;

        let mut g_rgb = self.pre_rgb.backward(&cache.pre_rgb, &g_feat_rgb, &mut grads.pre_rgb)?;
        g_rgb.add_assign(&self.sa_rgb.backward(&cache.sa_rgb, &g_w_r, &mut grads.sa_rgb)?)?;
        let mut g_depth = self.pre_depth.backward(&cache.pre_depth, &g_feat_depth, &mut grads.pre_depth)?;
        g_depth.add_assign(&self.sa_depth.backward(&cache.sa_depth, &g_w_d, &mut grads.sa_depth)?)?;
        Ok((g_rgb, g_depth))
    }
}

impl<T: Scalar> Parameterized<T> for Wsf<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>)) {
        self.pre_rgb.visit(&join(prefix, "pre_rgb"), f);
        self.pre_depth.visit(&join(prefix, "pre_depth"), f);
        self.sa_rgb.visit(&join(prefix, "sa_rgb"), f);
        self.sa_depth.visit(&join(prefix, "sa_depth"), f);
        self.affinity_rgb.visit(&join(prefix, "affinity_rgb"), f);
        self.affinity_depth.visit(&join(prefix, "affinity_depth"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        self.pre_rgb.visit_mut(&join(prefix, "pre_rgb"), f);
        self.pre_depth.visit_mut(&join(prefix, "pre_depth"), f);
        self.sa_rgb.visit_mut(&join(prefix, "sa_rgb"), f);
        self.sa_depth.visit_mut(&join(prefix, "sa_depth"), f);
        self.affinity_rgb.visit_mut(&join(prefix, "affinity_rgb"), f);
        self.affinity_depth.visit_mut(&join(prefix, "affinity_depth"), f);
    }
}
