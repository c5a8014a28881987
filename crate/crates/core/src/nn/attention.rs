use super::conv::Conv2d;
use crate::error::{Error, Result};
use crate::params::{join, Init, Parameterized};
use crate::scalar::Scalar;
use crate::tensor::{sigmoid_backward, Tensor};

/// Per-pixel spatial attention: channel mean and channel max are stacked,
/// passed through a 7×7 convolution (2 → 1) and squashed by a sigmoid.
#[derive(Clone, Debug, PartialEq)]
pub struct SpatialAttention<T> {
    pub conv: Conv2d<T>,
}

#[derive(Clone, Debug)]
pub struct SpatialAttentionCache<T> {
    channels: usize,
    pooled: Tensor<T>,
    argmax: Vec<usize>,
    /// Attention map, `h × w`.
    pub weights: Tensor<T>,
}

/// Channel-wise mean and max of `h × w × c`, stacked into `h × w × 2`.
pub fn channel_pool<T: Scalar>(x: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    let (h, w, c) = x.dims3()?;
    let inv = T::one() / T::of_usize(c);
    let mut out = Vec::with_capacity(h * w * 2);
    let mut argmax = Vec::with_capacity(h * w);
    for px in x.data().chunks(c) {
        let mut best = 0;
        for (i, &v) in px.iter().enumerate() {
            if v > px[best] {
                best = i;
            }
        }
        out.push(px.iter().copied().sum::<T>() * inv);
        out.push(px[best]);
        argmax.push(best);
    }
    Ok((Tensor::from_parts(vec![h, w, 2], out), argmax))
}

impl<T: Scalar> SpatialAttention<T> {
    pub fn new(conv: Conv2d<T>) -> Result<Self> {
        if conv.kernel_size() != 7 || conv.in_channels() != 2 || conv.out_channels() != 1 {
            return Err(Error::invalid("spatial_attention", "expects a 7×7 conv with 2 inputs and 1 output"));
        }
        Ok(Self { conv })
    }

    pub fn init(init: &mut Init) -> Self {
        Self {
            conv: Conv2d::init(7, 2, 1, init),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<(Tensor<T>, SpatialAttentionCache<T>)> {
        let (h, w, c) = x.dims3()?;
        let (pooled, argmax) = channel_pool(x)?;
        let weights = self.conv.forward(&pooled)?.sigmoid().into_reshape(&[h, w])?;
        Ok((
            weights.clone(),
            SpatialAttentionCache {
                channels: c,
                pooled,
                argmax,
                weights,
            },
        ))
    }

    /// `grad_out` is `h × w`; returns the gradient for the `h × w × c` input.
    pub fn backward(&self, cache: &SpatialAttentionCache<T>, grad_out: &Tensor<T>, grads: &mut Self) -> Result<Tensor<T>> {
        let (h, w) = cache.weights.dims2()?;
        let c = cache.channels;
        let dz = sigmoid_backward(&cache.weights, grad_out)?.into_reshape(&[h, w, 1])?;
        let dpool = self.conv.backward(&cache.pooled, &dz, &mut grads.conv)?;
        let inv = T::one() / T::of_usize(c);
        let mut dx = vec![T::zero(); h * w * c];
        for (p, (out, g)) in dx.chunks_mut(c).zip(dpool.data().chunks(2)).enumerate() {
            let avg = g[0] * inv;
            out.iter_mut().for_each(|v| *v = avg);
            out[cache.argmax[p]] += g[1];
        }
        Ok(Tensor::from_parts(vec![h, w, c], dx))
    }
}

impl<T: Scalar> Parameterized<T> for SpatialAttention<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>)) {
        self.conv.visit(&join(prefix, "conv"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        self.conv.visit_mut(&join(prefix, "conv"), f);
    }
}
