use crate::error::{Error, Result};
use crate::nn::{bilinear_resize, bilinear_resize_backward, Conv2d};
use crate::params::{join, Init, Parameterized};
use crate::scalar::Scalar;
use crate::tensor::{sigmoid_backward, Tensor};

/// Cached state of [`dynamic_mask_head`].
#[derive(Clone, Debug)]
pub struct HeadCache<T> {
    kernels: Tensor<T>,
    /// `h₂w₂ × c`.
    features: Tensor<T>,
    /// `N × h₂w₂`, low-resolution soft masks.
    probs: Tensor<T>,
    low_size: (usize, usize),
}

/// Applies every kernel (`N × c`) as a 1×1 convolution over the mask feature
/// (`h₂ × w₂ × c`), then sigmoids and resizes to `out_h × out_w`.
///
/// Returns soft masks as `N × out_h × out_w`.
pub fn dynamic_mask_head<T: Scalar>(
    kernels: &Tensor<T>,
    feature: &Tensor<T>,
    out_h: usize,
    out_w: usize,
) -> Result<(Tensor<T>, HeadCache<T>)> {
    let (n, kc) = kernels.dims2()?;
    let (h, w, c) = feature.dims3()?;
    if kc != c {
        return Err(Error::shape("dynamic mask head", kernels.shape(), feature.shape()));
    }
    let features = feature.reshape(&[h * w, c])?;
    let probs = kernels.matmul(&features.transpose()?)?.sigmoid();
    let masks = bilinear_resize(&probs.transpose()?.into_reshape(&[h, w, n])?, out_h, out_w)?
        .into_reshape(&[out_h * out_w, n])?
        .transpose()?
        .into_reshape(&[n, out_h, out_w])?;
    Ok((
        masks,
        HeadCache {
            kernels: kernels.clone(),
            features,
            probs,
            low_size: (h, w),
        },
    ))
}

/// Returns `(grad_kernels, grad_feature)` for a gradient on the `N × H × W` masks.
pub fn dynamic_mask_head_backward<T: Scalar>(cache: &HeadCache<T>, grad_masks: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
    let (n, oh, ow) = grad_masks.dims3()?;
    let (h, w) = cache.low_size;
    let c = cache.features.shape()[1];
    let g = grad_masks.reshape(&[n, oh * ow])?.transpose()?.into_reshape(&[oh, ow, n])?;
    let g = bilinear_resize_backward(&g, h, w)?.into_reshape(&[h * w, n])?.transpose()?;
    let g_logits = sigmoid_backward(&cache.probs, &g)?;
    let g_kernels = g_logits.matmul(&cache.features)?;
    let g_feature = g_logits.transpose()?.matmul(&cache.kernels)?.into_reshape(&[h, w, c])?;
    Ok((g_kernels, g_feature))
}

/// Per-map salient-region logits: 1×1 convolution to one channel plus sigmoid.
#[derive(Clone, Debug, PartialEq)]
pub struct RegionHeads<T> {
    pub c2: Conv2d<T>,
    pub t3: Conv2d<T>,
    pub d2: Conv2d<T>,
    pub d3: Conv2d<T>,
}

/// One `h × w` map per supervised feature level.
#[derive(Clone, Debug, PartialEq)]
pub struct RegionMaps<T> {
    pub c2: Tensor<T>,
    pub t3: Tensor<T>,
    pub d2: Tensor<T>,
    pub d3: Tensor<T>,
}

impl<T: Scalar> RegionMaps<T> {
    pub fn zeros_like(other: &Self) -> Self {
        Self {
            c2: other.c2.zeros_like(),
            t3: other.t3.zeros_like(),
            d2: other.d2.zeros_like(),
            d3: other.d3.zeros_like(),
        }
    }

    /// `(name, map)` in the order c2, t3, d2, d3.
    pub fn iter(&self) -> impl Iterator<Item = (&'static str, &Tensor<T>)> {
        [("c2", &self.c2), ("t3", &self.t3), ("d2", &self.d2), ("d3", &self.d3)].into_iter()
    }
}

#[derive(Clone, Debug)]
pub struct RegionCache<T> {
    inputs: [Tensor<T>; 4],
    outputs: RegionMaps<T>,
}

fn region<T: Scalar>(conv: &Conv2d<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
    let (h, w, _) = x.dims3()?;
    conv.forward(x)?.sigmoid().into_reshape(&[h, w])
}

fn region_backward<T: Scalar>(conv: &Conv2d<T>, x: &Tensor<T>, y: &Tensor<T>, g: &Tensor<T>, grads: &mut Conv2d<T>) -> Result<Tensor<T>> {
    let (h, w) = y.dims2()?;
    let dz = sigmoid_backward(y, g)?.into_reshape(&[h, w, 1])?;
    conv.backward(x, &dz, grads)
}

impl<T: Scalar> RegionHeads<T> {
    pub fn init(channels: usize, init: &mut Init) -> Self {
        Self {
            c2: Conv2d::init(1, channels, 1, init),
            t3: Conv2d::init(1, channels, 1, init),
            d2: Conv2d::init(1, channels, 1, init),
            d3: Conv2d::init(1, channels, 1, init),
        }
    }

    pub fn forward(&self, c2: &Tensor<T>, t3: &Tensor<T>, d2: &Tensor<T>, d3: &Tensor<T>) -> Result<(RegionMaps<T>, RegionCache<T>)> {
        let maps = RegionMaps {
            c2: region(&self.c2, c2)?,
            t3: region(&self.t3, t3)?,
            d2: region(&self.d2, d2)?,
            d3: region(&self.d3, d3)?,
        };
        Ok((
            maps.clone(),
            RegionCache {
                inputs: [c2.clone(), t3.clone(), d2.clone(), d3.clone()],
                outputs: maps,
            },
        ))
    }

    /// Returns input gradients in the order c2, t3, d2, d3.
    pub fn backward(&self, cache: &RegionCache<T>, grad: &RegionMaps<T>, grads: &mut Self) -> Result<[Tensor<T>; 4]> {
        let [x_c2, x_t3, x_d2, x_d3] = &cache.inputs;
        let y = &cache.outputs;
        Ok([
            region_backward(&self.c2, x_c2, &y.c2, &grad.c2, &mut grads.c2)?,
            region_backward(&self.t3, x_t3, &y.t3, &grad.t3, &mut grads.t3)?,
            region_backward(&self.d2, x_d2, &y.d2, &grad.d2, &mut grads.d2)?,
            region_backward(&self.d3, x_d3, &y.d3, &grad.d3, &mut grads.d3)?,
        ])
    }
}

impl<T: Scalar> Parameterized<T> for RegionHeads<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>)) {
        self.c2.visit(&join(prefix, "c2"), f);
        self.t3.visit(&join(prefix, "t3"), f);
        self.d2.visit(&join(prefix, "d2"), f);
        self.d3.visit(&join(prefix, "d3"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        self.c2.visit_mut(&join(prefix, "c2"), f);
        self.t3.visit_mut(&join(prefix, "t3"), f);
        self.d2.visit_mut(&join(prefix, "d2"), f);
        self.d3.visit_mut(&join(prefix, "d3"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{grad_check, GradCheckOptions};
    use crate::scalar::sigmoid;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn zero_kernel_gives_uniform_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let f = random(&[3, 4, 5], &mut rng);
        let (m, _) = dynamic_mask_head(&Tensor::zeros(&[2, 5]), &f, 12, 16).unwrap();
        assert_eq!(m.shape(), &[2, 12, 16]);
        assert!(m.data().iter().all(|&v| (v - 0.5).abs() < 1e-15));
    }

    #[test]
    fn one_hot_kernel_selects_channel() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = random(&[3, 4, 5], &mut rng);
        let mut k = Tensor::zeros(&[5, 5]);
        for i in 0..5 {
            k.set(&[i, i], 1.0);
        }
        let (m, _) = dynamic_mask_head(&k, &f, 3, 4).unwrap();
        for ch in 0..5 {
            for y in 0..3 {
                for x in 0..4 {
                    assert!((m.get(&[ch, y, x]) - sigmoid(f.get(&[y, x, ch]))).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn logits_match_pixel_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let f = random(&[2, 3, 4], &mut rng);
        let k = random(&[3, 4], &mut rng);
        let (m, _) = dynamic_mask_head(&k, &f, 2, 3).unwrap();
        for n in 0..3 {
            for y in 0..2 {
                for x in 0..3 {
                    let logit: f64 = (0..4).map(|c| k.get(&[n, c]) * f.get(&[y, x, c])).sum();
                    assert!((m.get(&[n, y, x]) - sigmoid(logit)).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn channel_mismatch_is_an_error() {
        assert!(dynamic_mask_head(&Tensor::<f64>::zeros(&[2, 3]), &Tensor::zeros(&[2, 2, 4]), 4, 4).is_err());
    }

    #[test]
    fn head_backward_passes_grad_check() {
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let k = random(&[3, 4], &mut rng);
            let f = random(&[2, 3, 4], &mut rng);
            let g = random(&[3, 8, 12], &mut rng);
            let (_, cache) = dynamic_mask_head(&k, &f, 8, 12).unwrap();
            let (gk, gf) = dynamic_mask_head_backward(&cache, &g).unwrap();
            let r = grad_check(
                |p: &[Tensor<f64>]| dynamic_mask_head(&p[0], &p[1], 8, 12)?.0.dot(&g),
                &[k, f],
                &[gk, gf],
                &GradCheckOptions::default(),
            )
            .unwrap();
            assert!(r.passed(), "seed {seed}: {r:?}");
        }
    }

    #[test]
    fn region_heads_pass_grad_check() {
        use crate::gradcheck::grad_check_module;
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let heads = RegionHeads::<f64>::init(3, &mut Init::new(seed));
            let xs = vec![
                random(&[4, 4, 3], &mut rng),
                random(&[2, 2, 3], &mut rng),
                random(&[4, 4, 3], &mut rng),
                random(&[2, 2, 3], &mut rng),
            ];
            let g = RegionMaps {
                c2: random(&[4, 4], &mut rng),
                t3: random(&[2, 2], &mut rng),
                d2: random(&[4, 4], &mut rng),
                d3: random(&[2, 2], &mut rng),
            };
            let (_, cache) = heads.forward(&xs[0], &xs[1], &xs[2], &xs[3]).unwrap();
            let mut grads = heads.zeroed();
            let gi = heads.backward(&cache, &g, &mut grads).unwrap();
            let r = grad_check_module(
                &heads,
                &xs,
                &gi,
                &grads,
                |m, x| {
                    let (y, _) = m.forward(&x[0], &x[1], &x[2], &x[3])?;
                    Ok(y.c2.dot(&g.c2)? + y.t3.dot(&g.t3)? + y.d2.dot(&g.d2)? + y.d3.dot(&g.d3)?)
                },
                &GradCheckOptions::default(),
            )
            .unwrap();
            assert!(r.passed(), "seed {seed}: {r:?}");
        }
    }
}
