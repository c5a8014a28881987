//! Depth similarity assessment: scales depth features by how well the depth
//! attention map agrees with the RGB one.

use crate::error::{Error, Result};
use crate::nn::Conv2d;
use crate::params::{join, Init, Parameterized};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// `(1 + cos(a, b)) / 2` for two flattened attention maps, in `[0, 1]`.
///
/// Returns `0.5` when either map has zero norm.
pub fn similarity_score<T: Scalar>(a: &[T], b: &[T]) -> T {
    cosine(a, b).map_or(T::of(0.5), |c| (T::one() + c) / T::of(2.0))
}

/// Cosine similarity clamped to `[-1, 1]`, `None` for a zero-norm input.
fn cosine<T: Scalar>(a: &[T], b: &[T]) -> Option<T> {
    let na = a.iter().map(|&v| v * v).sum::<T>().sqrt();
    let nb = b.iter().map(|&v| v * v).sum::<T>().sqrt();
    let denom = na * nb;
    if !(denom > T::zero()) || !denom.is_finite() {
        return None;
    }
    let dot: T = a.iter().zip(b).map(|(&x, &y)| x * y).sum();
    Some((dot / denom).max(-T::one()).min(T::one()))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dsa<T> {
    /// 1×1 convolution, `c → 1`, producing the RGB attention map.
    pub rgb_proj: Conv2d<T>,
    /// 1×1 convolution, `c → 1`, producing the depth attention map.
    pub depth_proj: Conv2d<T>,
}

#[derive(Clone, Debug)]
pub struct DsaCache<T> {
    t_rgb: Tensor<T>,
    t_depth: Tensor<T>,
    map_rgb: Tensor<T>,
    map_depth: Tensor<T>,
    /// `None` when a map had zero norm and the score fell back to 0.5.
    cos: Option<T>,
    pub score: T,
}

impl<T: Scalar> Dsa<T> {
    pub fn init(channels: usize, init: &mut Init) -> Self {
        Self {
            rgb_proj: Conv2d::init(1, channels, 1, init),
            depth_proj: Conv2d::init(1, channels, 1, init),
        }
    }

    /// Returns the calibrated depth features and the similarity score.
    pub fn forward(&self, t_rgb: &Tensor<T>, t_depth: &Tensor<T>) -> Result<(Tensor<T>, T, DsaCache<T>)> {
        if t_rgb.shape() != t_depth.shape() {
            return Err(Error::shape("dsa", t_rgb.shape(), t_depth.shape()));
        }
        let map_rgb = self.rgb_proj.forward(t_rgb)?;
        let map_depth = self.depth_proj.forward(t_depth)?;
        let cos = cosine(map_depth.data(), map_rgb.data());
        let score = cos.map_or(T::of(0.5), |c| (T::one() + c) / T::of(2.0));
        let calibrated = t_depth.scale(score);
        Ok((
            calibrated,
            score,
            DsaCache {
                t_rgb: t_rgb.clone(),
                t_depth: t_depth.clone(),
                map_rgb,
                map_depth,
                cos,
                score,
            },
        ))
    }

    /// Returns `(grad_rgb, grad_depth)`.
    pub fn backward(&self, cache: &DsaCache<T>, grad_out: &Tensor<T>, grads: &mut Self) -> Result<(Tensor<T>, Tensor<T>)> {
        let mut g_depth = grad_out.scale(cache.score);
        let mut g_rgb = Tensor::zeros(cache.t_rgb.shape());
        if let Some(cos) = cache.cos {
            let d_score = grad_out.dot(&cache.t_depth)?;
            let d_cos = d_score / T::of(2.0);
            let r = cache.map_rgb.data();
            let d = cache.map_depth.data();
            let nr = r.iter().map(|&v| v * v).sum::<T>().sqrt();
            let nd = d.iter().map(|&v| v * v).sum::<T>().sqrt();
            let inv = T::one() / (nr * nd);
            let g_map_rgb = Tensor::from_fn(cache.map_rgb.shape(), |i| d_cos * (d[i] * inv - cos * r[i] / (nr * nr)));
            let g_map_depth = Tensor::from_fn(cache.map_depth.shape(), |i| d_cos * (r[i] * inv - cos * d[i] / (nd * nd)));
            g_rgb = self.rgb_proj.backward(&cache.t_rgb, &g_map_rgb, &mut grads.rgb_proj)?;
            g_depth.add_assign(&self.depth_proj.backward(&cache.t_depth, &g_map_depth, &mut grads.depth_proj)?)?;
        }
        Ok((g_rgb, g_depth))
    }
}

impl<T: Scalar> Parameterized<T> for Dsa<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>)) {
        self.rgb_proj.visit(&join(prefix, "rgb_proj"), f);
        self.depth_proj.visit(&join(prefix, "depth_proj"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        self.rgb_proj.visit_mut(&join(prefix, "rgb_proj"), f);
        self.depth_proj.visit_mut(&join(prefix, "depth_proj"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{grad_check, GradCheckOptions};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn reference_angles() {
        assert!((similarity_score::<f64>(&[1.0, 2.0], &[1.0, 2.0]) - 1.0).abs() < 1e-12);
        assert!(similarity_score::<f64>(&[1.0, 2.0], &[-1.0, -2.0]).abs() < 1e-12);
        assert!((similarity_score::<f64>(&[1.0, 0.0], &[0.0, 1.0]) - 0.5).abs() < 1e-12);
        assert_eq!(similarity_score(&[0.0, 0.0], &[0.0, 1.0]), 0.5);
    }

    #[test]
    fn shared_projection_gives_identity_calibration() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut dsa = Dsa::<f64>::init(5, &mut Init::new(1));
        // Without bias, negated features give exactly negated maps.
        dsa.rgb_proj.bias.fill(0.0);
        dsa.depth_proj = dsa.rgb_proj.clone();
        let t = random(&[3, 4, 5], &mut rng);
        let (cal, score, _) = dsa.forward(&t, &t).unwrap();
        assert!((score - 1.0).abs() < 1e-12);
        assert!(cal.sub(&t).unwrap().max_abs() < 1e-12);

        let neg = t.scale(-1.0);
        let (cal, score, _) = dsa.forward(&t, &neg).unwrap();
        assert!(score.abs() < 1e-12);
        assert!(cal.max_abs() < 1e-12);
    }

    #[test]
    fn zero_features_fall_back_to_half() {
        let mut dsa = Dsa::<f64>::init(2, &mut Init::new(0));
        dsa.rgb_proj.bias.fill(0.0);
        let t = Tensor::zeros(&[2, 2, 2]);
        let (_, score, _) = dsa.forward(&t, &Tensor::full(&[2, 2, 2], 1.0)).unwrap();
        assert_eq!(score, 0.5);
    }

    #[test]
    fn backward_passes_grad_check() {
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let dsa = Dsa::<f64>::init(4, &mut Init::new(seed));
            let tr = random(&[3, 5, 4], &mut rng);
            let td = random(&[3, 5, 4], &mut rng);
            let g = random(&[3, 5, 4], &mut rng);
            let (_, _, cache) = dsa.forward(&tr, &td).unwrap();
            let mut grads = dsa.zeroed();
            let (gr, gd) = dsa.backward(&cache, &g, &mut grads).unwrap();
            let r = grad_check(
                |p: &[Tensor<f64>]| {
                    let dsa = Dsa {
                        rgb_proj: Conv2d::new(p[2].clone(), p[3].clone())?,
                        depth_proj: Conv2d::new(p[4].clone(), p[5].clone())?,
                    };
                    dsa.forward(&p[0], &p[1])?.0.dot(&g)
                },
                &[
                    tr.clone(),
                    td.clone(),
                    dsa.rgb_proj.weight.clone(),
                    dsa.rgb_proj.bias.clone(),
                    dsa.depth_proj.weight.clone(),
                    dsa.depth_proj.bias.clone(),
                ],
                &[gr, gd, grads.rgb_proj.weight, grads.rgb_proj.bias, grads.depth_proj.weight, grads.depth_proj.bias],
                &GradCheckOptions::default(),
            )
            .unwrap();
            assert!(r.passed(), "seed {seed}: {r:?}");
        }
    }

    proptest! {
        #[test]
        fn score_in_unit_interval_and_scale_invariant(
            a in proptest::collection::vec(-10.0f64..10.0, 12),
            b in proptest::collection::vec(-10.0f64..10.0, 12),
            lambda in 1e-3f64..1e3,
        ) {
            let s = similarity_score(&a, &b);
            prop_assert!((0.0..=1.0).contains(&s));
            let scaled: Vec<f64> = b.iter().map(|v| v * lambda).collect();
            prop_assert!((similarity_score(&a, &scaled) - s).abs() < 1e-10);
        }
    }
}
