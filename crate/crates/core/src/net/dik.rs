//! Dynamic interactive kernels: per-modality attention towers produce `2N`
//! soft slot maps that pool the RGB features into `N` kernel vectors.

use crate::error::{Error, Result};
use crate::nn::{coord_concat, coord_concat_backward, Conv2d, Linear};
use crate::params::{join, Init, Parameterized};
use crate::scalar::Scalar;
use crate::tensor::{sigmoid_backward, Tensor};

/// Coordinate channels, then two 3×3 convolutions (`c + 2 → c → N`) and a sigmoid.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionTower<T> {
    pub conv_a: Conv2d<T>,
    pub conv_b: Conv2d<T>,
}

#[derive(Clone, Debug)]
struct TowerCache<T> {
    with_coords: Tensor<T>,
    hidden: Tensor<T>,
    out: Tensor<T>,
}

impl<T: Scalar> AttentionTower<T> {
    fn init(c: usize, n: usize, init: &mut Init) -> Self {
        Self {
            conv_a: Conv2d::init(3, c + 2, c, init),
            conv_b: Conv2d::init(3, c, n, init),
        }
    }

    fn forward(&self, x: &Tensor<T>) -> Result<(Tensor<T>, TowerCache<T>)> {
        let with_coords = coord_concat(x)?;
        let hidden = self.conv_a.forward(&with_coords)?;
        let out = self.conv_b.forward(&hidden)?.sigmoid();
        Ok((out.clone(), TowerCache { with_coords, hidden, out }))
    }

    fn backward(&self, cache: &TowerCache<T>, grad_out: &Tensor<T>, grads: &mut Self) -> Result<Tensor<T>> {
        let g = sigmoid_backward(&cache.out, grad_out)?;
        let g = self.conv_b.backward(&cache.hidden, &g, &mut grads.conv_b)?;
        let g = self.conv_a.backward(&cache.with_coords, &g, &mut grads.conv_a)?;
        coord_concat_backward(&g)
    }
}

impl<T: Scalar> Parameterized<T> for AttentionTower<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>)) {
        self.conv_a.visit(&join(prefix, "conv_a"), f);
        self.conv_b.visit(&join(prefix, "conv_b"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        self.conv_a.visit_mut(&join(prefix, "conv_a"), f);
        self.conv_b.visit_mut(&join(prefix, "conv_b"), f);
    }
}

/// `N` kernel vectors with their confidence and objectness scores.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelSet<T> {
    /// `N × c`.
    pub kernels: Tensor<T>,
    /// `N`, each in `(0, 1)`.
    pub scores: Tensor<T>,
    /// `N`, predicted mask quality, each in `(0, 1)`.
    pub objectness: Tensor<T>,
}

impl<T: Scalar> KernelSet<T> {
    pub fn len(&self) -> usize {
        self.kernels.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dik<T> {
    pub rgb_tower: AttentionTower<T>,
    pub depth_tower: AttentionTower<T>,
    /// Mixes the `2N` slots down to `N`.
    pub slot_mix: Linear<T>,
    /// `c → c` on each kernel.
    pub channel_mix: Linear<T>,
    pub score_head: Linear<T>,
    pub objectness_head: Linear<T>,
}

#[derive(Clone, Debug)]
pub struct DikCache<T> {
    rgb: TowerCache<T>,
    depth: TowerCache<T>,
    /// `hw × 2N`.
    pub attention: Tensor<T>,
    /// `hw × c`.
    features: Tensor<T>,
    /// `2N × c`.
    pub embeddings: Tensor<T>,
    /// `embeddings / hw`.
    pooled: Tensor<T>,
    /// `N × c`, slot-mixed embeddings before the channel mix.
    mixed: Tensor<T>,
    kernels: KernelSet<T>,
}

impl<T: Scalar> Dik<T> {
    pub fn init(channels: usize, n_kernels: usize, init: &mut Init) -> Result<Self> {
        if n_kernels == 0 {
            return Err(Error::invalid("dik", "at least one kernel required"));
        }
        Ok(Self {
            rgb_tower: AttentionTower::init(channels, n_kernels, init),
            depth_tower: AttentionTower::init(channels, n_kernels, init),
            slot_mix: Linear::init(2 * n_kernels, n_kernels, init),
            channel_mix: Linear::init(channels, channels, init),
            score_head: Linear::init(channels, 1, init),
            objectness_head: Linear::init(channels, 1, init),
        })
    }

    pub fn n_kernels(&self) -> usize {
        self.slot_mix.out_features()
    }

    pub fn forward(&self, t_rgb: &Tensor<T>, t_depth: &Tensor<T>) -> Result<(KernelSet<T>, DikCache<T>)> {
        if t_rgb.shape() != t_depth.shape() {
            return Err(Error::shape("dik", t_rgb.shape(), t_depth.shape()));
        }
        let (h, w, c) = t_rgb.dims3()?;
        let n = self.n_kernels();
        let (a_rgb, rgb) = self.rgb_tower.forward(t_rgb)?;
        let (a_depth, depth) = self.depth_tower.forward(t_depth)?;
        let attention = Tensor::concat(&[&a_rgb, &a_depth], 2)?.into_reshape(&[h * w, 2 * n])?;
        let features = t_rgb.reshape(&[h * w, c])?;
        let embeddings = attention.transpose()?.matmul(&features)?;
        // The slot mix sees per-pixel averages so kernel magnitudes do not grow with resolution.
        let pooled = embeddings.scale(T::one() / T::of_usize(h * w));
        let mixed = self.slot_mix.forward(&pooled.transpose()?)?.transpose()?;
        let kernels = self.channel_mix.forward(&mixed)?;
        let scores = self.score_head.forward(&kernels)?.sigmoid().into_reshape(&[n])?;
        let objectness = self.objectness_head.forward(&kernels)?.sigmoid().into_reshape(&[n])?;
        let set = KernelSet { kernels, scores, objectness };
        Ok((
            set.clone(),
            DikCache {
                rgb,
                depth,
                attention,
                features,
                embeddings,
                pooled,
                mixed,
                kernels: set,
            },
        ))
    }

    /// Returns `(grad_rgb, grad_depth)` given gradients for kernels, scores and objectness.
    pub fn backward(
        &self,
        cache: &DikCache<T>,
        grad_kernels: &Tensor<T>,
        grad_scores: &Tensor<T>,
        grad_objectness: &Tensor<T>,
        grads: &mut Self,
    ) -> Result<(Tensor<T>, Tensor<T>)> {
        let n = self.n_kernels();
        let k = &cache.kernels;
        let (h, w, _) = cache.rgb.out.dims3()?;
        let c = cache.features.shape()[1];

        let mut g_k = grad_kernels.clone();
        let g_s = sigmoid_backward(&k.scores, grad_scores)?.into_reshape(&[n, 1])?;
        g_k.add_assign(&self.score_head.backward(&k.kernels, &g_s, &mut grads.score_head)?)?;
        let g_o = sigmoid_backward(&k.objectness, grad_objectness)?.into_reshape(&[n, 1])?;
        g_k.add_assign(&self.objectness_head.backward(&k.kernels, &g_o, &mut grads.objectness_head)?)?;

        let g_mixed = self.channel_mix.backward(&cache.mixed, &g_k, &mut grads.channel_mix)?;
        let g_emb = self
            .slot_mix
            .backward(&cache.pooled.transpose()?, &g_mixed.transpose()?, &mut grads.slot_mix)?
            .transpose()?
            .scale(T::one() / T::of_usize(h * w));

        let g_attention = cache.features.matmul(&g_emb.transpose()?)?.into_reshape(&[h, w, 2 * n])?;
        let mut g_rgb = cache.attention.matmul(&g_emb)?.into_reshape(&[h, w, c])?;
        let g_a_rgb = g_attention.slice(2, 0, n)?;
        let g_a_depth = g_attention.slice(2, n, 2 * n)?;
        g_rgb.add_assign(&self.rgb_tower.backward(&cache.rgb, &g_a_rgb, &mut grads.rgb_tower)?)?;
        let g_depth = self.depth_tower.backward(&cache.depth, &g_a_depth, &mut grads.depth_tower)?;
        Ok((g_rgb, g_depth))
    }
}

impl<T: Scalar> Parameterized<T> for Dik<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>)) {
        self.rgb_tower.visit(&join(prefix, "rgb_tower"), f);
        self.depth_tower.visit(&join(prefix, "depth_tower"), f);
        self.slot_mix.visit(&join(prefix, "slot_mix"), f);
        self.channel_mix.visit(&join(prefix, "channel_mix"), f);
        self.score_head.visit(&join(prefix, "score_head"), f);
        self.objectness_head.visit(&join(prefix, "objectness_head"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        self.rgb_tower.visit_mut(&join(prefix, "rgb_tower"), f);
        self.depth_tower.visit_mut(&join(prefix, "depth_tower"), f);
        self.slot_mix.visit_mut(&join(prefix, "slot_mix"), f);
        self.channel_mix.visit_mut(&join(prefix, "channel_mix"), f);
        self.score_head.visit_mut(&join(prefix, "score_head"), f);
        self.objectness_head.visit_mut(&join(prefix, "objectness_head"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{grad_check_module, GradCheckOptions};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn full_scale_shapes() {
        // Shape-only check at full width: c = 256, N = 50 on a tiny map.
        let dik = Dik::<f32>::init(256, 50, &mut Init::new(0)).unwrap();
        let t = Tensor::<f32>::zeros(&[2, 3, 256]);
        let (set, cache) = dik.forward(&t, &t).unwrap();
        assert_eq!(set.kernels.shape(), &[50, 256]);
        assert_eq!(set.scores.shape(), &[50]);
        assert_eq!(cache.embeddings.shape(), &[100, 256]);
        assert!(set.scores.data().iter().all(|&s| s > 0.0 && s < 1.0));
    }

    #[test]
    fn zero_rgb_features_leave_only_biases() {
        let dik = Dik::<f64>::init(4, 3, &mut Init::new(5)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (set, cache) = dik.forward(&Tensor::zeros(&[3, 4, 4]), &random(&[3, 4, 4], &mut rng)).unwrap();
        assert_eq!(cache.embeddings.max_abs(), 0.0);
        // kernels[k, :] = b_slot[k] · colsum(W_ch) + b_ch
        for k in 0..3 {
            for j in 0..4 {
                let colsum: f64 = (0..4).map(|i| dik.channel_mix.weight.get(&[i, j])).sum();
                let want = dik.slot_mix.bias.get(&[k]) * colsum + dik.channel_mix.bias.get(&[j]);
                assert!((set.kernels.get(&[k, j]) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_towers_give_half_attention() {
        let mut dik = Dik::<f64>::init(3, 2, &mut Init::new(1)).unwrap();
        dik.rgb_tower.conv_b.weight.fill(0.0);
        dik.rgb_tower.conv_b.bias.fill(0.0);
        dik.depth_tower.conv_b.weight.fill(0.0);
        dik.depth_tower.conv_b.bias.fill(0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let t = random(&[2, 3, 3], &mut rng);
        let (_, cache) = dik.forward(&t, &t).unwrap();
        assert!(cache.attention.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn embeddings_match_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let dik = Dik::<f64>::init(5, 4, &mut Init::new(9)).unwrap();
        let (h, w, c, n2) = (3, 4, 5, 8);
        let tr = random(&[h, w, c], &mut rng);
        let td = random(&[h, w, c], &mut rng);
        let (_, cache) = dik.forward(&tr, &td).unwrap();
        for k in 0..n2 {
            for ch in 0..c {
                let mut acc = 0.0;
                for p in 0..h * w {
                    acc += cache.attention.get(&[p, k]) * tr.get(&[p / w, p % w, ch]);
                }
                assert!((cache.embeddings.get(&[k, ch]) - acc).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn rejects_zero_kernels() {
        assert!(Dik::<f64>::init(4, 0, &mut Init::new(0)).is_err());
    }

    #[test]
    fn backward_passes_grad_check() {
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let dik = Dik::<f64>::init(3, 2, &mut Init::new(seed)).unwrap();
            let tr = random(&[3, 4, 3], &mut rng);
            let td = random(&[3, 4, 3], &mut rng);
            let gk = random(&[2, 3], &mut rng);
            let gs = random(&[2], &mut rng);
            let go = random(&[2], &mut rng);
            let (_, cache) = dik.forward(&tr, &td).unwrap();
            let mut grads = dik.zeroed();
            let (dr, dd) = dik.backward(&cache, &gk, &gs, &go, &mut grads).unwrap();
            let r = grad_check_module(
                &dik,
                &[tr, td],
                &[dr, dd],
                &grads,
                |m, x| {
                    let (set, _) = m.forward(&x[0], &x[1])?;
                    Ok(set.kernels.dot(&gk)? + set.scores.dot(&gs)? + set.objectness.dot(&go)?)
                },
                &GradCheckOptions::default(),
            )
            .unwrap();
            assert!(r.passed(), "seed {seed}: {r:?}");
        }
    }
}
