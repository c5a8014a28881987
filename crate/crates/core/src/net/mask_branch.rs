use super::dsa::{Dsa, DsaCache};
use super::wsf::{Wsf, WsfCache};
use crate::error::{Error, Result};
use crate::nn::{bilinear_resize_backward, bilinear_upsample_x2, Conv2d};
use crate::params::{join, Init, Parameterized};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Fuses the two feature scales into the shared 1/4-scale mask feature.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskBranch<T> {
    /// Calibrates the 1/8-scale depth features.
    pub dsa_high: Dsa<T>,
    /// Calibrates the 1/4-scale depth features.
    pub dsa_low: Dsa<T>,
    pub wsf_high: Wsf<T>,
    pub wsf_low: Wsf<T>,
    pub fuse_conv3: Conv2d<T>,
    pub fuse_conv1: Conv2d<T>,
}

#[derive(Clone, Debug)]
pub struct MaskBranchCache<T> {
    pub dsa_high: DsaCache<T>,
    pub dsa_low: DsaCache<T>,
    wsf_high: WsfCache<T>,
    wsf_low: WsfCache<T>,
    high_size: (usize, usize),
    fused: Tensor<T>,
    hidden: Tensor<T>,
}

/// Input features of the mask branch.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskInputs<'a, T> {
    pub c2: &'a Tensor<T>,
    pub t3: &'a Tensor<T>,
    pub d2: &'a Tensor<T>,
    pub t3_depth: &'a Tensor<T>,
}

/// Gradients for each of the [`MaskInputs`].
#[derive(Clone, Debug, PartialEq)]
pub struct MaskInputGrads<T> {
    pub c2: Tensor<T>,
    pub t3: Tensor<T>,
    pub d2: Tensor<T>,
    pub t3_depth: Tensor<T>,
}

impl<T: Scalar> MaskBranch<T> {
    pub fn init(channels: usize, groups: usize, init: &mut Init) -> Result<Self> {
        Ok(Self {
            dsa_high: Dsa::init(channels, init),
            dsa_low: Dsa::init(channels, init),
            wsf_high: Wsf::init(channels, groups, init)?,
            wsf_low: Wsf::init(channels, groups, init)?,
            fuse_conv3: Conv2d::init(3, channels, channels, init),
            fuse_conv1: Conv2d::init(1, channels, channels, init),
        })
    }

    pub fn forward(&self, x: &MaskInputs<'_, T>) -> Result<(Tensor<T>, MaskBranchCache<T>)> {
        let (h3, w3, _) = x.t3.dims3()?;
        let (h2, w2, _) = x.c2.dims3()?;
        if h2 != 2 * h3 || w2 != 2 * w3 {
            return Err(Error::shape("mask branch scales", x.c2.shape(), x.t3.shape()));
        }
        let (t3_depth, _, dsa_high) = self.dsa_high.forward(x.t3, x.t3_depth)?;
        let (d2, _, dsa_low) = self.dsa_low.forward(x.c2, x.d2)?;
        let (f3, wsf_high) = self.wsf_high.forward(x.t3, &t3_depth)?;
        let (f2, wsf_low) = self.wsf_low.forward(x.c2, &d2)?;
        let fused = bilinear_upsample_x2(&f3)?.add(&f2)?;
        let hidden = self.fuse_conv3.forward(&fused)?;
        let out = self.fuse_conv1.forward(&hidden)?;
        Ok((
            out,
            MaskBranchCache {
                dsa_high,
                dsa_low,
                wsf_high,
                wsf_low,
                high_size: (h3, w3),
                fused,
                hidden,
            },
        ))
    }

    pub fn backward(&self, cache: &MaskBranchCache<T>, grad_out: &Tensor<T>, grads: &mut Self) -> Result<MaskInputGrads<T>> {
        let g = self.fuse_conv1.backward(&cache.hidden, grad_out, &mut grads.fuse_conv1)?;
        let g_fused = self.fuse_conv3.backward(&cache.fused, &g, &mut grads.fuse_conv3)?;
        let (h3, w3) = cache.high_size;
        let g_f3 = bilinear_resize_backward(&g_fused, h3, w3)?;

        let (mut g_c2, g_d2m) = self.wsf_low.backward(&cache.wsf_low, &g_fused, &mut grads.wsf_low)?;
        let (mut g_t3, g_t3dm) = self.wsf_high.backward(&cache.wsf_high, &g_f3, &mut grads.wsf_high)?;
        let (g_c2_dsa, g_d2) = self.dsa_low.backward(&cache.dsa_low, &g_d2m, &mut grads.dsa_low)?;
        let (g_t3_dsa, g_t3_depth) = self.dsa_high.backward(&cache.dsa_high, &g_t3dm, &mut grads.dsa_high)?;
        g_c2.add_assign(&g_c2_dsa)?;
        g_t3.add_assign(&g_t3_dsa)?;
        Ok(MaskInputGrads {
            c2: g_c2,
            t3: g_t3,
            d2: g_d2,
            t3_depth: g_t3_depth,
        })
    }
}

impl<T: Scalar> Parameterized<T> for MaskBranch<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>)) {
        self.dsa_high.visit(&join(prefix, "dsa_high"), f);
        self.dsa_low.visit(&join(prefix, "dsa_low"), f);
        self.wsf_high.visit(&join(prefix, "wsf_high"), f);
        self.wsf_low.visit(&join(prefix, "wsf_low"), f);
        self.fuse_conv3.visit(&join(prefix, "fuse_conv3"), f);
        self.fuse_conv1.visit(&join(prefix, "fuse_conv1"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        self.dsa_high.visit_mut(&join(prefix, "dsa_high"), f);
        self.dsa_low.visit_mut(&join(prefix, "dsa_low"), f);
        self.wsf_high.visit_mut(&join(prefix, "wsf_high"), f);
        self.wsf_low.visit_mut(&join(prefix, "wsf_low"), f);
        self.fuse_conv3.visit_mut(&join(prefix, "fuse_conv3"), f);
        self.fuse_conv1.visit_mut(&join(prefix, "fuse_conv1"), f);
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
    fn output_is_quarter_scale_and_finite() {
        for seed in 0..50u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mb = MaskBranch::<f64>::init(4, 2, &mut Init::new(seed)).unwrap();
            let c2 = random(&[4, 6, 4], &mut rng);
            let d2 = random(&[4, 6, 4], &mut rng);
            let t3 = random(&[2, 3, 4], &mut rng);
            let t3d = random(&[2, 3, 4], &mut rng);
            let (f, _) = mb
                .forward(&MaskInputs { c2: &c2, t3: &t3, d2: &d2, t3_depth: &t3d })
                .unwrap();
            assert_eq!(f.shape(), &[4, 6, 4]);
            assert!(f.all_finite());
        }
    }

    #[test]
    fn dsa_modules_are_distinct() {
        let mb = MaskBranch::<f64>::init(4, 2, &mut Init::new(0)).unwrap();
        assert_ne!(mb.dsa_high, mb.dsa_low);
        let names: Vec<String> = mb.named_params().into_iter().map(|(n, _)| n).collect();
        assert!(names.iter().any(|n| n.starts_with("dsa_high.")));
        assert!(names.iter().any(|n| n.starts_with("dsa_low.")));
    }

    #[test]
    fn scale_mismatch_is_an_error() {
        let mb = MaskBranch::<f64>::init(4, 2, &mut Init::new(0)).unwrap();
        let a = Tensor::zeros(&[4, 6, 4]);
        let b = Tensor::zeros(&[3, 3, 4]);
        assert!(mb.forward(&MaskInputs { c2: &a, t3: &b, d2: &a, t3_depth: &b }).is_err());
    }

    #[test]
    fn backward_passes_grad_check() {
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mb = MaskBranch::<f64>::init(2, 1, &mut Init::new(seed)).unwrap();
            let xs = vec![
                random(&[4, 4, 2], &mut rng),
                random(&[2, 2, 2], &mut rng),
                random(&[4, 4, 2], &mut rng),
                random(&[2, 2, 2], &mut rng),
            ];
            let g = random(&[4, 4, 2], &mut rng);
            let inputs = MaskInputs { c2: &xs[0], t3: &xs[1], d2: &xs[2], t3_depth: &xs[3] };
            let (_, cache) = mb.forward(&inputs).unwrap();
            let mut grads = mb.zeroed();
            let gi = mb.backward(&cache, &g, &mut grads).unwrap();
            let r = grad_check_module(
                &mb,
                &xs,
                &[gi.c2, gi.t3, gi.d2, gi.t3_depth],
                &grads,
                |m, x| {
                    let inputs = MaskInputs { c2: &x[0], t3: &x[1], d2: &x[2], t3_depth: &x[3] };
                    m.forward(&inputs)?.0.dot(&g)
                },
                &GradCheckOptions::default(),
            )
            .unwrap();
            assert!(r.passed(), "seed {seed}: {r:?}");
        }
    }
}
