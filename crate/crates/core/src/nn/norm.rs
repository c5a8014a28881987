use super::conv::Conv2d;
use crate::error::{Error, Result};
use crate::params::{join, Init, Parameterized};
use crate::scalar::Scalar;
use crate::tensor::{relu_backward, Tensor};

pub const GROUP_NORM_EPS: f64 = 1e-5;

/// Group count used for `channels`: 8 at desk scale, 32 above 64 channels.
pub fn default_groups(channels: usize) -> usize {
    if channels > 64 {
        32
    } else {
        8
    }
}

/// Group normalization over `h × w × c` with per-channel affine.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupNorm<T> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub groups: usize,
}

#[derive(Clone, Debug)]
pub struct GroupNormCache<T> {
    /// Normalized input before scale and shift.
    pub x_hat: Tensor<T>,
    inv_std: Vec<T>,
}

impl<T: Scalar> GroupNorm<T> {
    pub fn new(channels: usize, groups: usize) -> Result<Self> {
        if groups == 0 || channels % groups != 0 {
            return Err(Error::invalid(
                "group_norm",
                format!("{groups} groups do not divide {channels} channels"),
            ));
        }
        Ok(Self {
            gamma: Tensor::full(&[channels], T::one()),
            beta: Tensor::zeros(&[channels]),
            groups,
        })
    }

    pub fn channels(&self) -> usize {
        self.gamma.numel()
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<(Tensor<T>, GroupNormCache<T>)> {
        let (h, w, c) = x.dims3()?;
        if c != self.channels() {
            return Err(Error::shape("group_norm", x.shape(), self.gamma.shape()));
        }
        let cg = c / self.groups;
        let m = T::of_usize(h * w * cg);
        let eps = T::of(GROUP_NORM_EPS);
        let xd = x.data();
        let mut x_hat = vec![T::zero(); xd.len()];
        let mut inv_std = Vec::with_capacity(self.groups);
        for g in 0..self.groups {
            let chans = g * cg..(g + 1) * cg;
            let mut mean = T::zero();
            for px in xd.chunks(c) {
                mean += px[chans.clone()].iter().copied().sum::<T>();
            }
            mean /= m;
            let mut var = T::zero();
            for px in xd.chunks(c) {
                for &v in &px[chans.clone()] {
                    var += (v - mean) * (v - mean);
                }
            }
            var /= m;
            let is = T::one() / (var + eps).sqrt();
            inv_std.push(is);
            for (out, px) in x_hat.chunks_mut(c).zip(xd.chunks(c)) {
                for ch in chans.clone() {
                    out[ch] = (px[ch] - mean) * is;
                }
            }
        }
        let x_hat = Tensor::from_parts(vec![h, w, c], x_hat);
        let gamma = self.gamma.data();
        let beta = self.beta.data();
        let mut y = x_hat.data().to_vec();
        for px in y.chunks_mut(c) {
            for ((v, &gm), &bt) in px.iter_mut().zip(gamma).zip(beta) {
                *v = *v * gm + bt;
            }
        }
        Ok((Tensor::from_parts(vec![h, w, c], y), GroupNormCache { x_hat, inv_std }))
    }

    pub fn backward(&self, cache: &GroupNormCache<T>, grad_out: &Tensor<T>, grads: &mut Self) -> Result<Tensor<T>> {
        let (h, w, c) = cache.x_hat.dims3()?;
        if grad_out.shape() != cache.x_hat.shape() {
            return Err(Error::shape("group_norm backward", grad_out.shape(), cache.x_hat.shape()));
        }
        let cg = c / self.groups;
        let m = T::of_usize(h * w * cg);
        let xh = cache.x_hat.data();
        let gd = grad_out.data();
        {
            let dgamma = grads.gamma.data_mut();
            for (px_g, px_x) in gd.chunks(c).zip(xh.chunks(c)) {
                for ch in 0..c {
                    dgamma[ch] += px_g[ch] * px_x[ch];
                }
            }
            let dbeta = grads.beta.data_mut();
            for px_g in gd.chunks(c) {
                for ch in 0..c {
                    dbeta[ch] += px_g[ch];
                }
            }
        }
        let gamma = self.gamma.data();
        let mut dx = vec![T::zero(); gd.len()];
        for g in 0..self.groups {
            let chans = g * cg..(g + 1) * cg;
            let mut mean_dxh = T::zero();
            let mut mean_dxh_xh = T::zero();
            for (px_g, px_x) in gd.chunks(c).zip(xh.chunks(c)) {
                for ch in chans.clone() {
                    let dxh = px_g[ch] * gamma[ch];
                    mean_dxh += dxh;
                    mean_dxh_xh += dxh * px_x[ch];
                }
            }
            mean_dxh /= m;
            mean_dxh_xh /= m;
            let is = cache.inv_std[g];
            for ((out, px_g), px_x) in dx.chunks_mut(c).zip(gd.chunks(c)).zip(xh.chunks(c)) {
                for ch in chans.clone() {
                    let dxh = px_g[ch] * gamma[ch];
                    out[ch] = is * (dxh - mean_dxh - px_x[ch] * mean_dxh_xh);
                }
            }
        }
        Ok(Tensor::from_parts(vec![h, w, c], dx))
    }
}

impl<T: Scalar> Parameterized<T> for GroupNorm<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>)) {
        f(join(prefix, "gamma"), &self.gamma);
        f(join(prefix, "beta"), &self.beta);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        f(join(prefix, "gamma"), &mut self.gamma);
        f(join(prefix, "beta"), &mut self.beta);
    }
}

/// 3×3 convolution, group normalization, ReLU.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvNormRelu<T> {
    pub conv: Conv2d<T>,
    pub norm: GroupNorm<T>,
}

#[derive(Clone, Debug)]
pub struct ConvNormReluCache<T> {
    input: Tensor<T>,
    norm: GroupNormCache<T>,
    pre_relu: Tensor<T>,
}

impl<T: Scalar> ConvNormRelu<T> {
    pub fn init(c_in: usize, c_out: usize, groups: usize, init: &mut Init) -> Result<Self> {
        Ok(Self {
            conv: Conv2d::init(3, c_in, c_out, init),
            norm: GroupNorm::new(c_out, groups)?,
        })
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<(Tensor<T>, ConvNormReluCache<T>)> {
        let z = self.conv.forward(x)?;
        let (n, norm) = self.norm.forward(&z)?;
        let y = n.relu();
        Ok((
            y,
            ConvNormReluCache {
                input: x.clone(),
                norm,
                pre_relu: n,
            },
        ))
    }

    pub fn backward(&self, cache: &ConvNormReluCache<T>, grad_out: &Tensor<T>, grads: &mut Self) -> Result<Tensor<T>> {
        let g = relu_backward(&cache.pre_relu, grad_out)?;
        let g = self.norm.backward(&cache.norm, &g, &mut grads.norm)?;
        self.conv.backward(&cache.input, &g, &mut grads.conv)
    }
}

impl<T: Scalar> Parameterized<T> for ConvNormRelu<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>)) {
        self.conv.visit(&join(prefix, "conv"), f);
        self.norm.visit(&join(prefix, "norm"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        self.conv.visit_mut(&join(prefix, "conv"), f);
        self.norm.visit_mut(&join(prefix, "norm"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{grad_check, GradCheckOptions};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        Tensor::from_fn(shape, |_| rng.gen_range(-2.0..2.0))
    }

    #[test]
    fn groups_must_divide_channels() {
        assert!(GroupNorm::<f64>::new(12, 8).is_err());
        assert_eq!(default_groups(16), 8);
        assert_eq!(default_groups(256), 32);
    }

    #[test]
    fn normalized_groups_have_zero_mean_unit_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random(&[6, 7, 16], &mut rng).map(|v| 3.0 * v + 1.5);
        let gn = GroupNorm::<f64>::new(16, 8).unwrap();
        let (_, cache) = gn.forward(&x).unwrap();
        let xh = cache.x_hat.data();
        for g in 0..8 {
            let vals: Vec<f64> = xh.chunks(16).flat_map(|px| px[2 * g..2 * g + 2].to_vec()).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(mean.abs() < 1e-10);
            // eps in the denominator shrinks the variance by var / (var + eps).
            assert!((var - 1.0).abs() < 1e-4, "var {var}");
        }
    }

    #[test]
    fn unit_variance_within_1e8_when_eps_negligible() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = random(&[5, 5, 8], &mut rng).scale(1000.0);
        let (_, cache) = GroupNorm::<f64>::new(8, 8).unwrap().forward(&x).unwrap();
        for ch in 0..8 {
            let vals: Vec<f64> = cache.x_hat.data().chunks(8).map(|px| px[ch]).collect();
            let var = vals.iter().map(|v| v * v).sum::<f64>() / vals.len() as f64;
            assert!((var - 1.0).abs() < 1e-8, "var {var}");
        }
    }

    #[test]
    fn backward_passes_grad_check() {
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let mut gn = GroupNorm::<f64>::new(8, [1, 2, 4, 8][seed as usize % 4]).unwrap();
            gn.gamma = random(&[8], &mut rng);
            gn.beta = random(&[8], &mut rng);
            let x = random(&[3, 4, 8], &mut rng);
            let g = random(&[3, 4, 8], &mut rng);
            let (_, cache) = gn.forward(&x).unwrap();
            let mut grads = gn.zeroed();
            let dx = gn.backward(&cache, &g, &mut grads).unwrap();
            let groups = gn.groups;
            let report = grad_check(
                |p: &[Tensor<f64>]| {
                    let gn = GroupNorm { gamma: p[1].clone(), beta: p[2].clone(), groups };
                    gn.forward(&p[0])?.0.dot(&g)
                },
                &[x, gn.gamma.clone(), gn.beta.clone()],
                &[dx, grads.gamma, grads.beta],
                &GradCheckOptions::default(),
            )
            .unwrap();
            assert!(report.passed(), "seed {seed}: {report:?}");
        }
    }

    #[test]
    fn conv_norm_relu_backward_passes_grad_check() {
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
            let mut init = Init::new(seed);
            let block = ConvNormRelu::<f64>::init(3, 8, 4, &mut init).unwrap();
            let x = random(&[4, 5, 3], &mut rng);
            let g = random(&[4, 5, 8], &mut rng);
            let (_, cache) = block.forward(&x).unwrap();
            let mut grads = block.zeroed();
            let dx = block.backward(&cache, &g, &mut grads).unwrap();
            let report = grad_check(
                |p: &[Tensor<f64>]| {
                    let mut b = block.clone();
                    b.conv.weight = p[1].clone();
                    b.conv.bias = p[2].clone();
                    b.forward(&p[0])?.0.dot(&g)
                },
                &[x, block.conv.weight.clone(), block.conv.bias.clone()],
                &[dx, grads.conv.weight, grads.conv.bias],
                &GradCheckOptions::default(),
            )
            .unwrap();
            assert!(report.passed(), "seed {seed}: {report:?}");
        }
    }
}
