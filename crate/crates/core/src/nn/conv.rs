use crate::error::{Error, Result};
use crate::flops;
use crate::params::{join, Init, Parameterized};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Same-padded, stride-1 2-D convolution over `h × w × c` tensors.
///
/// `weight` is laid out `k × k × c_in × c_out`; padding is `(k - 1) / 2` zeros.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new(weight: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        let [k, k2, _, c_out] = weight.shape()[..] else {
            return Err(Error::invalid("conv2d", format!("weight must be k×k×cin×cout, got {:?}", weight.shape())));
        };
        if k != k2 || ![1, 3, 7].contains(&k) {
            return Err(Error::invalid("conv2d", format!("unsupported kernel {k}×{k2}")));
        }
        if bias.shape() != [c_out] {
            return Err(Error::shape("conv2d bias", bias.shape(), &[c_out]));
        }
        Ok(Self { weight, bias })
    }

    pub fn init(k: usize, c_in: usize, c_out: usize, init: &mut Init) -> Self {
        let fan_in = k * k * c_in;
        let weight = init.uniform(&[k, k, c_in, c_out], fan_in);
        let bias = init.uniform(&[c_out], fan_in);
        Self::new(weight, bias).expect("valid conv shape")
    }

    /// 1×1 kernel copying every channel, zero bias.
    pub fn identity(c: usize) -> Self {
        let weight = Tensor::eye(c).into_reshape(&[1, 1, c, c]).expect("eye reshape");
        Self::new(weight, Tensor::zeros(&[c])).expect("valid")
    }

    pub fn kernel_size(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[2]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[3]
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<(usize, usize, usize)> {
        let (h, w, c) = x.dims3()?;
        if c != self.in_channels() {
            return Err(Error::shape("conv2d channels", x.shape(), self.weight.shape()));
        }
        Ok((h, w, c))
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (h, w, ci) = self.check_input(x)?;
        let k = self.kernel_size();
        let co = self.out_channels();
        let p = (k - 1) / 2;
        flops::record((h * w * k * k * ci * co) as u64);
        let xd = x.data();
        let wd = self.weight.data();
        let mut out = Vec::with_capacity(h * w * co);
        for y in 0..h {
            for xx in 0..w {
                let start = out.len();
                out.extend_from_slice(self.bias.data());
                let px = &mut out[start..];
                for dy in 0..k {
                    let Some(iy) = (y + dy).checked_sub(p).filter(|&v| v < h) else {
                        continue;
                    };
                    for dx in 0..k {
                        let Some(ix) = (xx + dx).checked_sub(p).filter(|&v| v < w) else {
                            continue;
                        };
                        let xin = &xd[(iy * w + ix) * ci..(iy * w + ix + 1) * ci];
                        let block = &wd[(dy * k + dx) * ci * co..(dy * k + dx + 1) * ci * co];
                        for (i, &a) in xin.iter().enumerate() {
                            for (o, &wv) in px.iter_mut().zip(&block[i * co..(i + 1) * co]) {
                                *o += a * wv;
                            }
                        }
                    }
                }
            }
        }
        Ok(Tensor::from_parts(vec![h, w, co], out))
    }

    /// Accumulates parameter gradients into `grads`; returns the input gradient.
    pub fn backward(&self, x: &Tensor<T>, grad_out: &Tensor<T>, grads: &mut Self) -> Result<Tensor<T>> {
        let (h, w, ci) = self.check_input(x)?;
        let k = self.kernel_size();
        let co = self.out_channels();
        if grad_out.shape() != [h, w, co] {
            return Err(Error::shape("conv2d backward", grad_out.shape(), &[h, w, co]));
        }
        let p = (k - 1) / 2;
        let xd = x.data();
        let gd = grad_out.data();
        let wd = self.weight.data();
        let mut dx = vec![T::zero(); h * w * ci];
        {
            let db = grads.bias.data_mut();
            for px in gd.chunks(co) {
                for (b, &g) in db.iter_mut().zip(px) {
                    *b += g;
                }
            }
        }
        let dw = grads.weight.data_mut();
        for y in 0..h {
            for xx in 0..w {
                let g = &gd[(y * w + xx) * co..(y * w + xx + 1) * co];
                for dy in 0..k {
                    let Some(iy) = (y + dy).checked_sub(p).filter(|&v| v < h) else {
                        continue;
                    };
                    for dx_ in 0..k {
                        let Some(ix) = (xx + dx_).checked_sub(p).filter(|&v| v < w) else {
                            continue;
                        };
                        let base = (iy * w + ix) * ci;
                        let off = (dy * k + dx_) * ci * co;
                        for i in 0..ci {
                            let a = xd[base + i];
                            let row = off + i * co;
                            let mut acc = T::zero();
                            for o in 0..co {
                                dw[row + o] += a * g[o];
                                acc += g[o] * wd[row + o];
                            }
                            dx[base + i] += acc;
                        }
                    }
                }
            }
        }
        Ok(Tensor::from_parts(vec![h, w, ci], dx))
    }
}

impl<T: Scalar> Parameterized<T> for Conv2d<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>)) {
        f(join(prefix, "weight"), &self.weight);
        f(join(prefix, "bias"), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        f(join(prefix, "weight"), &mut self.weight);
        f(join(prefix, "bias"), &mut self.bias);
    }
}
