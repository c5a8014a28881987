use crate::error::Result;
use crate::nn::{avg_pool2, avg_pool2_backward, ConvNormRelu, ConvNormReluCache};
use crate::params::{join, Init, Parameterized};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Placeholder backbone: three conv-norm-ReLU blocks, each followed by 2×2
/// mean pooling, yielding features at 1/4 and 1/8 of the input resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct StubEncoder<T> {
    pub blocks: Vec<ConvNormRelu<T>>,
}

#[derive(Clone, Debug)]
pub struct StubEncoderCache<T> {
    blocks: Vec<ConvNormReluCache<T>>,
}

impl<T: Scalar> StubEncoder<T> {
    pub const DEPTH: usize = 3;

    pub fn init(in_channels: usize, channels: usize, groups: usize, init: &mut Init) -> Result<Self> {
        let mut blocks = Vec::with_capacity(Self::DEPTH);
        let mut c_in = in_channels;
        for _ in 0..Self::DEPTH {
            blocks.push(ConvNormRelu::init(c_in, channels, groups, init)?);
            c_in = channels;
        }
        Ok(Self { blocks })
    }

    /// Returns `(quarter_scale, eighth_scale)` features.
    pub fn forward(&self, x: &Tensor<T>) -> Result<((Tensor<T>, Tensor<T>), StubEncoderCache<T>)> {
        let mut caches = Vec::with_capacity(self.blocks.len());
        let mut outs = Vec::with_capacity(self.blocks.len());
        let mut a = x.clone();
        for block in &self.blocks {
            let (z, cache) = block.forward(&a)?;
            caches.push(cache);
            a = avg_pool2(&z)?;
            outs.push(a.clone());
        }
        let eighth = outs.pop().expect("three blocks");
        let quarter = outs.pop().expect("three blocks");
        Ok(((quarter, eighth), StubEncoderCache { blocks: caches }))
    }

    /// Returns the gradient with respect to the input image.
    pub fn backward(
        &self,
        cache: &StubEncoderCache<T>,
        grad_quarter: &Tensor<T>,
        grad_eighth: &Tensor<T>,
        grads: &mut Self,
    ) -> Result<Tensor<T>> {
        let last = self.blocks.len() - 1;
        let mut g = grad_eighth.clone();
        for i in (0..self.blocks.len()).rev() {
            if i == last - 1 {
                g.add_assign(grad_quarter)?;
            }
            let dz = avg_pool2_backward(&g)?;
            g = self.blocks[i].backward(&cache.blocks[i], &dz, &mut grads.blocks[i])?;
        }
        Ok(g)
    }
}

impl<T: Scalar> Parameterized<T> for StubEncoder<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>)) {
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit(&join(prefix, &format!("block{i}")), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_mut(&join(prefix, &format!("block{i}")), f);
        }
    }
}
