use crate::error::{Error, Result};
use crate::params::{join, Init, Parameterized};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Affine map `x · W + b` applied to each row of an `n × c_in` matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear<T> {
    /// `c_in × c_out`.
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> Linear<T> {
    pub fn new(weight: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        let (_, c_out) = weight.dims2()?;
        if bias.shape() != [c_out] {
            return Err(Error::shape("linear bias", bias.shape(), &[c_out]));
        }
        Ok(Self { weight, bias })
    }

    pub fn init(c_in: usize, c_out: usize, init: &mut Init) -> Self {
        let weight = init.uniform(&[c_in, c_out], c_in);
        let bias = init.uniform(&[c_out], c_in);
        Self { weight, bias }
    }

    pub fn in_features(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn out_features(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut y = x.matmul(&self.weight)?;
        let c = self.out_features();
        for row in y.data_mut().chunks_mut(c) {
            for (v, &b) in row.iter_mut().zip(self.bias.data()) {
                *v += b;
            }
        }
        Ok(y)
    }

    pub fn backward(&self, x: &Tensor<T>, grad_out: &Tensor<T>, grads: &mut Self) -> Result<Tensor<T>> {
        grads.weight.add_assign(&x.transpose()?.matmul(grad_out)?)?;
        let c = self.out_features();
        let db = grads.bias.data_mut();
        for row in grad_out.data().chunks(c) {
            for (b, &g) in db.iter_mut().zip(row) {
                *b += g;
            }
        }
        grad_out.matmul(&self.weight.transpose()?)
    }
}

impl<T: Scalar> Parameterized<T> for Linear<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>)) {
        f(join(prefix, "weight"), &self.weight);
        f(join(prefix, "bias"), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        f(join(prefix, "weight"), &mut self.weight);
        f(join(prefix, "bias"), &mut self.bias);
    }
}
