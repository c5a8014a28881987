//! Central-difference verification of hand-written backward passes.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::params::Parameterized;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    /// Perturbation size, must lie in `[1e-7, 1e-3]`.
    pub eps: f64,
    /// Pass threshold on the maximum relative error.
    pub tol: f64,
    /// Check at most this many randomly chosen coordinates per parameter.
    pub max_coords: Option<usize>,
    /// Seed for coordinate sampling.
    pub seed: u64,
    /// Relative-error denominators never drop below this fraction of the
    /// largest gradient magnitude across all checked tensors.
    pub rel_floor: f64,
    /// Absolute lower bound on relative-error denominators.
    pub abs_floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            tol: 1e-4,
            max_coords: None,
            seed: 0,
            rel_floor: 1e-3,
            abs_floor: 1e-8,
        }
    }
}

impl GradCheckOptions {
    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn with_eps(mut self, eps: f64) -> Self {
        self.eps = eps;
        self
    }

    pub fn sampled(mut self, max_coords: usize, seed: u64) -> Self {
        self.max_coords = Some(max_coords);
        self.seed = seed;
        self
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ParamCheck {
    pub index: usize,
    pub coords_checked: usize,
    pub max_rel_error: f64,
    /// Flat index of the worst coordinate.
    pub worst_coord: usize,
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub tol: f64,
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.max_rel_error <= self.tol)
    }
}

/// Compares `analytic[i]` against `(f(x + eps) - f(x - eps)) / 2eps` for every
/// (or a sampled subset of) coordinate of every `params[i]`.
pub fn grad_check<T, F>(
    mut f: F,
    params: &[Tensor<T>],
    analytic: &[Tensor<T>],
    opts: &GradCheckOptions,
) -> Result<GradCheckReport>
where
    T: Scalar,
    F: FnMut(&[Tensor<T>]) -> Result<T>,
{
    if !(1e-7..=1e-3).contains(&opts.eps) {
        return Err(Error::invalid("grad_check", format!("eps {} outside [1e-7, 1e-3]", opts.eps)));
    }
    if params.len() != analytic.len() {
        return Err(Error::invalid("grad_check", "one analytic gradient per parameter required"));
    }
    for (p, a) in params.iter().zip(analytic) {
        if p.shape() != a.shape() {
            return Err(Error::shape("grad_check", p.shape(), a.shape()));
        }
    }
    let mut eval = |xs: &[Tensor<T>]| -> Result<f64> {
        let v = f(xs)?.as_f64();
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite("grad_check objective".into()))
        }
    };
    eval(params)?;

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut work = params.to_vec();
    let mut report = GradCheckReport {
        tol: opts.tol,
        params: Vec::with_capacity(params.len()),
    };
    let eps = T::of(opts.eps);
    let mut sampled = Vec::with_capacity(analytic.len());
    for (pi, grad) in analytic.iter().enumerate() {
        let n = grad.numel();
        let coords: Vec<usize> = match opts.max_coords {
            Some(m) if m < n => {
                let mut v = rand::seq::index::sample(&mut rng, n, m).into_vec();
                v.sort_unstable();
                v
            }
            _ => (0..n).collect(),
        };
        let mut numeric = Vec::with_capacity(coords.len());
        for &c in &coords {
            let orig = work[pi].data()[c];
            work[pi].data_mut()[c] = orig + eps;
            let fp = eval(&work)?;
            work[pi].data_mut()[c] = orig - eps;
            let fm = eval(&work)?;
            work[pi].data_mut()[c] = orig;
            // Use the realised step, which differs from 2·eps after rounding.
            let step = ((orig + eps) - (orig - eps)).as_f64();
            numeric.push((fp - fm) / step);
        }
        sampled.push((coords, numeric));
    }

    // Parameters whose true gradient is zero (e.g. a bias ahead of a
    // normalization) only see rounding noise, so the floor is set by the
    // largest gradient anywhere in the check.
    let scale = analytic
        .iter()
        .flat_map(|g| g.data().iter().map(|v| v.as_f64().abs()))
        .chain(sampled.iter().flat_map(|(_, n)| n.iter().map(|v| v.abs())))
        .fold(0.0, f64::max);
    let floor = (opts.rel_floor * scale).max(opts.abs_floor);
    for (pi, (grad, (coords, numeric))) in analytic.iter().zip(&sampled).enumerate() {
        let mut worst: Option<(f64, usize, f64, f64)> = None;
        for (&c, &num) in coords.iter().zip(numeric) {
            let a = grad.data()[c].as_f64();
            let err = (a - num).abs() / a.abs().max(num.abs()).max(floor);
            if worst.map_or(true, |w| err > w.0) {
                worst = Some((err, c, a, num));
            }
        }
        let (max_rel_error, worst_coord, analytic_at_worst, numeric_at_worst) =
            worst.unwrap_or((0.0, 0, 0.0, 0.0));
        report.params.push(ParamCheck {
            index: pi,
            coords_checked: coords.len(),
            max_rel_error,
            worst_coord,
            analytic_at_worst,
            numeric_at_worst,
        });
    }
    Ok(report)
}

/// Grad check of a module: checks the gradients for `inputs` and for every
/// parameter of `module`, rebuilding the module from perturbed parameters.
pub fn grad_check_module<T, M, F>(
    module: &M,
    inputs: &[Tensor<T>],
    input_grads: &[Tensor<T>],
    param_grads: &M,
    mut f: F,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport>
where
    T: Scalar,
    M: Parameterized<T> + Clone,
    F: FnMut(&M, &[Tensor<T>]) -> Result<T>,
{
    let k = inputs.len();
    let mut params = inputs.to_vec();
    params.extend(module.flat_params());
    let mut analytic = input_grads.to_vec();
    analytic.extend(param_grads.flat_params());
    grad_check(
        |xs: &[Tensor<T>]| {
            let m = module.with_flat_params(&xs[k..])?;
            f(&m, &xs[..k])
        },
        &params,
        &analytic,
        opts,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_at_three() {
        let x = Tensor::new(vec![1], vec![3.0]).unwrap();
        let g = Tensor::new(vec![1], vec![6.0]).unwrap();
        let r = grad_check(|p: &[Tensor<f64>]| Ok(p[0].data()[0].powi(2)), &[x], &[g], &Default::default()).unwrap();
        assert!(r.max_rel_error() < 1e-9, "{r:?}");
        assert!(r.passed());
    }

    #[test]
    fn detects_wrong_gradient() {
        let x = Tensor::new(vec![2], vec![1.0, -2.0]).unwrap();
        let wrong = Tensor::new(vec![2], vec![2.0, -3.0]).unwrap();
        let r = grad_check(|p: &[Tensor<f64>]| Ok(p[0].dot(&p[0])?), &[x], &[wrong], &Default::default()).unwrap();
        assert!(!r.passed());
        assert_eq!(r.params[0].worst_coord, 1);
    }

    #[test]
    fn rejects_bad_eps_and_non_finite() {
        let x = Tensor::new(vec![1], vec![0.0]).unwrap();
        let opts = GradCheckOptions::default().with_eps(1e-2);
        assert!(grad_check(|_: &[Tensor<f64>]| Ok(0.0), &[x.clone()], &[x.clone()], &opts).is_err());
        let r = grad_check(
            |p: &[Tensor<f64>]| Ok(1.0 / p[0].data()[0]),
            &[x.clone()],
            &[x],
            &Default::default(),
        );
        assert!(matches!(r, Err(Error::NonFinite(_))));
    }

    #[test]
    fn sampling_limits_coordinates() {
        let x = Tensor::<f64>::from_fn(&[50], |i| i as f64 * 0.1);
        let g = x.scale(2.0);
        let opts = GradCheckOptions::default().sampled(7, 3);
        let r = grad_check(|p: &[Tensor<f64>]| p[0].dot(&p[0]), &[x], &[g], &opts).unwrap();
        assert_eq!(r.params[0].coords_checked, 7);
        assert!(r.passed());
    }
}
