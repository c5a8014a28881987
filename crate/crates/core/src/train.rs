//! Synthetic RGB-D samples and plain gradient-descent training.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::eval::mask_iou;
use crate::loss::{total_loss_with_grads, LossBreakdown, LossWeights};
use crate::matching::{hungarian, matching_cost, Assignment};
use crate::net::CalibNet;
use crate::params::Parameterized;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// One RGB-D image with instance masks.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample<T> {
    /// `H × W × 3`, values in `[0, 1]`.
    pub rgb: Tensor<T>,
    /// `H × W × 1`, larger is nearer.
    pub depth: Tensor<T>,
    /// Binary `H × W` masks, one per instance.
    pub instances: Vec<Tensor<T>>,
}

impl<T: Scalar> Sample<T> {
    pub fn size(&self) -> (usize, usize) {
        (self.rgb.shape()[0], self.rgb.shape()[1])
    }
}

const PALETTE: [[f64; 3]; 4] = [[0.9, 0.2, 0.2], [0.2, 0.8, 0.3], [0.25, 0.35, 0.95], [0.9, 0.85, 0.2]];

/// Draws `n_instances` non-overlapping axis-aligned boxes with distinct
/// colors and depths on a smooth background.
pub fn synthetic_sample<T: Scalar>(height: usize, width: usize, n_instances: usize, seed: u64) -> Result<Sample<T>> {
    if n_instances == 0 || n_instances > 4 {
        return Err(Error::invalid("synthetic sample", "between 1 and 4 instances supported"));
    }
    if height < 8 || width < 8 {
        return Err(Error::invalid("synthetic sample", "image too small"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Split the width into equal slots, one box per slot.
    let slot = width / n_instances;
    let mut boxes = Vec::with_capacity(n_instances);
    for k in 0..n_instances {
        let bw = rng.gen_range(slot / 2..=slot * 3 / 4).max(2);
        let bh = rng.gen_range(height / 3..=height * 2 / 3).max(2);
        let x0 = k * slot + rng.gen_range(0..=slot - bw);
        let y0 = rng.gen_range(0..=height - bh);
        boxes.push((y0, x0, bh, bw));
    }
    // Instances only differ in appearance, so colors come from a palette of
    // well-separated hues and depths from separated levels.
    let mut order: Vec<usize> = (0..PALETTE.len()).collect();
    order.shuffle(&mut rng);
    let colors: Vec<[f64; 3]> = order[..n_instances]
        .iter()
        .map(|&k| PALETTE[k].map(|v| (v + rng.gen_range(-0.05..0.05)).clamp(0.0, 1.0)))
        .collect();
    order.shuffle(&mut rng);
    let depths: Vec<f64> = order[..n_instances].iter().map(|&k| 0.5 + 0.13 * k as f64 + rng.gen_range(-0.02..0.02)).collect();

    let mut rgb = Tensor::zeros(&[height, width, 3]);
    let mut depth = Tensor::zeros(&[height, width, 1]);
    let mut instances = vec![Tensor::zeros(&[height, width]); n_instances];
    for y in 0..height {
        for x in 0..width {
            let (fy, fx) = (y as f64 / height as f64, x as f64 / width as f64);
            let mut px = [0.2 + 0.1 * fx, 0.25 + 0.1 * fy, 0.3];
            let mut d = 0.1 + 0.2 * fy;
            for (k, &(y0, x0, bh, bw)) in boxes.iter().enumerate() {
                if (y0..y0 + bh).contains(&y) && (x0..x0 + bw).contains(&x) {
                    px = colors[k];
                    d = depths[k];
                    instances[k].set(&[y, x], T::one());
                }
            }
            for (ch, v) in px.iter().enumerate() {
                rgb.set(&[y, x, ch], T::of(*v));
            }
            depth.set(&[y, x, 0], T::of(d));
        }
    }
    Ok(Sample { rgb, depth, instances })
}

/// Result of one optimization step, measured before the update.
#[derive(Clone, Debug, PartialEq)]
pub struct StepReport {
    pub loss: LossBreakdown,
    pub assignment: Assignment,
}

/// Forward pass, matching, loss and parameter gradients for one sample.
pub fn loss_and_grads<T: Scalar>(
    net: &CalibNet<T>,
    sample: &Sample<T>,
    weights: &LossWeights,
) -> Result<(StepReport, CalibNet<T>)> {
    let (out, cache) = net.forward_detailed(&sample.rgb, &sample.depth)?;
    let cost = matching_cost(&out.masks, &out.scores, &sample.instances, weights)?;
    let assignment = hungarian(&cost);
    let (loss, grads) = total_loss_with_grads(&out, &sample.instances, &assignment, weights)?;
    let param_grads = net.backward(&cache, &grads)?;
    Ok((StepReport { loss, assignment }, param_grads))
}

/// One plain gradient-descent step.
pub fn train_step<T: Scalar>(net: &mut CalibNet<T>, sample: &Sample<T>, weights: &LossWeights, lr: T) -> Result<StepReport> {
    let (report, grads) = loss_and_grads(net, sample, weights)?;
    net.sgd_step(&grads, lr);
    Ok(report)
}

/// IoU (binarized at the configured mask threshold) of each GT with its matched prediction.
pub fn matched_ious<T: Scalar>(net: &CalibNet<T>, sample: &Sample<T>, weights: &LossWeights) -> Result<Vec<f64>> {
    let (out, _) = net.forward_detailed(&sample.rgb, &sample.depth)?;
    let cost = matching_cost(&out.masks, &out.scores, &sample.instances, weights)?;
    let assignment = hungarian(&cost);
    let thr = T::of(net.config.mask_threshold);
    let mut ious = vec![0.0; sample.instances.len()];
    for &(p, g) in &assignment.pairs {
        let m = out.mask(p)?.map(|v| if v >= thr { T::one() } else { T::zero() });
        ious[g] = mask_iou(&m, &sample.instances[g])?;
    }
    Ok(ious)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::PipelineConfig;

    #[test]
    fn synthetic_sample_shapes_and_disjoint_instances() {
        let s = synthetic_sample::<f64>(32, 48, 2, 0).unwrap();
        assert_eq!(s.rgb.shape(), &[32, 48, 3]);
        assert_eq!(s.depth.shape(), &[32, 48, 1]);
        assert_eq!(s.instances.len(), 2);
        let overlap: f64 = s.instances[0].mul(&s.instances[1]).unwrap().sum();
        assert_eq!(overlap, 0.0);
        assert!(s.instances.iter().all(|m| m.sum() > 0.0));
        assert_eq!(s, synthetic_sample(32, 48, 2, 0).unwrap());
    }

    #[test]
    fn a_few_steps_reduce_loss() {
        let mut net = CalibNet::<f64>::new(PipelineConfig::with_size(4, 8), 0).unwrap();
        let s = synthetic_sample(32, 48, 2, 1).unwrap();
        let w = LossWeights::default();
        let first = train_step(&mut net, &s, &w, 0.01).unwrap().loss.total;
        let mut last = first;
        for _ in 0..5 {
            last = train_step(&mut net, &s, &w, 0.01).unwrap().loss.total;
        }
        assert!(last < first, "{first} -> {last}");
    }
}
