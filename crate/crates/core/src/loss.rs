//! Training objective: focal classification, dice + BCE masks, IoU-aware
//! objectness and auxiliary salient-region supervision.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matching::Assignment;
use crate::net::{ForwardOutput, OutputGrads, RegionMaps};
use crate::nn::downsample_mask;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` inside logs.
pub const PROB_CLAMP: f64 = 1e-7;
/// Additive smoothing in the dice ratio.
pub const DICE_EPS: f64 = 1.0;
pub const FOCAL_ALPHA: f64 = 0.25;
pub const FOCAL_GAMMA: f64 = 2.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub class: f64,
    pub mask: f64,
    pub objectness: f64,
    pub binary: f64,
    /// Weight of each RGB region map in the auxiliary term.
    pub region_rgb: f64,
    /// Weight of each depth region map in the auxiliary term.
    pub region_depth: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            class: 2.0,
            mask: 1.0,
            objectness: 1.0,
            binary: 1.0,
            region_rgb: 0.6,
            region_depth: 0.4,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.class, self.mask, self.objectness, self.binary, self.region_rgb, self.region_depth];
        if all.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::invalid("loss weights", "weights must be finite and non-negative"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_c: f64,
    pub l_mask: f64,
    pub l_obj: f64,
    pub l_bin: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn recombine(&self, w: &LossWeights) -> f64 {
        w.class * self.l_c + w.mask * self.l_mask + w.objectness * self.l_obj + w.binary * self.l_bin
    }
}

fn clamp<T: Scalar>(p: T) -> (T, bool) {
    let lo = T::of(PROB_CLAMP);
    let hi = T::one() - lo;
    if p < lo {
        (lo, true)
    } else if p > hi {
        (hi, true)
    } else {
        (p, false)
    }
}

/// Binary cross-entropy of one probability against a target in `[0, 1]`,
/// with its derivative in `p` (zero where the clamp is active).
pub fn bce<T: Scalar>(p: T, y: T) -> (T, T) {
    let (q, clamped) = clamp(p);
    let loss = -(y * q.ln() + (T::one() - y) * (T::one() - q).ln());
    let grad = if clamped { T::zero() } else { (q - y) / (q * (T::one() - q)) };
    (loss, grad)
}

/// Mean BCE over matching slices, with the per-element gradient.
pub fn bce_mean<T: Scalar>(pred: &[T], target: &[T]) -> Result<(T, Vec<T>)> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(Error::shape("bce", &[pred.len()], &[target.len()]));
    }
    let inv = T::one() / T::of_usize(pred.len());
    let mut total = T::zero();
    let grad = pred
        .iter()
        .zip(target)
        .map(|(&p, &y)| {
            let (l, g) = bce(p, y);
            total += l;
            g * inv
        })
        .collect();
    Ok((total * inv, grad))
}

/// Focal loss of one probability against a binary target, with `d/dp`.
pub fn focal<T: Scalar>(p: T, positive: bool, alpha: T, gamma: T) -> (T, T) {
    let (q, clamped) = clamp(p);
    let (pt, at, sign) = if positive {
        (q, alpha, T::one())
    } else {
        (T::one() - q, T::one() - alpha, -T::one())
    };
    let one_minus = T::one() - pt;
    let loss = -at * one_minus.powf(gamma) * pt.ln();
    let grad = if clamped {
        T::zero()
    } else {
        let d_pt = if gamma == T::zero() {
            -at / pt
        } else {
            at * (gamma * one_minus.powf(gamma - T::one()) * pt.ln() - one_minus.powf(gamma) / pt)
        };
        sign * d_pt
    };
    (loss, grad)
}

/// Mean focal loss over `scores` against binary `targets` (≥ 0.5 is positive).
pub fn focal_loss<T: Scalar>(scores: &[T], targets: &[T], alpha: T, gamma: T) -> Result<(T, Vec<T>)> {
    if scores.len() != targets.len() || scores.is_empty() {
        return Err(Error::shape("focal", &[scores.len()], &[targets.len()]));
    }
    let inv = T::one() / T::of_usize(scores.len());
    let mut total = T::zero();
    let grad = scores
        .iter()
        .zip(targets)
        .map(|(&p, &y)| {
            let (l, g) = focal(p, y >= T::of(0.5), alpha, gamma);
            total += l;
            g * inv
        })
        .collect();
    Ok((total * inv, grad))
}

/// `1 - (2Σpg + ε) / (Σp² + Σg² + ε)`, with the gradient in `pred`.
pub fn dice_loss<T: Scalar>(pred: &[T], gt: &[T]) -> Result<(T, Vec<T>)> {
    if pred.len() != gt.len() {
        return Err(Error::shape("dice", &[pred.len()], &[gt.len()]));
    }
    let eps = T::of(DICE_EPS);
    let two = T::of(2.0);
    let mut pg = T::zero();
    let mut pp = T::zero();
    let mut gg = T::zero();
    for (&p, &g) in pred.iter().zip(gt) {
        pg += p * g;
        pp += p * p;
        gg += g * g;
    }
    let a = two * pg + eps;
    let b = pp + gg + eps;
    let grad = pred.iter().zip(gt).map(|(&p, &g)| -(two * g * b - a * two * p) / (b * b)).collect();
    Ok((T::one() - a / b, grad))
}

/// Soft IoU `Σpg / (Σp + Σg - Σpg)`; 1 when both are empty.
pub fn soft_iou<T: Scalar>(pred: &[T], gt: &[T]) -> T {
    let mut inter = T::zero();
    let mut sp = T::zero();
    let mut sg = T::zero();
    for (&p, &g) in pred.iter().zip(gt) {
        inter += p * g;
        sp += p;
        sg += g;
    }
    let union = sp + sg - inter;
    if union > T::zero() {
        inter / union
    } else {
        T::one()
    }
}

/// Mean BCE of predicted objectness against per-slot IoU targets.
pub fn objectness_loss<T: Scalar>(pred: &[T], target: &[T]) -> Result<(T, Vec<T>)> {
    bce_mean(pred, target)
}

/// Pixel union of instance masks.
pub fn region_target<T: Scalar>(gts: &[Tensor<T>], h: usize, w: usize) -> Result<Tensor<T>> {
    let mut r = Tensor::zeros(&[h, w]);
    for g in gts {
        if g.shape() != [h, w] {
            return Err(Error::shape("region target", g.shape(), &[h, w]));
        }
        for (o, &v) in r.data_mut().iter_mut().zip(g.data()) {
            if v >= T::of(0.5) {
                *o = T::one();
            }
        }
    }
    Ok(r)
}

/// Auxiliary region loss against the full-resolution region mask, with gradients.
pub fn aux_binary_loss<T: Scalar>(regions: &RegionMaps<T>, region_gt: &Tensor<T>, w: &LossWeights) -> Result<(T, RegionMaps<T>)> {
    let term = |pred: &Tensor<T>, weight: f64| -> Result<(T, Tensor<T>)> {
        let (h, ww) = pred.dims2()?;
        let gt = downsample_mask(region_gt, h, ww)?;
        let (l, g) = bce_mean(pred.data(), gt.data())?;
        let wt = T::of(weight);
        Ok((l * wt, Tensor::new(vec![h, ww], g)?.scale(wt)))
    };
    let (l_c2, g_c2) = term(&regions.c2, w.region_rgb)?;
    let (l_t3, g_t3) = term(&regions.t3, w.region_rgb)?;
    let (l_d2, g_d2) = term(&regions.d2, w.region_depth)?;
    let (l_d3, g_d3) = term(&regions.d3, w.region_depth)?;
    Ok((
        l_c2 + l_t3 + l_d2 + l_d3,
        RegionMaps {
            c2: g_c2,
            t3: g_t3,
            d2: g_d2,
            d3: g_d3,
        },
    ))
}

/// Per-slot targets derived from a matching; frozen during differentiation.
#[derive(Clone, Debug, PartialEq)]
pub struct SlotTargets<T> {
    /// `(slot, gt)` pairs.
    pub pairs: Vec<(usize, usize)>,
    /// 1 for matched slots.
    pub class: Vec<T>,
    /// Soft IoU of each matched slot with its GT, 0 elsewhere.
    pub objectness: Vec<T>,
}

impl<T: Scalar> SlotTargets<T> {
    pub fn new(out: &ForwardOutput<T>, gts: &[Tensor<T>], assignment: &Assignment) -> Result<Self> {
        let n = out.len();
        let mut class = vec![T::zero(); n];
        let mut objectness = vec![T::zero(); n];
        let (_, h, w) = out.masks.dims3()?;
        for &(p, g) in &assignment.pairs {
            if p >= n || g >= gts.len() {
                return Err(Error::invalid("loss", format!("assignment pair ({p}, {g}) out of range")));
            }
            if gts[g].shape() != [h, w] {
                return Err(Error::shape("loss gt", gts[g].shape(), &[h, w]));
            }
            class[p] = T::one();
            objectness[p] = soft_iou(out.mask(p)?.data(), gts[g].data());
        }
        Ok(Self {
            pairs: assignment.pairs.clone(),
            class,
            objectness,
        })
    }
}

/// Full objective for one sample.
pub fn total_loss<T: Scalar>(
    out: &ForwardOutput<T>,
    gts: &[Tensor<T>],
    assignment: &Assignment,
    weights: &LossWeights,
) -> Result<LossBreakdown> {
    Ok(total_loss_with_grads(out, gts, assignment, weights)?.0)
}

/// [`total_loss`] plus gradients with respect to every network output.
pub fn total_loss_with_grads<T: Scalar>(
    out: &ForwardOutput<T>,
    gts: &[Tensor<T>],
    assignment: &Assignment,
    weights: &LossWeights,
) -> Result<(LossBreakdown, OutputGrads<T>)> {
    let targets = SlotTargets::new(out, gts, assignment)?;
    total_loss_with_targets(out, gts, &targets, weights)
}

/// Objective with frozen slot targets (the form that is differentiated).
pub fn total_loss_with_targets<T: Scalar>(
    out: &ForwardOutput<T>,
    gts: &[Tensor<T>],
    targets: &SlotTargets<T>,
    weights: &LossWeights,
) -> Result<(LossBreakdown, OutputGrads<T>)> {
    weights.validate()?;
    let (n, h, w) = out.masks.dims3()?;
    let mut grads = OutputGrads::zeros_like(out);

    let (l_c, g_c) = focal_loss(out.scores.data(), &targets.class, T::of(FOCAL_ALPHA), T::of(FOCAL_GAMMA))?;
    let wc = T::of(weights.class);
    grads.scores.data_mut().iter_mut().zip(&g_c).for_each(|(o, &g)| *o = g * wc);

    let mut l_mask = T::zero();
    if !targets.pairs.is_empty() {
        let inv = T::one() / T::of_usize(targets.pairs.len());
        let wm = T::of(weights.mask) * inv;
        let hw = h * w;
        for &(p, g) in &targets.pairs {
            let pred = &out.masks.data()[p * hw..(p + 1) * hw];
            let gt = gts[g].data();
            let (ld, gd) = dice_loss(pred, gt)?;
            let (lb, gb) = bce_mean(pred, gt)?;
            l_mask += (ld + lb) * inv;
            let slot = &mut grads.masks.data_mut()[p * hw..(p + 1) * hw];
            for ((o, &a), &b) in slot.iter_mut().zip(&gd).zip(&gb) {
                *o += (a + b) * wm;
            }
        }
    }

    let (l_obj, g_obj) = objectness_loss(out.objectness.data(), &targets.objectness)?;
    let wo = T::of(weights.objectness);
    grads.objectness.data_mut().iter_mut().zip(&g_obj).for_each(|(o, &g)| *o = g * wo);

    let region = region_target(gts, h, w)?;
    let (l_bin, g_bin) = aux_binary_loss(&out.regions, &region, weights)?;
    let wb = T::of(weights.binary);
    grads.regions = RegionMaps {
        c2: g_bin.c2.scale(wb),
        t3: g_bin.t3.scale(wb),
        d2: g_bin.d2.scale(wb),
        d3: g_bin.d3.scale(wb),
    };
    debug_assert_eq!(grads.masks.shape(), &[n, h, w]);

    let mut b = LossBreakdown {
        l_c: l_c.as_f64(),
        l_mask: l_mask.as_f64(),
        l_obj: l_obj.as_f64(),
        l_bin: l_bin.as_f64(),
        total: 0.0,
    };
    b.total = b.recombine(weights);
    Ok((b, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{grad_check, GradCheckOptions};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn probs(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(0.02..0.98)).collect()
    }

    fn bits(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..n).map(|_| if rng.gen_bool(0.5) { 1.0 } else { 0.0 }).collect()
    }

    fn as_tensor(v: &[f64]) -> Tensor<f64> {
        Tensor::new(vec![v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn focal_hand_value() {
        let (l, _) = focal_loss::<f64>(&[0.6], &[1.0], 0.25, 2.0).unwrap();
        assert!((l - 0.25 * 0.4f64.powi(2) * -(0.6f64.ln())).abs() < 1e-15);
    }

    #[test]
    fn focal_reduces_to_half_bce() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = probs(30, &mut rng);
        let y = bits(30, &mut rng);
        let (f, _) = focal_loss(&p, &y, 0.5, 0.0).unwrap();
        let (b, _) = bce_mean(&p, &y).unwrap();
        assert!((f - 0.5 * b).abs() < 1e-14);
    }

    #[test]
    fn confident_correct_focal_is_tiny() {
        let (l, _) = focal_loss::<f64>(&[1.0, 0.0, 0.999_999], &[1.0, 0.0, 1.0], 0.25, 2.0).unwrap();
        assert!(l < 1e-6);
    }

    #[test]
    fn clamp_keeps_extremes_finite() {
        let (l, g) = bce_mean::<f64>(&[0.0, 1.0], &[1.0, 0.0]).unwrap();
        assert!(l.is_finite() && g.iter().all(|v| v.is_finite()));
        assert!((l - -(1e-7f64).ln()).abs() < 1e-9);
    }

    #[test]
    fn dice_cases() {
        let n = 64 * 64;
        let gt: Vec<f64> = (0..n).map(|i| if i % 3 == 0 { 1.0 } else { 0.0 }).collect();
        let (l, _) = dice_loss(&gt, &gt).unwrap();
        assert!(l.abs() < 1e-3);

        let a: Vec<f64> = (0..16).map(|i| if i < 8 { 1.0 } else { 0.0 }).collect();
        let b: Vec<f64> = (0..16).map(|i| if i >= 8 { 1.0 } else { 0.0 }).collect();
        let (l, _) = dice_loss(&a, &b).unwrap();
        assert!(l >= 1.0 - 1.0 / (8.0 + 8.0 + 1.0) - 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = probs(64, &mut rng);
        let g = bits(64, &mut rng);
        let (mut pg, mut pp, mut gg) = (0.0, 0.0, 0.0);
        for i in 0..64 {
            pg += p[i] * g[i];
            pp += p[i] * p[i];
            gg += g[i] * g[i];
        }
        let (l, _) = dice_loss(&p, &g).unwrap();
        assert!((l - (1.0 - (2.0 * pg + 1.0) / (pp + gg + 1.0))).abs() < 1e-12);
    }

    #[test]
    fn objectness_cases() {
        let (l, _) = objectness_loss::<f64>(&[0.5], &[0.0]).unwrap();
        assert!((l - 2f64.ln()).abs() < 1e-15);
        let t = 0.37;
        let (at, _) = objectness_loss(&[t], &[t]).unwrap();
        for d in [-0.05, -0.01, 0.01, 0.05] {
            assert!(objectness_loss(&[t + d], &[t]).unwrap().0 > at);
        }
    }

    #[test]
    fn aux_closed_forms() {
        let half = |h, w| Tensor::full(&[h, w], 0.5);
        let maps = RegionMaps { c2: half(8, 12), t3: half(4, 6), d2: half(8, 12), d3: half(4, 6) };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let gt = Tensor::new(vec![32, 48], bits(32 * 48, &mut rng)).unwrap();
        let (l, _) = aux_binary_loss(&maps, &gt, &LossWeights::default()).unwrap();
        assert!((l - 2.0 * 2f64.ln()).abs() < 1e-12);

        let gt = Tensor::from_fn(&[32, 48], |i| if (i % 48) < 24 { 1.0 } else { 0.0 });
        let perfect = |h, w| downsample_mask(&gt, h, w).unwrap();
        let maps = RegionMaps { c2: perfect(8, 12), t3: perfect(4, 6), d2: perfect(8, 12), d3: perfect(4, 6) };
        let (l, _) = aux_binary_loss(&maps, &gt, &LossWeights::default()).unwrap();
        assert!(l < 1e-6);
    }

    #[test]
    fn standalone_gradients() {
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = probs(12, &mut rng);
            let y = bits(12, &mut rng);
            let soft: Vec<f64> = probs(12, &mut rng);
            let opts = GradCheckOptions::default().with_tol(1e-5);
            type LossFn = fn(&[f64], &[f64]) -> Result<(f64, Vec<f64>)>;
            let focal_default: LossFn = |p, y| focal_loss(p, y, FOCAL_ALPHA, FOCAL_GAMMA);
            let cases: [(LossFn, &[f64]); 4] =
                [(focal_default, &y), (dice_loss, &y), (bce_mean, &y), (objectness_loss, &soft)];
            for (f, target) in cases {
                let (_, g) = f(&p, target).unwrap();
                let r = grad_check(|x: &[Tensor<f64>]| Ok(f(x[0].data(), target)?.0), &[as_tensor(&p)], &[as_tensor(&g)], &opts)
                    .unwrap();
                assert!(r.passed(), "seed {seed}: {r:?}");
            }
        }
    }

    #[test]
    fn aux_gradient() {
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut t = |h: usize, w: usize| Tensor::new(vec![h, w], probs(h * w, &mut rng)).unwrap();
            let maps = RegionMaps { c2: t(4, 6), t3: t(2, 3), d2: t(4, 6), d3: t(2, 3) };
            let gt = Tensor::new(vec![16, 24], bits(16 * 24, &mut rng)).unwrap();
            let w = LossWeights::default();
            let (_, g) = aux_binary_loss(&maps, &gt, &w).unwrap();
            let r = grad_check(
                |x: &[Tensor<f64>]| {
                    let m = RegionMaps { c2: x[0].clone(), t3: x[1].clone(), d2: x[2].clone(), d3: x[3].clone() };
                    Ok(aux_binary_loss(&m, &gt, &w)?.0)
                },
                &[maps.c2.clone(), maps.t3.clone(), maps.d2.clone(), maps.d3.clone()],
                &[g.c2, g.t3, g.d2, g.d3],
                &GradCheckOptions::default().with_tol(1e-5),
            )
            .unwrap();
            assert!(r.passed(), "seed {seed}: {r:?}");
        }
    }

    proptest! {
        #[test]
        fn losses_nonnegative_and_finite(p in proptest::collection::vec(0.0f64..=1.0, 1..20), seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let y = bits(p.len(), &mut rng);
            for (l, g) in [
                focal_loss(&p, &y, FOCAL_ALPHA, FOCAL_GAMMA).unwrap(),
                dice_loss(&p, &y).unwrap(),
                bce_mean(&p, &y).unwrap(),
            ] {
                prop_assert!(l >= 0.0 && l.is_finite());
                prop_assert!(g.iter().all(|v| v.is_finite()));
            }
        }
    }
}
