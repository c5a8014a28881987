use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Pixel counts `(intersection, union)` of two masks binarized at 0.5.
pub fn overlap_counts<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<(u64, u64)> {
    if a.shape() != b.shape() {
        return Err(Error::shape("mask iou", a.shape(), b.shape()));
    }
    let half = T::of(0.5);
    let (mut inter, mut union) = (0, 0);
    for (&x, &y) in a.data().iter().zip(b.data()) {
        let (x, y) = (x >= half, y >= half);
        inter += u64::from(x && y);
        union += u64::from(x || y);
    }
    Ok((inter, union))
}

/// IoU of two masks binarized at 0.5; 1 when both are empty.
pub fn mask_iou<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    let (inter, union) = overlap_counts(a, b)?;
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// IoU thresholds as integer percentages: 50, 55, …, 95.
pub const IOU_THRESHOLDS_PCT: [u64; 10] = [50, 55, 60, 65, 70, 75, 80, 85, 90, 95];
/// Number of recall sample points in the interpolated AP.
pub const RECALL_POINTS: usize = 101;

/// Predictions and ground truth for one image.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalImage<T> {
    /// `(score, mask)`.
    pub predictions: Vec<(f64, Tensor<T>)>,
    pub ground_truth: Vec<Tensor<T>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    pub iou_threshold: f64,
    pub recall: Vec<f64>,
    pub precision: Vec<f64>,
    pub ap: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ApReport {
    pub ap: f64,
    pub ap50: f64,
    pub ap70: f64,
    pub curves: Vec<PrCurve>,
}

impl ApReport {
    /// Raw PR points as CSV: `iou_threshold,rank,recall,precision`.
    pub fn curves_csv(&self) -> String {
        let mut s = String::from("iou_threshold,rank,recall,precision\n");
        for c in &self.curves {
            for (i, (r, p)) in c.recall.iter().zip(&c.precision).enumerate() {
                s.push_str(&format!("{},{},{},{}\n", c.iou_threshold, i + 1, r, p));
            }
        }
        s
    }
}

/// Dataset-wide ranking: `(score, image, prediction)` by descending score,
/// ties by image then prediction index.
fn ranking<T>(images: &[EvalImage<T>]) -> Vec<(f64, usize, usize)> {
    let mut order: Vec<(f64, usize, usize)> = images
        .iter()
        .enumerate()
        .flat_map(|(i, im)| im.predictions.iter().enumerate().map(move |(k, (s, _))| (*s, i, k)))
        .collect();
    order.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    order
}

/// 101-point interpolated AP from cumulative true-positive counts.
fn interpolated_ap(tp_cum: &[u64], n_gt: u64) -> f64 {
    if n_gt == 0 {
        return 0.0;
    }
    // Precision envelope: best precision at any rank from here on.
    let mut envelope = vec![0.0; tp_cum.len()];
    let mut best: f64 = 0.0;
    for k in (0..tp_cum.len()).rev() {
        best = best.max(tp_cum[k] as f64 / (k + 1) as f64);
        envelope[k] = best;
    }
    let mut total = 0.0;
    let mut k = 0;
    for i in 0..RECALL_POINTS as u64 {
        // First rank with recall ≥ i/100, compared exactly in integers.
        while k < tp_cum.len() && tp_cum[k] * 100 < i * n_gt {
            k += 1;
        }
        if k < tp_cum.len() {
            total += envelope[k];
        }
    }
    total / RECALL_POINTS as f64
}

/// Class-agnostic mask AP over the 0.50:0.95 IoU grid, plus AP50 and AP70.
///
/// Masks are binarized at 0.5. At each threshold predictions are visited in
/// score order and each claims the best-overlapping unclaimed GT of its image.
pub fn evaluate_ap<T: Scalar>(images: &[EvalImage<T>]) -> Result<ApReport> {
    if images.is_empty() {
        return Err(Error::EmptyDataset);
    }
    // Pairwise overlaps per image, computed once.
    let overlaps = images
        .iter()
        .map(|im| {
            im.predictions
                .iter()
                .map(|(_, m)| im.ground_truth.iter().map(|g| overlap_counts(m, g)).collect::<Result<Vec<_>>>())
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let n_gt: u64 = images.iter().map(|im| im.ground_truth.len() as u64).sum();
    let order = ranking(images);

    let mut curves = Vec::with_capacity(IOU_THRESHOLDS_PCT.len());
    for &pct in &IOU_THRESHOLDS_PCT {
        let mut claimed: Vec<Vec<bool>> = images.iter().map(|im| vec![false; im.ground_truth.len()]).collect();
        let mut tp_cum = Vec::with_capacity(order.len());
        let mut tp = 0u64;
        for &(_, i, k) in &order {
            // Best unclaimed GT with IoU ≥ pct/100, compared as exact fractions.
            let mut best: Option<(usize, u64, u64)> = None;
            for (g, &(inter, union)) in overlaps[i][k].iter().enumerate() {
                if claimed[i][g] || union == 0 || inter * 100 < pct * union {
                    continue;
                }
                let better = match best {
                    None => true,
                    Some((_, bi, bu)) => (inter as u128) * (bu as u128) > (bi as u128) * (union as u128),
                };
                if better {
                    best = Some((g, inter, union));
                }
            }
            if let Some((g, _, _)) = best {
                claimed[i][g] = true;
                tp += 1;
            }
            tp_cum.push(tp);
        }
        let ap = interpolated_ap(&tp_cum, n_gt);
        let recall = tp_cum.iter().map(|&t| if n_gt == 0 { 0.0 } else { t as f64 / n_gt as f64 }).collect();
        let precision = tp_cum.iter().enumerate().map(|(k, &t)| t as f64 / (k + 1) as f64).collect();
        curves.push(PrCurve {
            iou_threshold: pct as f64 / 100.0,
            recall,
            precision,
            ap,
        });
    }
    let at = |pct: u64| curves[IOU_THRESHOLDS_PCT.iter().position(|&p| p == pct).expect("grid point")].ap;
    Ok(ApReport {
        ap: curves.iter().map(|c| c.ap).sum::<f64>() / curves.len() as f64,
        ap50: at(50),
        ap70: at(70),
        curves,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(h: usize, w: usize, on: &[usize]) -> Tensor<f64> {
        let mut t = Tensor::zeros(&[h, w]);
        for &i in on {
            t.data_mut()[i] = 1.0;
        }
        t
    }

    #[test]
    fn iou_cases() {
        let a = mask(2, 2, &[0, 1]);
        assert_eq!(mask_iou(&a, &a).unwrap(), 1.0);
        assert_eq!(mask_iou(&a, &mask(2, 2, &[2, 3])).unwrap(), 0.0);
        assert_eq!(mask_iou(&a, &mask(2, 2, &[1, 2])).unwrap(), 1.0 / 3.0);
        assert_eq!(mask_iou(&a, &mask(2, 2, &[0, 1, 2, 3])).unwrap(), 0.5);
        assert_eq!(mask_iou(&mask(2, 2, &[]), &mask(2, 2, &[])).unwrap(), 1.0);
        assert_eq!(mask_iou(&mask(2, 2, &[]), &a).unwrap(), 0.0);
        assert!(mask_iou(&a, &mask(1, 4, &[])).is_err());
    }

    #[test]
    fn perfect_and_empty() {
        let gts = vec![mask(3, 3, &[0, 1]), mask(3, 3, &[7, 8])];
        let perfect = EvalImage {
            predictions: gts.iter().map(|g| (1.0, g.clone())).collect(),
            ground_truth: gts.clone(),
        };
        let r = evaluate_ap(&[perfect]).unwrap();
        assert_eq!((r.ap, r.ap50, r.ap70), (1.0, 1.0, 1.0));

        let none = EvalImage { predictions: vec![], ground_truth: gts };
        let r = evaluate_ap(&[none]).unwrap();
        assert_eq!((r.ap, r.ap50, r.ap70), (0.0, 0.0, 0.0));

        assert!(matches!(evaluate_ap::<f64>(&[]), Err(Error::EmptyDataset)));
    }

    #[test]
    fn hand_computed_three_images() {
        // Image 0: one GT, matched (score 0.9). Image 1: one FP (score 0.8),
        // no GT. Image 2: one GT, matched at score 0.7; a second GT missed.
        let g = |on: &[usize]| mask(2, 2, on);
        let images = vec![
            EvalImage { predictions: vec![(0.9, g(&[0]))], ground_truth: vec![g(&[0])] },
            EvalImage { predictions: vec![(0.8, g(&[1]))], ground_truth: vec![] },
            EvalImage { predictions: vec![(0.7, g(&[2]))], ground_truth: vec![g(&[2]), g(&[3])] },
        ];
        let r = evaluate_ap(&images).unwrap();
        // Ranks: TP, FP, TP over 3 GT. Precision 1, 1/2, 2/3; recall 1/3, 1/3, 2/3.
        // Envelope: r ≤ 1/3 → 1, 1/3 < r ≤ 2/3 → 2/3, beyond → 0.
        // Recall points 0..=33 (34 points) → 1; 34..=66 (33 points) → 2/3.
        let want = (34.0 + 33.0 * 2.0 / 3.0) / 101.0;
        assert!((r.ap50 - want).abs() < 1e-12);
        assert!((r.ap - want).abs() < 1e-12);
        assert_eq!(r.curves[0].precision, vec![1.0, 0.5, 2.0 / 3.0]);
    }

    #[test]
    fn threshold_respected() {
        // IoU exactly 0.5 counts at 0.50 but not at 0.55.
        let images = vec![EvalImage { predictions: vec![(1.0, mask(1, 2, &[0, 1]))], ground_truth: vec![mask(1, 2, &[0])] }];
        let r = evaluate_ap(&images).unwrap();
        assert_eq!(r.curves[0].ap, 1.0);
        assert_eq!(r.curves[1].ap, 0.0);
        assert_eq!(r.ap70, 0.0);
    }

    #[test]
    fn csv_has_header_and_rows() {
        let images = vec![EvalImage { predictions: vec![(1.0, mask(1, 1, &[0]))], ground_truth: vec![mask(1, 1, &[0])] }];
        let csv = evaluate_ap(&images).unwrap().curves_csv();
        assert_eq!(csv.lines().count(), 1 + 10);
        assert!(csv.starts_with("iou_threshold,rank,recall,precision\n0.5,1,1,1\n"));
    }
}
