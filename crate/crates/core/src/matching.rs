//! Minimum-cost one-to-one assignment between predictions and ground truths.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::{bce_mean, dice_loss, focal, LossWeights, FOCAL_ALPHA, FOCAL_GAMMA};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// `rows × cols` costs, predictions along rows. Either side may be empty.
#[derive(Clone, Debug, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl CostMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::invalid(
                "cost matrix",
                format!("{} values for a {rows}×{cols} matrix", values.len()),
            ));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("cost matrix entry {v}")));
        }
        Ok(Self { rows, cols, values })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let values = (0..rows * cols).map(|i| f(i / cols, i % cols)).collect();
        Self::new(rows, cols, values)
    }

    pub fn from_tensor<T: Scalar>(t: &Tensor<T>) -> Result<Self> {
        let (r, c) = t.dims2()?;
        Self::new(r, c, t.data().iter().map(|v| v.as_f64()).collect())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols + c]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn transpose(&self) -> Self {
        let (r, c) = (self.rows, self.cols);
        Self {
            rows: c,
            cols: r,
            values: (0..r * c).map(|i| self.get(i % r, i / r)).collect(),
        }
    }

    fn submatrix(&self, rows: &[usize], cols: &[usize]) -> Self {
        let values = rows.iter().flat_map(|&r| cols.iter().map(move |&c| self.get(r, c))).collect();
        Self {
            rows: rows.len(),
            cols: cols.len(),
            values,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    /// `(prediction, gt)` sorted by prediction index.
    pub pairs: Vec<(usize, usize)>,
    pub total_cost: f64,
}

impl Assignment {
    pub fn empty() -> Self {
        Self {
            pairs: Vec::new(),
            total_cost: 0.0,
        }
    }

    /// GT index matched to each prediction, if any.
    pub fn gt_for(&self, n_preds: usize) -> Vec<Option<usize>> {
        let mut out = vec![None; n_preds];
        for &(p, g) in &self.pairs {
            out[p] = Some(g);
        }
        out
    }
}

/// Potentials-based shortest augmenting path; requires `rows ≤ cols`.
/// Returns the column assigned to each row.
fn solve_wide(cost: &CostMatrix) -> Vec<usize> {
    let (n, m) = (cost.rows, cost.cols);
    debug_assert!(n <= m);
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    // p[j]: row (1-based) matched to column j; column 0 is the virtual root.
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if !used[j] {
                    let cur = cost.get(i0 - 1, j - 1) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut row_to_col = vec![usize::MAX; n];
    for j in 1..=m {
        if p[j] != 0 {
            row_to_col[p[j] - 1] = j - 1;
        }
    }
    row_to_col
}

/// Some minimum-cost assignment of size `min(rows, cols)`, without tie-breaking.
fn solve_any(cost: &CostMatrix) -> Assignment {
    if cost.rows == 0 || cost.cols == 0 {
        return Assignment::empty();
    }
    let mut pairs: Vec<(usize, usize)> = if cost.rows <= cost.cols {
        solve_wide(cost).into_iter().enumerate().collect()
    } else {
        solve_wide(&cost.transpose()).into_iter().enumerate().map(|(g, p)| (p, g)).collect()
    };
    pairs.sort_unstable();
    let total_cost = pairs.iter().map(|&(p, g)| cost.get(p, g)).sum();
    Assignment { pairs, total_cost }
}

fn same_cost(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0)
}

/// Minimum-cost assignment covering `min(rows, cols)` pairs.
///
/// Among equal-cost optima the pair list (sorted by prediction) that is
/// lexicographically smallest is returned.
pub fn hungarian(cost: &CostMatrix) -> Assignment {
    let best = solve_any(cost);
    let size = best.pairs.len();
    if size == 0 {
        return best;
    }
    // Greedily fix the smallest feasible next pair, checking each candidate
    // with an optimal completion over the remaining rows and columns.
    let mut pairs: Vec<(usize, usize)> = Vec::with_capacity(size);
    let mut fixed_cost = 0.0;
    let mut used_cols = vec![false; cost.cols];
    let mut next_row = 0;
    'outer: while pairs.len() < size {
        for p in next_row..cost.rows {
            let rest_rows: Vec<usize> = (p + 1..cost.rows).collect();
            for g in 0..cost.cols {
                if used_cols[g] {
                    continue;
                }
                let rest_cols: Vec<usize> = (0..cost.cols).filter(|&c| !used_cols[c] && c != g).collect();
                let sub = solve_any(&cost.submatrix(&rest_rows, &rest_cols));
                if pairs.len() + 1 + sub.pairs.len() != size {
                    continue;
                }
                if same_cost(fixed_cost + cost.get(p, g) + sub.total_cost, best.total_cost) {
                    pairs.push((p, g));
                    fixed_cost += cost.get(p, g);
                    used_cols[g] = true;
                    next_row = p + 1;
                    continue 'outer;
                }
            }
        }
        unreachable!("an optimal completion always exists");
    }
    let total_cost = pairs.iter().map(|&(p, g)| cost.get(p, g)).sum();
    Assignment { pairs, total_cost }
}

/// Matching cost between soft predicted masks (`N × H × W`) with scores and
/// binary GT masks (`H × W` each).
///
/// Entry `(p, g)` = `λ_c · (focal(s_p, 1) − focal(s_p, 0)) + λ_mask · (dice + mean BCE)`.
pub fn matching_cost<T: Scalar>(masks: &Tensor<T>, scores: &Tensor<T>, gts: &[Tensor<T>], weights: &LossWeights) -> Result<CostMatrix> {
    let (n, h, w) = masks.dims3()?;
    if scores.shape() != [n] {
        return Err(Error::shape("matching cost scores", scores.shape(), &[n]));
    }
    for g in gts {
        if g.shape() != [h, w] {
            return Err(Error::shape("matching cost gt", g.shape(), &[h, w]));
        }
    }
    let hw = h * w;
    let (alpha, gamma) = (T::of(FOCAL_ALPHA), T::of(FOCAL_GAMMA));
    let mut values = Vec::with_capacity(n * gts.len());
    for p in 0..n {
        let s = scores.data()[p];
        let class = (focal(s, true, alpha, gamma).0 - focal(s, false, alpha, gamma).0).as_f64();
        let pred = &masks.data()[p * hw..(p + 1) * hw];
        for g in gts {
            let dice = dice_loss(pred, g.data())?.0.as_f64();
            let bce = bce_mean(pred, g.data())?.0.as_f64();
            values.push(weights.class * class + weights.mask * (dice + bce));
        }
    }
    CostMatrix::new(n, gts.len(), values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Minimum over all injections of the smaller side into the larger one.
    fn brute_force(cost: &CostMatrix) -> f64 {
        fn rec(cost: &CostMatrix, row: usize, used: &mut Vec<bool>, acc: f64, best: &mut f64) {
            if row == cost.rows() {
                *best = best.min(acc);
                return;
            }
            for c in 0..cost.cols() {
                if !used[c] {
                    used[c] = true;
                    rec(cost, row + 1, used, acc + cost.get(row, c), best);
                    used[c] = false;
                }
            }
        }
        let c = if cost.rows() <= cost.cols() { cost.clone() } else { cost.transpose() };
        if c.rows() == 0 {
            return 0.0;
        }
        let mut best = f64::INFINITY;
        rec(&c, 0, &mut vec![false; c.cols()], 0.0, &mut best);
        best
    }

    fn check_valid(cost: &CostMatrix, a: &Assignment) {
        assert_eq!(a.pairs.len(), cost.rows().min(cost.cols()));
        let mut rows: Vec<usize> = a.pairs.iter().map(|p| p.0).collect();
        let mut cols: Vec<usize> = a.pairs.iter().map(|p| p.1).collect();
        rows.dedup();
        cols.sort_unstable();
        cols.dedup();
        assert_eq!(rows.len(), a.pairs.len());
        assert_eq!(cols.len(), a.pairs.len());
        let sum: f64 = a.pairs.iter().map(|&(p, g)| cost.get(p, g)).sum();
        assert_eq!(sum, a.total_cost);
    }

    #[test]
    fn hand_cases() {
        let c = CostMatrix::new(2, 2, vec![4.0, 1.0, 2.0, 3.0]).unwrap();
        let a = hungarian(&c);
        assert_eq!(a.pairs, vec![(0, 1), (1, 0)]);
        assert_eq!(a.total_cost, 3.0);

        let d = CostMatrix::from_fn(3, 3, |r, c| if r == c { 0.0 } else { 5.0 + (r + c) as f64 }).unwrap();
        let a = hungarian(&d);
        assert_eq!(a.pairs, vec![(0, 0), (1, 1), (2, 2)]);
        assert_eq!(a.total_cost, 0.0);
    }

    #[test]
    fn empty_matrices() {
        for (r, c) in [(0, 0), (0, 3), (4, 0)] {
            let a = hungarian(&CostMatrix::new(r, c, vec![]).unwrap());
            assert!(a.pairs.is_empty());
            assert_eq!(a.total_cost, 0.0);
        }
    }

    #[test]
    fn rejects_bad_input() {
        assert!(CostMatrix::new(2, 2, vec![1.0; 3]).is_err());
        assert!(CostMatrix::new(1, 2, vec![1.0, f64::NAN]).is_err());
    }

    #[test]
    fn ties_resolve_lexicographically() {
        let a = hungarian(&CostMatrix::new(3, 3, vec![1.0; 9]).unwrap());
        assert_eq!(a.pairs, vec![(0, 0), (1, 1), (2, 2)]);
        let a = hungarian(&CostMatrix::new(4, 2, vec![0.0; 8]).unwrap());
        assert_eq!(a.pairs, vec![(0, 0), (1, 1)]);
        let a = hungarian(&CostMatrix::new(2, 4, vec![0.0; 8]).unwrap());
        assert_eq!(a.pairs, vec![(0, 0), (1, 1)]);
        // Only row 2 and 3 can be matched cheaply.
        let c = CostMatrix::new(4, 1, vec![1.0, 1.0, 0.0, 0.0]).unwrap();
        assert_eq!(hungarian(&c).pairs, vec![(2, 0)]);
    }

    #[test]
    fn matches_brute_force_small() {
        for seed in 0..200u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (r, c) = (rng.gen_range(1..=6), rng.gen_range(1..=6));
            let cost = CostMatrix::from_fn(r, c, |_, _| rng.gen_range(0..20) as f64).unwrap();
            let a = hungarian(&cost);
            check_valid(&cost, &a);
            assert_eq!(a.total_cost, brute_force(&cost), "seed {seed}");
        }
    }

    #[test]
    fn perfect_pairs_are_recovered() {
        let gt = |on: usize| Tensor::from_fn(&[4, 4], |i| if i % 2 == on { 1.0 } else { 0.0 });
        let gts = vec![gt(0), gt(1)];
        let soft = |g: &Tensor<f64>| g.map(|v| if v > 0.5 { 0.99 } else { 0.01 });
        let masks = Tensor::concat(&[&soft(&gts[1]).reshape(&[1, 4, 4]).unwrap(), &soft(&gts[0]).reshape(&[1, 4, 4]).unwrap()], 0)
            .unwrap();
        let scores = Tensor::new(vec![2], vec![0.9, 0.9]).unwrap();
        let cost = matching_cost(&masks, &scores, &gts, &LossWeights::default()).unwrap();
        assert_eq!(hungarian(&cost).pairs, vec![(0, 1), (1, 0)]);
        // Each row's minimum sits on its perfect pair.
        assert!(cost.get(0, 1) < cost.get(0, 0));
        assert!(cost.get(1, 0) < cost.get(1, 1));
    }

    #[test]
    fn cost_finite_for_uniform_masks() {
        let masks = Tensor::full(&[3, 5, 5], 0.5);
        let scores = Tensor::full(&[3], 0.5);
        let gts = vec![Tensor::zeros(&[5, 5]), Tensor::full(&[5, 5], 1.0)];
        let cost = matching_cost(&masks, &scores, &gts, &LossWeights::default()).unwrap();
        assert!(cost.values().iter().all(|v| v.is_finite()));
        assert!(matching_cost(&masks, &scores, &[Tensor::zeros(&[4, 5])], &LossWeights::default()).is_err());
    }

    proptest! {
        #[test]
        fn invariant_under_row_and_column_shifts(seed in any::<u64>(), n in 1usize..6, extra in 0usize..3, k in -50i32..50) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (rows, cols) = (n + extra, n);
            let cost = CostMatrix::from_fn(rows, cols, |_, _| rng.gen_range(0..30) as f64).unwrap();
            let base = hungarian(&cost);
            // Every column is matched when rows ≥ cols, so a column shift moves
            // every optimum equally.
            let col = rng.gen_range(0..cols);
            let shifted = CostMatrix::from_fn(rows, cols, |r, c| cost.get(r, c) + if c == col { k as f64 } else { 0.0 }).unwrap();
            prop_assert_eq!(&hungarian(&shifted).pairs, &base.pairs);
            if rows == cols {
                let row = rng.gen_range(0..rows);
                let shifted = CostMatrix::from_fn(rows, cols, |r, c| cost.get(r, c) + if r == row { k as f64 } else { 0.0 }).unwrap();
                prop_assert_eq!(&hungarian(&shifted).pairs, &base.pairs);
                let identity: f64 = (0..rows).map(|i| cost.get(i, i)).sum();
                prop_assert!(base.total_cost <= identity);
            }
        }
    }
}
