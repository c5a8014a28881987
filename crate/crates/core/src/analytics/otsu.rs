use num_bigint::BigUint;

use crate::error::{Error, Result};
use crate::io::Raster;

/// 256-bin histogram of a grayscale raster.
pub fn histogram(gray: &Raster) -> Result<[u64; 256]> {
    gray.require_gray("histogram")?;
    let mut h = [0u64; 256];
    for &v in &gray.data {
        h[v as usize] += 1;
    }
    Ok(h)
}

/// OTSU threshold: the `t` maximizing between-class variance when pixels
/// `≤ t` form one class and pixels `> t` the other.
///
/// Comparisons are exact. Ties resolve to the smallest `t`. When the image
/// holds a single value there is nothing to separate and that value is
/// returned, so the `> t` foreground is empty.
pub fn otsu_threshold(gray: &Raster) -> Result<u8> {
    if gray.data.is_empty() {
        return Err(Error::invalid("otsu", "empty image"));
    }
    let hist = histogram(gray)?;
    let n: u64 = hist.iter().sum();
    let total: u64 = hist.iter().enumerate().map(|(i, &c)| i as u64 * c).sum();

    // Between-class variance is (N·s0 − S·w0)² / (N²·w0·w1); the common N²
    // is dropped and candidates are compared as cross-multiplied integers.
    let mut best: Option<(u8, BigUint, BigUint)> = None;
    let (mut w0, mut s0) = (0u64, 0u64);
    for t in 0..=255u8 {
        w0 += hist[t as usize];
        s0 += t as u64 * hist[t as usize];
        let w1 = n - w0;
        if w0 == 0 || w1 == 0 {
            continue;
        }
        let d = (n as i128 * s0 as i128 - total as i128 * w0 as i128).unsigned_abs();
        let num = BigUint::from(d) * BigUint::from(d);
        let den = BigUint::from(w0) * BigUint::from(w1);
        let better = match &best {
            None => true,
            Some((_, bn, bd)) => &num * bd > bn * &den,
        };
        if better {
            best = Some((t, num, den));
        }
    }
    Ok(match best {
        Some((t, _, _)) => t,
        // Fewer than two distinct values.
        None => gray.data[0],
    })
}

/// Pixels on the near side of the OTSU split of a depth raster.
///
/// With `near_is_bright` the near side is `> t`, otherwise `≤ t`. A constant
/// depth raster has no near side.
pub fn near_mask(depth: &Raster, near_is_bright: bool) -> Result<Vec<bool>> {
    let t = otsu_threshold(depth)?;
    let constant = depth.data.iter().all(|&v| v == depth.data[0]);
    Ok(depth.data.iter().map(|&v| !constant && ((v > t) == near_is_bright)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_values_take_lowest_maximizer() {
        let g = Raster::gray(4, 1, vec![0, 255, 0, 255]).unwrap();
        assert_eq!(otsu_threshold(&g).unwrap(), 0);
        let g = Raster::gray(4, 1, vec![10, 200, 10, 200]).unwrap();
        assert_eq!(otsu_threshold(&g).unwrap(), 10);
    }

    #[test]
    fn constant_image() {
        let g = Raster::gray(3, 3, vec![77; 9]).unwrap();
        assert_eq!(otsu_threshold(&g).unwrap(), 77);
        assert!(near_mask(&g, true).unwrap().iter().all(|&b| !b));
        assert!(near_mask(&g, false).unwrap().iter().all(|&b| !b));
        assert!(otsu_threshold(&Raster::gray(0, 0, vec![]).unwrap()).is_err());
    }

    #[test]
    fn separates_bimodal() {
        let g = Raster::gray(6, 1, vec![20, 22, 25, 180, 185, 190]).unwrap();
        let t = otsu_threshold(&g).unwrap();
        assert!((25..180).contains(&t));
        assert_eq!(near_mask(&g, true).unwrap(), vec![false, false, false, true, true, true]);
        assert_eq!(near_mask(&g, false).unwrap(), vec![true, true, true, false, false, false]);
    }

    #[test]
    fn rgb_rejected() {
        assert!(otsu_threshold(&Raster::new(1, 1, 3, vec![1, 2, 3]).unwrap()).is_err());
    }
}
