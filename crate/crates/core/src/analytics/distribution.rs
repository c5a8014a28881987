use serde::{Deserialize, Serialize};

use crate::analytics::Skipped;
use crate::error::{Error, Result};
use crate::io::{Raster, SampleRasters};

/// Per-instance pixel statistics of one index raster: `(count, Σx, Σy)`,
/// indexed by instance id − 1. Ids must be contiguous and nonempty.
fn instance_stats(name: &str, index: &Raster) -> std::result::Result<Vec<(u64, u64, u64)>, Skipped> {
    if index.channels != 1 {
        return Err(Skipped::new(name, "instance raster must be grayscale"));
    }
    let max = index.data.iter().copied().max().unwrap_or(0) as usize;
    let mut stats = vec![(0u64, 0u64, 0u64); max];
    for y in 0..index.height {
        for x in 0..index.width {
            let k = index.at(y, x, 0) as usize;
            if k > 0 {
                let s = &mut stats[k - 1];
                s.0 += 1;
                s.1 += x as u64;
                s.2 += y as u64;
            }
        }
    }
    if let Some(k) = stats.iter().position(|s| s.0 == 0) {
        return Err(Skipped::new(name, format!("instance id {} is empty", k + 1)));
    }
    Ok(stats)
}

fn for_each_instance_raster(
    samples: &[SampleRasters],
    mut f: impl FnMut(&Raster, Vec<(u64, u64, u64)>),
) -> Vec<Skipped> {
    let mut skipped = Vec::new();
    for s in samples {
        let Some(index) = &s.instances else {
            let reason = s.problems.iter().find(|p| p.starts_with("instances")).cloned().unwrap_or_else(|| "instances: not listed".into());
            skipped.push(Skipped::new(&s.name, reason));
            continue;
        };
        match instance_stats(&s.name, index) {
            Ok(stats) => f(index, stats),
            Err(k) => skipped.push(k),
        }
    }
    skipped
}

/// Bins covered by a centroid coordinate `(2Σ + n) / (2n·extent)` on a
/// `grid`-bin axis, with weights. A coordinate exactly on a bin edge is split
/// evenly between the two neighbours.
fn axis_bins(sum: u64, n: u64, extent: usize, grid: usize) -> Vec<(usize, f64)> {
    let num = (2 * sum + n) as u128 * grid as u128;
    let den = 2 * n as u128 * extent as u128;
    let q = (num / den) as usize;
    if num % den == 0 && q > 0 {
        vec![(q - 1, 0.5), (q, 0.5)]
    } else {
        vec![(q.min(grid - 1), 1.0)]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CenterBias {
    pub grid: usize,
    /// `grid × grid`, row-major with rows along y; sums to 1.
    pub histogram: Vec<f64>,
    pub instances: usize,
    pub skipped: Vec<Skipped>,
}

impl CenterBias {
    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.histogram[row * self.grid + col]
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for row in self.histogram.chunks(self.grid) {
            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            s.push_str(&cells.join(","));
            s.push('\n');
        }
        s
    }

    /// Grayscale heatmap, the densest bin mapped to 255.
    pub fn heatmap(&self) -> Raster {
        let max = self.histogram.iter().copied().fold(0.0, f64::max);
        Raster::from_fn_gray(self.grid, self.grid, |y, x| {
            if max > 0.0 {
                (self.at(y, x) / max * 255.0).round() as u8
            } else {
                0
            }
        })
    }
}

/// Histogram of instance pixel centroids over a `grid × grid` partition of
/// the unit square. Pixel `(x, y)` sits at `((x + ½)/W, (y + ½)/H)`.
pub fn center_bias(samples: &[SampleRasters], grid: usize) -> Result<CenterBias> {
    if grid < 2 {
        return Err(Error::invalid("center bias", "grid must be at least 2"));
    }
    let mut histogram = vec![0.0; grid * grid];
    let mut instances = 0;
    let skipped = for_each_instance_raster(samples, |index, stats| {
        for (n, sx, sy) in stats {
            instances += 1;
            for (col, wx) in axis_bins(sx, n, index.width, grid) {
                for (row, wy) in axis_bins(sy, n, index.height, grid) {
                    histogram[row * grid + col] += wx * wy;
                }
            }
        }
    });
    if instances == 0 {
        return Err(Error::EmptyDataset);
    }
    histogram.iter_mut().for_each(|v| *v /= instances as f64);
    Ok(CenterBias { grid, histogram, instances, skipped })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SizeDistribution {
    /// Bin `k` covers `[k/bins, (k+1)/bins)`; the last bin also holds 1.
    pub counts: Vec<u64>,
    /// Instance pixels over image pixels, one per instance in sample order.
    pub ratios: Vec<f64>,
    pub skipped: Vec<Skipped>,
}

impl SizeDistribution {
    pub fn to_csv(&self) -> String {
        let bins = self.counts.len();
        let mut s = String::from("bin_low,bin_high,count\n");
        for (k, c) in self.counts.iter().enumerate() {
            s.push_str(&format!("{},{},{c}\n", k as f64 / bins as f64, (k + 1) as f64 / bins as f64));
        }
        s
    }
}

pub fn instance_size_distribution(samples: &[SampleRasters], bins: usize) -> Result<SizeDistribution> {
    if bins == 0 {
        return Err(Error::invalid("size distribution", "bins must be at least 1"));
    }
    let mut counts = vec![0u64; bins];
    let mut ratios = Vec::new();
    let skipped = for_each_instance_raster(samples, |index, stats| {
        let total = index.pixels() as u64;
        for (n, _, _) in stats {
            ratios.push(n as f64 / total as f64);
            counts[((n as u128 * bins as u128 / total as u128) as usize).min(bins - 1)] += 1;
        }
    });
    Ok(SizeDistribution { counts, ratios, skipped })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn with_instances(index: Raster) -> SampleRasters {
        SampleRasters { name: "s".into(), instances: Some(index), ..Default::default() }
    }

    fn boxes(w: usize, h: usize, rects: &[(usize, usize, usize, usize)]) -> Raster {
        Raster::from_fn_gray(w, h, |y, x| {
            rects
                .iter()
                .position(|&(y0, x0, bh, bw)| (y0..y0 + bh).contains(&y) && (x0..x0 + bw).contains(&x))
                .map_or(0, |k| k as u8 + 1)
        })
    }

    #[test]
    fn centered_square() {
        let s = with_instances(boxes(9, 9, &[(3, 3, 3, 3)]));
        let odd = center_bias(&[s.clone()], 3).unwrap();
        assert_eq!(odd.at(1, 1), 1.0);
        // Centroid on the middle edge of an even grid spreads over four bins.
        let even = center_bias(&[s], 4).unwrap();
        for (r, c) in [(1, 1), (1, 2), (2, 1), (2, 2)] {
            assert_eq!(even.at(r, c), 0.25);
        }
    }

    #[test]
    fn opposite_corners() {
        let s = with_instances(boxes(10, 10, &[(0, 0, 2, 2), (8, 8, 2, 2)]));
        let c = center_bias(&[s], 5).unwrap();
        assert_eq!(c.at(0, 0), 0.5);
        assert_eq!(c.at(4, 4), 0.5);
        assert!((c.histogram.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(c.heatmap().data[0], 255);
    }

    #[test]
    fn mirror_equivariance() {
        let index = boxes(12, 7, &[(0, 0, 3, 5), (2, 6, 4, 3), (5, 1, 2, 2)]);
        let a = center_bias(&[with_instances(index.clone())], 4).unwrap();
        let b = center_bias(&[with_instances(index.mirrored())], 4).unwrap();
        for r in 0..4 {
            for c in 0..4 {
                assert_eq!(a.at(r, c), b.at(r, 3 - c));
            }
        }
    }

    #[test]
    fn center_bias_errors() {
        let s = with_instances(boxes(4, 4, &[(0, 0, 1, 1)]));
        assert!(center_bias(&[s], 1).is_err());
        assert!(matches!(center_bias(&[with_instances(boxes(4, 4, &[]))], 2), Err(Error::EmptyDataset)));
        let gap = Raster::gray(2, 1, vec![0, 2]).unwrap();
        let c = center_bias(&[with_instances(gap), with_instances(boxes(4, 4, &[(0, 0, 1, 1)]))], 2).unwrap();
        assert_eq!(c.skipped.len(), 1);
        assert_eq!(c.instances, 1);
    }

    #[test]
    fn size_ratios() {
        let s = with_instances(boxes(100, 100, &[(0, 0, 50, 50), (60, 60, 10, 10)]));
        let d = instance_size_distribution(&[s.clone()], 4).unwrap();
        assert_eq!(d.ratios, vec![0.25, 0.01]);
        assert_eq!(d.counts, vec![1, 1, 0, 0]);
        let full = with_instances(Raster::gray(2, 2, vec![1; 4]).unwrap());
        let d = instance_size_distribution(&[s, full], 4).unwrap();
        assert_eq!(d.counts.iter().sum::<u64>(), 3);
        assert_eq!(d.counts[3], 1);
        assert!(instance_size_distribution(&[], 0).is_err());
        assert!(d.to_csv().starts_with("bin_low,bin_high,count\n0,0.25,1\n"));
    }
}
