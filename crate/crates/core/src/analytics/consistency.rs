use serde::{Deserialize, Serialize};

use crate::analytics::otsu::near_mask;
use crate::analytics::Skipped;
use crate::error::{Error, Result};
use crate::io::{Raster, SampleRasters};

/// Number of evenly spaced IoU thresholds, `0, 0.01, …, 1`.
pub const CURVE_POINTS: usize = 101;

/// Per-sample IoU as exact pixel counts.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleOverlap {
    pub name: String,
    pub intersection: u64,
    pub union: u64,
}

impl SampleOverlap {
    /// 1 when both masks are empty.
    pub fn iou(&self) -> f64 {
        if self.union == 0 {
            1.0
        } else {
            self.intersection as f64 / self.union as f64
        }
    }

    /// `IoU ≥ pct/100`, compared exactly.
    fn reaches(&self, pct: u64) -> bool {
        self.union == 0 || self.intersection * 100 >= pct * self.union
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyCurve {
    pub thresholds: Vec<f64>,
    /// Fraction of samples whose IoU reaches each threshold.
    pub exceedance: Vec<f64>,
    pub mean_iou: f64,
    pub samples: Vec<SampleOverlap>,
    pub skipped: Vec<Skipped>,
}

impl ConsistencyCurve {
    pub fn from_overlaps(samples: Vec<SampleOverlap>, skipped: Vec<Skipped>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let n = samples.len() as f64;
        let exceedance = (0..CURVE_POINTS as u64)
            .map(|pct| samples.iter().filter(|s| s.reaches(pct)).count() as f64 / n)
            .collect();
        Ok(Self {
            thresholds: (0..CURVE_POINTS).map(|i| i as f64 / 100.0).collect(),
            exceedance,
            mean_iou: samples.iter().map(SampleOverlap::iou).sum::<f64>() / n,
            samples,
            skipped,
        })
    }

    /// Exceedance at `pct/100`.
    pub fn at(&self, pct: usize) -> f64 {
        self.exceedance[pct]
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("threshold,exceedance\n");
        for (t, e) in self.thresholds.iter().zip(&self.exceedance) {
            s.push_str(&format!("{t},{e}\n"));
        }
        s
    }
}

fn overlap(name: &str, a: impl Iterator<Item = bool>, b: impl Iterator<Item = bool>) -> SampleOverlap {
    let (mut intersection, mut union) = (0, 0);
    for (x, y) in a.zip(b) {
        intersection += u64::from(x && y);
        union += u64::from(x || y);
    }
    SampleOverlap { name: name.to_string(), intersection, union }
}

fn same_size(name: &str, a: &Raster, b: &Raster) -> std::result::Result<(), Skipped> {
    if (a.width, a.height) != (b.width, b.height) {
        return Err(Skipped::new(name, format!("size mismatch {}×{} vs {}×{}", a.width, a.height, b.width, b.height)));
    }
    if a.channels != 1 || b.channels != 1 {
        return Err(Skipped::new(name, "expected grayscale rasters"));
    }
    Ok(())
}

fn required<'a>(s: &'a SampleRasters, r: &'a Option<Raster>, what: &str) -> std::result::Result<&'a Raster, Skipped> {
    r.as_ref().ok_or_else(|| {
        let detail = s.problems.iter().find(|p| p.starts_with(what)).cloned().unwrap_or_else(|| format!("{what}: not listed"));
        Skipped::new(&s.name, detail)
    })
}

fn collect(
    samples: &[SampleRasters],
    f: impl Fn(&SampleRasters) -> std::result::Result<SampleOverlap, Skipped>,
) -> Result<ConsistencyCurve> {
    let (mut ok, mut skipped) = (Vec::new(), Vec::new());
    for s in samples {
        match f(s) {
            Ok(o) => ok.push(o),
            Err(k) => skipped.push(k),
        }
    }
    ConsistencyCurve::from_overlaps(ok, skipped)
}

/// IoU between the near side of the OTSU-binarized depth and the object mask.
pub fn depth_saliency_consistency(samples: &[SampleRasters], near_is_bright: bool) -> Result<ConsistencyCurve> {
    collect(samples, |s| {
        let depth = required(s, &s.depth, "depth")?;
        let object = required(s, &s.object_mask, "object_mask")?;
        same_size(&s.name, depth, object)?;
        let near = near_mask(depth, near_is_bright).map_err(|e| Skipped::new(&s.name, e.to_string()))?;
        Ok(overlap(&s.name, near.into_iter(), object.data.iter().map(|&v| v != 0)))
    })
}

/// IoU between the union of all instances and the object mask.
pub fn object_instance_consistency(samples: &[SampleRasters]) -> Result<ConsistencyCurve> {
    collect(samples, |s| {
        let inst = required(s, &s.instances, "instances")?;
        let object = required(s, &s.object_mask, "object_mask")?;
        same_size(&s.name, inst, object)?;
        Ok(overlap(&s.name, inst.data.iter().map(|&v| v != 0), object.data.iter().map(|&v| v != 0)))
    })
}
