use std::path::PathBuf;

use calibnet::analytics::{
    center_bias, depth_saliency_consistency, instance_size_distribution, object_instance_consistency, otsu_threshold, Skipped,
};
use calibnet::io::DatasetManifest;
use calibnet::Error;
use serde::Serialize;

use crate::error::CliError;
use crate::output::{ensure_dir, write_json, write_text};

#[derive(clap::Args, Debug)]
pub struct Args {
    #[arg(long)]
    manifest: PathBuf,
    /// Output directory for the JSON summary, CSV tables and the heatmap.
    #[arg(long)]
    out: PathBuf,
    /// Center-bias grid size.
    #[arg(long, default_value_t = 8)]
    grid: usize,
    /// Instance-size histogram bins.
    #[arg(long, default_value_t = 10)]
    bins: usize,
}

#[derive(Serialize)]
struct CurveSummary {
    samples: usize,
    mean_iou: f64,
    exceedance_at_half: f64,
    skipped: Vec<Skipped>,
}

#[derive(Serialize)]
struct Report {
    samples: usize,
    depth_near_is_bright: bool,
    otsu_thresholds: Vec<(String, u8)>,
    depth_saliency: Option<CurveSummary>,
    object_instance: Option<CurveSummary>,
    center_bias_instances: usize,
    instance_sizes: Vec<u64>,
    skipped: Vec<Skipped>,
}

/// Empty inputs yield no result rather than an error.
fn optional<T>(r: calibnet::Result<T>) -> Result<Option<T>, CliError> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::EmptyDataset) => Ok(None),
        Err(e) => Err(e.into()),
    }
}

pub fn run(args: Args) -> Result<(), CliError> {
    if args.grid < 2 || args.bins == 0 {
        return Err(CliError::Usage("--grid must be ≥ 2 and --bins ≥ 1".into()));
    }
    let manifest = DatasetManifest::load(&args.manifest)?;
    let samples = manifest.read_all();
    ensure_dir(&args.out)?;

    let mut otsu = Vec::new();
    for s in &samples {
        if let Some(d) = &s.depth {
            if d.channels == 1 && !d.data.is_empty() {
                otsu.push((s.name.clone(), otsu_threshold(d)?));
            }
        }
    }
    let summarize = |c: &calibnet::analytics::ConsistencyCurve| CurveSummary {
        samples: c.samples.len(),
        mean_iou: c.mean_iou,
        exceedance_at_half: c.at(50),
        skipped: c.skipped.clone(),
    };
    let depth = optional(depth_saliency_consistency(&samples, manifest.depth_near_is_bright))?;
    if let Some(c) = &depth {
        write_text(&args.out.join("depth_saliency_curve.csv"), &c.to_csv())?;
    }
    let object = optional(object_instance_consistency(&samples))?;
    if let Some(c) = &object {
        write_text(&args.out.join("object_instance_curve.csv"), &c.to_csv())?;
    }
    let bias = optional(center_bias(&samples, args.grid))?;
    if let Some(b) = &bias {
        write_text(&args.out.join("center_bias.csv"), &b.to_csv())?;
        b.heatmap().write(args.out.join("center_bias.pgm"))?;
    }
    let sizes = instance_size_distribution(&samples, args.bins)?;
    write_text(&args.out.join("instance_sizes.csv"), &sizes.to_csv())?;

    let report = Report {
        samples: samples.len(),
        depth_near_is_bright: manifest.depth_near_is_bright,
        otsu_thresholds: otsu,
        depth_saliency: depth.as_ref().map(summarize),
        object_instance: object.as_ref().map(summarize),
        center_bias_instances: bias.as_ref().map_or(0, |b| b.instances),
        instance_sizes: sizes.counts.clone(),
        skipped: sizes.skipped.clone(),
    };
    let fmt = |c: &Option<CurveSummary>| c.as_ref().map_or("n/a".to_string(), |c| format!("{:.4}", c.mean_iou));
    println!(
        "dataset-stats: {} samples; depth/saliency mean IoU {}, object/instance mean IoU {}, {} instances",
        report.samples,
        fmt(&report.depth_saliency),
        fmt(&report.object_instance),
        sizes.ratios.len()
    );
    write_json(&args.out.join("stats.json"), &report)
}
