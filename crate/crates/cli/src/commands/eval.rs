use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use calibnet::analytics::Skipped;
use calibnet::eval::{evaluate_ap, EvalImage};
use calibnet::io::{instances_from_index, DatasetManifest, Raster};
use calibnet::{CalibNet, Tensor};
use serde::{Deserialize, Serialize};

use crate::config::{NetArgs, RunConfig};
use crate::error::CliError;
use crate::output::{ensure_dir, read_json, write_json, write_text};

#[derive(clap::Args, Debug)]
pub struct Args {
    /// Dataset manifest; ground truth comes from the instance-index rasters.
    #[arg(long)]
    manifest: PathBuf,
    /// Precomputed predictions (JSON); the network is run when omitted.
    #[arg(long)]
    predictions: Option<PathBuf>,
    /// Output directory for `ap.json` and `pr_curves.csv`.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    net: NetArgs,
}

/// `{"samples": [{"name": .., "predictions": [{"score": .., "mask": "a.pgm"}]}]}`,
/// mask paths relative to the predictions file.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PredictionFile {
    samples: Vec<PredictedSample>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PredictedSample {
    name: String,
    predictions: Vec<PredictedMask>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PredictedMask {
    score: f64,
    mask: PathBuf,
}

#[derive(Serialize)]
struct Report {
    images: usize,
    ground_truth: usize,
    predictions: usize,
    ap: f64,
    ap50: f64,
    ap70: f64,
    per_threshold: BTreeMap<String, f64>,
    skipped: Vec<Skipped>,
}

fn load_predictions(path: &Path) -> Result<BTreeMap<String, Vec<(f64, Tensor<f64>)>>, CliError> {
    let file: PredictionFile = serde_json::from_value(read_json(path)?)?;
    let root = path.parent().unwrap_or(Path::new(""));
    let mut out = BTreeMap::new();
    for s in file.samples {
        let preds = s
            .predictions
            .into_iter()
            .map(|p| {
                let r = Raster::read(root.join(&p.mask))?;
                r.require_gray("prediction mask")?;
                Ok((p.score, r.to_tensor::<f64>().into_reshape(&[r.height, r.width])?))
            })
            .collect::<Result<Vec<_>, calibnet::Error>>()?;
        if out.insert(s.name.clone(), preds).is_some() {
            return Err(CliError::Data(format!("duplicate predictions for `{}`", s.name)));
        }
    }
    Ok(out)
}

pub fn run(args: Args, seed: Option<u64>, config: Option<&PathBuf>) -> Result<(), CliError> {
    let rc = RunConfig::resolve(seed, config, &args.net)?;
    let manifest = DatasetManifest::load(&args.manifest)?;
    let mut given = args.predictions.as_deref().map(load_predictions).transpose()?;
    let net = match given {
        Some(_) => None,
        None => Some(CalibNet::<f64>::new(rc.pipeline.clone(), rc.seed)?),
    };
    let mut images = Vec::new();
    let mut skipped = Vec::new();
    for s in manifest.read_all() {
        let Some(index) = &s.instances else {
            skipped.push(Skipped::new(&s.name, s.problems.join("; ").if_empty("instances: not listed")));
            continue;
        };
        let gts = match instances_from_index::<f64>(index) {
            Ok(g) => g,
            Err(e) => {
                skipped.push(Skipped::new(&s.name, e.to_string()));
                continue;
            }
        };
        let predictions = match (&mut given, &net) {
            (Some(map), _) => map.remove(&s.name).unwrap_or_default(),
            (None, Some(net)) => {
                let (Some(rgb), Some(depth)) = (&s.rgb, &s.depth) else {
                    skipped.push(Skipped::new(&s.name, s.problems.join("; ").if_empty("rgb and depth required to run the network")));
                    continue;
                };
                let (rgb, depth) = match super::pair_tensors(rgb, depth) {
                    Ok(p) => p,
                    Err(e) => {
                        skipped.push(Skipped::new(&s.name, e.to_string()));
                        continue;
                    }
                };
                let thr = rc.pipeline.mask_threshold;
                net.forward(&rgb, &depth)?
                    .into_iter()
                    .map(|p| (p.score, p.binary_mask(thr)))
                    .collect()
            }
            (None, None) => unreachable!("network built when no predictions are given"),
        };
        if let Some((_, m)) = predictions.iter().find(|(_, m)| m.shape() != [index.height, index.width]) {
            skipped.push(Skipped::new(&s.name, format!("prediction shape {:?} differs from ground truth", m.shape())));
            continue;
        }
        images.push(EvalImage { predictions, ground_truth: gts });
    }
    if let Some(map) = &given {
        if let Some(name) = map.keys().next() {
            return Err(CliError::Data(format!("predictions for unknown sample `{name}`")));
        }
    }
    let report = evaluate_ap(&images)?;
    ensure_dir(&args.out)?;
    write_text(&args.out.join("pr_curves.csv"), &report.curves_csv())?;
    let summary = Report {
        images: images.len(),
        ground_truth: images.iter().map(|i| i.ground_truth.len()).sum(),
        predictions: images.iter().map(|i| i.predictions.len()).sum(),
        ap: report.ap,
        ap50: report.ap50,
        ap70: report.ap70,
        per_threshold: report.curves.iter().map(|c| (format!("{:.2}", c.iou_threshold), c.ap)).collect(),
        skipped,
    };
    println!(
        "eval: {} images, {} ground-truth instances: AP {:.4}, AP50 {:.4}, AP70 {:.4} ({} skipped)",
        summary.images,
        summary.ground_truth,
        summary.ap,
        summary.ap50,
        summary.ap70,
        summary.skipped.len()
    );
    write_json(&args.out.join("ap.json"), &summary)
}

trait IfEmpty {
    fn if_empty(self, fallback: &str) -> String;
}

impl IfEmpty for String {
    fn if_empty(self, fallback: &str) -> String {
        if self.is_empty() {
            fallback.to_string()
        } else {
            self
        }
    }
}
