use std::path::PathBuf;

use calibnet::io::Raster;
use calibnet::params::load_params;
use calibnet::CalibNet;
use serde::Serialize;

use crate::config::{NetArgs, RunConfig};
use crate::error::CliError;
use crate::output::{ensure_dir, write_json};

#[derive(clap::Args, Debug)]
pub struct Args {
    /// Color image (binary PPM).
    #[arg(long)]
    rgb: PathBuf,
    /// Depth image (binary PGM).
    #[arg(long)]
    depth: PathBuf,
    /// Output directory for `scores.json` and `mask_*.pgm`.
    #[arg(long)]
    out: PathBuf,
    /// Parameter directory written by `calibnet::params::save_params` (seeded init if absent).
    #[arg(long)]
    weights: Option<PathBuf>,
    #[command(flatten)]
    net: NetArgs,
}

#[derive(Serialize)]
struct Prediction {
    rank: usize,
    slot: usize,
    score: f64,
    objectness: f64,
    kept: bool,
    mask: String,
    mask_pixels: usize,
}

#[derive(Serialize)]
struct Report {
    seed: u64,
    height: usize,
    width: usize,
    config: calibnet::PipelineConfig,
    similarity: [f64; 3],
    predictions: Vec<Prediction>,
}

pub fn run(args: Args, seed: Option<u64>, config: Option<&PathBuf>) -> Result<(), CliError> {
    let rc = RunConfig::resolve(seed, config, &args.net)?;
    let (rgb, depth) = super::read_pair(&args.rgb, &args.depth)?;
    let mut net = CalibNet::<f64>::new(rc.pipeline.clone(), rc.seed)?;
    if let Some(dir) = &args.weights {
        load_params(&mut net, dir)?;
    }
    let (out, _) = net.forward_detailed(&rgb, &depth)?;
    let preds = out.predictions()?;
    ensure_dir(&args.out)?;
    let mut rows = Vec::with_capacity(preds.len());
    for (rank, p) in preds.iter().enumerate() {
        let file = format!("mask_{rank:03}.pgm");
        Raster::from_unit_tensor(&p.mask)?.write(args.out.join(&file))?;
        rows.push(Prediction {
            rank,
            slot: p.slot,
            score: p.score,
            objectness: p.objectness,
            kept: p.score >= rc.pipeline.score_threshold,
            mask: file,
            mask_pixels: p.mask.data().iter().filter(|&&v| v >= rc.pipeline.mask_threshold).count(),
        });
    }
    let (h, w) = (rgb.shape()[0], rgb.shape()[1]);
    let kept = rows.iter().filter(|r| r.kept).count();
    write_json(
        &args.out.join("scores.json"),
        &Report { seed: rc.seed, height: h, width: w, config: rc.pipeline, similarity: out.similarity, predictions: rows },
    )?;
    println!("forward: {h}×{w}, {} masks written to {}, {kept} above the score threshold", preds.len(), args.out.display());
    Ok(())
}
