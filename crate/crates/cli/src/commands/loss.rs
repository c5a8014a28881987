use std::path::PathBuf;

use calibnet::io::{instances_from_index, Raster};
use calibnet::loss::total_loss;
use calibnet::matching::matching_cost;
use calibnet::{hungarian, Assignment, CalibNet, LossBreakdown, LossWeights};
use serde::Serialize;

use crate::config::{NetArgs, RunConfig};
use crate::error::CliError;
use crate::output::write_json;

#[derive(clap::Args, Debug)]
pub struct Args {
    #[arg(long)]
    rgb: PathBuf,
    #[arg(long)]
    depth: PathBuf,
    /// Instance-index raster (value k marks instance k, 0 is background).
    #[arg(long)]
    instances: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    net: NetArgs,
}

#[derive(Serialize)]
struct Report {
    seed: u64,
    instances: usize,
    weights: LossWeights,
    assignment: Assignment,
    loss: LossBreakdown,
}

pub fn run(args: Args, seed: Option<u64>, config: Option<&PathBuf>) -> Result<(), CliError> {
    let rc = RunConfig::resolve(seed, config, &args.net)?;
    let (rgb, depth) = super::read_pair(&args.rgb, &args.depth)?;
    let index = Raster::read(&args.instances)?;
    if (index.height, index.width) != (rgb.shape()[0], rgb.shape()[1]) {
        return Err(CliError::Data("instance raster size differs from the image".into()));
    }
    let gts = instances_from_index::<f64>(&index)?;
    let net = CalibNet::<f64>::new(rc.pipeline, rc.seed)?;
    let (out, _) = net.forward_detailed(&rgb, &depth)?;
    let weights = LossWeights::default();
    let assignment = hungarian(&matching_cost(&out.masks, &out.scores, &gts, &weights)?);
    let loss = total_loss(&out, &gts, &assignment, &weights)?;
    if !loss.total.is_finite() {
        return Err(CliError::Internal("non-finite loss".into()));
    }
    println!(
        "loss: total {:.6} (class {:.6}, mask {:.6}, objectness {:.6}, binary {:.6}); {} instances matched",
        loss.total,
        loss.l_c,
        loss.l_mask,
        loss.l_obj,
        loss.l_bin,
        assignment.pairs.len()
    );
    let report = Report { seed: rc.seed, instances: gts.len(), weights, assignment, loss };
    match &args.out {
        Some(p) => write_json(p, &report),
        None => {
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(())
        }
    }
}
