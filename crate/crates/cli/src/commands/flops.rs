use std::path::PathBuf;

use calibnet::eval::{count_costs, describe_pipeline, LayerSpec, ModelDescription};
use calibnet::net::{affinity_macs, AffinityVariant};
use calibnet::CalibNet;
use serde::Serialize;

use crate::config::{NetArgs, RunConfig};
use crate::error::CliError;
use crate::output::write_json;

#[derive(clap::Args, Debug)]
pub struct Args {
    /// Input height. With `--compare-shared-weight` it is also the
    /// feature-map height of the affinity comparison.
    #[arg(long)]
    height: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    /// Layer-list JSON to count instead of the built-in network.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Also report the non-local (hw × hw) affinity alternative.
    #[arg(long)]
    compare_shared_weight: bool,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    net: NetArgs,
}

#[derive(Serialize)]
struct StageCost {
    name: String,
    parameter_count: u64,
    mac_count: u64,
}

#[derive(Serialize)]
struct ModelCost {
    parameter_count: u64,
    mac_count: u64,
    stages: Vec<StageCost>,
}

#[derive(Serialize)]
struct AffinityComparison {
    height: usize,
    width: usize,
    shared_macs: u64,
    non_local_macs: u64,
    ratio: f64,
}

#[derive(Serialize)]
struct ModelComparison {
    shared_macs: u64,
    non_local_macs: u64,
}

#[derive(Serialize)]
struct Comparison {
    affinity: AffinityComparison,
    model: Option<ModelComparison>,
}

#[derive(Serialize)]
struct Report {
    height: Option<usize>,
    width: Option<usize>,
    model: Option<ModelCost>,
    shared_weight_comparison: Option<Comparison>,
}

fn model_cost(m: &ModelDescription) -> ModelCost {
    let total = count_costs(m);
    ModelCost {
        parameter_count: total.parameter_count,
        mac_count: total.mac_count,
        stages: m
            .stage_costs()
            .into_iter()
            .map(|(name, c)| StageCost { name, parameter_count: c.parameter_count, mac_count: c.mac_count })
            .collect(),
    }
}

/// The same description with every fusion affinity switched to `non_local`.
fn with_affinity(m: &ModelDescription, non_local: bool) -> ModelDescription {
    let mut m = m.clone();
    for layer in m.stages.iter_mut().flat_map(|s| s.layers.iter_mut()) {
        if let LayerSpec::Affinity { non_local: nl, .. } = layer {
            *nl = non_local;
        }
    }
    m
}

pub fn run(args: Args, config: Option<&PathBuf>) -> Result<(), CliError> {
    let rc = RunConfig::resolve(Some(0), config, &args.net)?;
    let size = match (args.height, args.width) {
        (Some(h), Some(w)) => Some((h, w)),
        (None, None) => None,
        _ => return Err(CliError::Usage("--height and --width go together".into())),
    };
    let description = match (&args.model, size) {
        (Some(p), _) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?;
            Some(ModelDescription::from_json(&text)?)
        }
        (None, Some((h, w))) if h > 0 && w > 0 && h % CalibNet::<f64>::STRIDE == 0 && w % CalibNet::<f64>::STRIDE == 0 => {
            Some(describe_pipeline(&rc.pipeline, h, w)?)
        }
        (None, Some(_)) if args.compare_shared_weight => None,
        (None, Some((h, w))) => {
            return Err(CliError::Data(format!("input {h}×{w} is not a multiple of {}", CalibNet::<f64>::STRIDE)));
        }
        (None, None) => return Err(CliError::Usage("give --height and --width, or --model".into())),
    };
    let comparison = if args.compare_shared_weight {
        let (h, w) = size.ok_or_else(|| CliError::Usage("--compare-shared-weight needs --height and --width".into()))?;
        let (shared, non_local) = (affinity_macs(AffinityVariant::Shared, h as u64, w as u64), affinity_macs(AffinityVariant::NonLocal, h as u64, w as u64));
        Some(Comparison {
            affinity: AffinityComparison {
                height: h,
                width: w,
                shared_macs: shared,
                non_local_macs: non_local,
                ratio: if shared == 0 { 0.0 } else { non_local as f64 / shared as f64 },
            },
            model: description.as_ref().map(|m| ModelComparison {
                shared_macs: count_costs(&with_affinity(m, false)).mac_count,
                non_local_macs: count_costs(&with_affinity(m, true)).mac_count,
            }),
        })
    } else {
        None
    };
    let model = description.as_ref().map(model_cost);
    if let Some(m) = &model {
        println!("flops: {} parameters, {} MACs", m.parameter_count, m.mac_count);
    }
    if let Some(c) = &comparison {
        let a = &c.affinity;
        println!(
            "affinity at {}×{}: shared {} MACs, non-local {} MACs (×{:.2})",
            a.height, a.width, a.shared_macs, a.non_local_macs, a.ratio
        );
    }
    let report = Report { height: args.height, width: args.width, model, shared_weight_comparison: comparison };
    match &args.out {
        Some(p) => write_json(p, &report),
        None => {
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(())
        }
    }
}

