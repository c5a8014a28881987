//! Small fixtures with known answers, run by `calibnet selftest`.

use std::path::PathBuf;

use calibnet::analytics::{center_bias, instance_size_distribution, near_mask, otsu_threshold};
use calibnet::eval::{evaluate_ap, EvalImage};
use calibnet::io::{Raster, SampleRasters};
use calibnet::loss::{aux_binary_loss, bce, focal, LossBreakdown};
use calibnet::net::{dynamic_mask_head, similarity_score, RegionMaps};
use calibnet::{hungarian, CostMatrix, LossWeights, Tensor};
use serde::Serialize;

use crate::error::CliError;
use crate::output::write_json;

#[derive(clap::Args, Debug)]
pub struct Args {
    /// Optional JSON report.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize)]
struct Outcome {
    name: &'static str,
    passed: bool,
    detail: String,
}

type Check = fn() -> Result<(), String>;

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn close(a: f64, b: f64, tol: f64, what: &str) -> Result<(), String> {
    ensure((a - b).abs() <= tol, format!("{what}: {a} vs {b}"))
}

fn dsa_reference_angles() -> Result<(), String> {
    let t = [0.2, -1.0, 3.0];
    let neg: Vec<f64> = t.iter().map(|v| -v).collect();
    close(similarity_score(&t, &t), 1.0, 1e-12, "parallel")?;
    close(similarity_score(&t, &neg), 0.0, 1e-12, "antiparallel")?;
    close(similarity_score(&[1.0, 0.0], &[0.0, 2.0]), 0.5, 1e-12, "orthogonal")
}

fn focal_reduces_to_half_bce() -> Result<(), String> {
    for p in [0.1, 0.5, 0.8] {
        close(focal(p, true, 0.5, 0.0).0, 0.5 * bce(p, 1.0).0, 1e-12, "positive")?;
        close(focal(p, false, 0.5, 0.0).0, 0.5 * bce(p, 0.0).0, 1e-12, "negative")?;
    }
    Ok(())
}

fn aux_uniform_half() -> Result<(), String> {
    let half = |h, w| Tensor::full(&[h, w], 0.5);
    let maps = RegionMaps { c2: half(4, 6), t3: half(2, 3), d2: half(4, 6), d3: half(2, 3) };
    let gt = Tensor::from_fn(&[16, 24], |i| (i % 3 == 0) as u8 as f64);
    let (l, _) = aux_binary_loss(&maps, &gt, &LossWeights::default()).map_err(|e| e.to_string())?;
    close(l, 2.0 * std::f64::consts::LN_2, 1e-12, "aux loss")
}

fn loss_recombination() -> Result<(), String> {
    let w = LossWeights::default();
    let b = LossBreakdown { l_c: 0.3, l_mask: 1.1, l_obj: 0.2, l_bin: 0.7, total: 0.0 };
    close(b.recombine(&w), 2.0 * 0.3 + 1.1 + 0.2 + 0.7, 1e-12, "recombination")
}

fn hungarian_small() -> Result<(), String> {
    let m = CostMatrix::new(3, 3, vec![4.0, 1.0, 3.0, 2.0, 0.0, 5.0, 3.0, 2.0, 2.0]).map_err(|e| e.to_string())?;
    let a = hungarian(&m);
    ensure(a.pairs == [(0, 1), (1, 0), (2, 2)], format!("pairs {:?}", a.pairs))?;
    close(a.total_cost, 5.0, 0.0, "cost")?;
    let empty = hungarian(&CostMatrix::new(0, 4, vec![]).map_err(|e| e.to_string())?);
    ensure(empty.pairs.is_empty(), "empty matrix should give no pairs")
}

fn ap_perfect() -> Result<(), String> {
    let g = Tensor::from_fn(&[4, 4], |i| (i < 6) as u8 as f64);
    let img = EvalImage { predictions: vec![(0.9, g.clone())], ground_truth: vec![g] };
    let r = evaluate_ap(&[img]).map_err(|e| e.to_string())?;
    ensure(r.ap == 1.0 && r.ap50 == 1.0 && r.ap70 == 1.0, format!("{} {} {}", r.ap, r.ap50, r.ap70))
}

fn otsu_fixtures() -> Result<(), String> {
    let two = Raster::gray(4, 1, vec![0, 255, 255, 0]).map_err(|e| e.to_string())?;
    ensure(otsu_threshold(&two).ok() == Some(0), "two-valued image should split at 0")?;
    let flat = Raster::gray(3, 2, vec![40; 6]).map_err(|e| e.to_string())?;
    ensure(otsu_threshold(&flat).ok() == Some(40), "constant image threshold")?;
    ensure(near_mask(&flat, true).map_err(|e| e.to_string())?.iter().all(|&b| !b), "constant image foreground")
}

fn netpbm_round_trip() -> Result<(), String> {
    let g = Raster::from_fn_gray(7, 3, |y, x| (31 * y + 17 * x) as u8);
    ensure(Raster::decode(&g.encode()).ok().as_ref() == Some(&g), "PGM")?;
    let c = Raster::new(2, 1, 3, vec![1, 2, 3, 250, 10, 32]).map_err(|e| e.to_string())?;
    ensure(Raster::decode(&c.encode()).ok().as_ref() == Some(&c), "PPM")
}

fn analytics_fixtures() -> Result<(), String> {
    let quarter = Raster::from_fn_gray(100, 100, |y, x| (y < 50 && x < 50) as u8);
    let s = SampleRasters { name: "q".into(), instances: Some(quarter), ..Default::default() };
    let d = instance_size_distribution(std::slice::from_ref(&s), 4).map_err(|e| e.to_string())?;
    ensure(d.ratios == [0.25], format!("ratio {:?}", d.ratios))?;
    let centered = Raster::from_fn_gray(9, 9, |y, x| ((3..6).contains(&y) && (3..6).contains(&x)) as u8);
    let s = SampleRasters { name: "c".into(), instances: Some(centered), ..Default::default() };
    let b = center_bias(&[s], 3).map_err(|e| e.to_string())?;
    ensure(b.at(1, 1) == 1.0, "centered instance lands in the central bin")
}

fn zero_kernel_head() -> Result<(), String> {
    let k = Tensor::zeros(&[2, 3]);
    let f = Tensor::from_fn(&[2, 2, 3], |i| i as f64);
    let (m, _) = dynamic_mask_head(&k, &f, 4, 4).map_err(|e| e.to_string())?;
    ensure(m.data().iter().all(|&v| v == 0.5), "zero kernel should give 0.5 everywhere")
}

const CHECKS: [(&str, Check); 11] = [
    ("dsa_reference_angles", dsa_reference_angles),
    ("focal_reduces_to_half_bce", focal_reduces_to_half_bce),
    ("aux_uniform_half", aux_uniform_half),
    ("loss_recombination", loss_recombination),
    ("hungarian_small", hungarian_small),
    ("ap_perfect", ap_perfect),
    ("otsu_fixtures", otsu_fixtures),
    ("netpbm_round_trip", netpbm_round_trip),
    ("analytics_fixtures", analytics_fixtures),
    ("zero_kernel_head", zero_kernel_head),
    ("empty_inputs", empty_inputs),
];

fn empty_inputs() -> Result<(), String> {
    ensure(evaluate_ap::<f64>(&[]).is_err(), "empty AP dataset is an error")?;
    ensure(center_bias(&[], 4).is_err(), "empty center-bias dataset is an error")?;
    let d = instance_size_distribution(&[], 3).map_err(|e| e.to_string())?;
    ensure(d.counts == [0, 0, 0], "empty size histogram")
}

pub fn run(args: Args) -> Result<(), CliError> {
    let outcomes: Vec<Outcome> = CHECKS
        .iter()
        .map(|(name, f)| {
            let r = f();
            Outcome { name, passed: r.is_ok(), detail: r.err().unwrap_or_default() }
        })
        .collect();
    for o in &outcomes {
        println!("{} {}{}", if o.passed { "ok  " } else { "FAIL" }, o.name, if o.passed { String::new() } else { format!(": {}", o.detail) });
    }
    if let Some(p) = &args.out {
        write_json(p, &outcomes)?;
    }
    let failed = outcomes.iter().filter(|o| !o.passed).count();
    if failed == 0 {
        Ok(())
    } else {
        Err(CliError::Internal(format!("{failed} selftest fixture(s) failed")))
    }
}
