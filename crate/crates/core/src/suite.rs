//! Seeded central-difference checks of every learned operator and loss,
//! standalone and through the whole network.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::gradcheck::{grad_check, grad_check_module, GradCheckOptions, GradCheckReport};
use crate::loss::{
    aux_binary_loss, bce_mean, dice_loss, focal_loss, objectness_loss, total_loss_with_targets, LossWeights, SlotTargets,
    FOCAL_ALPHA, FOCAL_GAMMA,
};
use crate::matching::{hungarian, matching_cost};
use crate::net::{dynamic_mask_head, dynamic_mask_head_backward, CalibNet, Dik, Dsa, MaskBranch, MaskInputs, PipelineConfig, RegionHeads, RegionMaps, Wsf};
use crate::nn::{Conv2d, GroupNorm, Linear, SpatialAttention};
use crate::params::{Init, Parameterized};
use crate::tensor::Tensor;
use crate::train::synthetic_sample;

/// Tolerance for standalone operators.
pub const OPERATOR_TOL: f64 = 1e-4;
/// Tolerance through the full network.
pub const PIPELINE_TOL: f64 = 1e-3;

/// Checkable operators, in report order.
pub const OPERATORS: [&str; 18] = [
    "conv1",
    "conv3",
    "conv7",
    "group_norm",
    "linear",
    "spatial_attention",
    "dsa",
    "dik",
    "wsf",
    "mask_branch",
    "dynamic_head",
    "region_heads",
    "focal_loss",
    "dice_loss",
    "bce_loss",
    "objectness_loss",
    "aux_binary_loss",
    "pipeline",
];

#[derive(Clone, Debug, Serialize)]
pub struct SuiteEntry {
    pub op: String,
    pub seed: u64,
    pub tol: f64,
    pub max_rel_error: f64,
    pub passed: bool,
}

fn sym(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

fn unit(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(0.05..0.95))
}

fn binary(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| if rng.gen_bool(0.5) { 1.0 } else { 0.0 })
}

/// Randomizes every parameter, so that e.g. a fresh group norm is not at its identity point.
fn jitter<M: Parameterized<f64>>(m: &mut M, rng: &mut ChaCha8Rng) {
    m.visit_mut("", &mut |_, t| t.data_mut().iter_mut().for_each(|v| *v += rng.gen_range(-0.5..0.5)));
}

fn opts() -> GradCheckOptions {
    GradCheckOptions::default().with_tol(OPERATOR_TOL)
}

fn loss_check(
    f: fn(&[f64], &[f64]) -> Result<(f64, Vec<f64>)>,
    pred: Tensor<f64>,
    target: Tensor<f64>,
) -> Result<GradCheckReport> {
    let (_, g) = f(pred.data(), target.data())?;
    let g = Tensor::new(pred.shape().to_vec(), g)?;
    grad_check(|x| Ok(f(x[0].data(), target.data())?.0), &[pred], &[g], &opts())
}

fn focal_default(pred: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
    focal_loss(pred, target, FOCAL_ALPHA, FOCAL_GAMMA)
}

fn inputs(x: &[Tensor<f64>]) -> MaskInputs<'_, f64> {
    MaskInputs { c2: &x[0], t3: &x[1], d2: &x[2], t3_depth: &x[3] }
}

/// One seeded check of `op`.
pub fn check_operator(op: &str, seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut init = Init::new(seed);
    match op {
        "conv1" | "conv3" | "conv7" => {
            let k = op[4..].parse().expect("kernel size");
            let conv = Conv2d::init(k, 3, 4, &mut init);
            let x = sym(&[5, 6, 3], &mut rng);
            let g = sym(&[5, 6, 4], &mut rng);
            let mut grads = conv.zeroed();
            let dx = conv.backward(&x, &g, &mut grads)?;
            grad_check_module(&conv, &[x], &[dx], &grads, |m, x| m.forward(&x[0])?.dot(&g), &opts())
        }
        "group_norm" => {
            let mut gn = GroupNorm::new(6, 3)?;
            jitter(&mut gn, &mut rng);
            let x = sym(&[4, 5, 6], &mut rng);
            let g = sym(&[4, 5, 6], &mut rng);
            let (_, cache) = gn.forward(&x)?;
            let mut grads = gn.zeroed();
            let dx = gn.backward(&cache, &g, &mut grads)?;
            grad_check_module(&gn, &[x], &[dx], &grads, |m, x| m.forward(&x[0])?.0.dot(&g), &opts())
        }
        "linear" => {
            let lin = Linear::init(5, 3, &mut init);
            let x = sym(&[4, 5], &mut rng);
            let g = sym(&[4, 3], &mut rng);
            let mut grads = lin.zeroed();
            let dx = lin.backward(&x, &g, &mut grads)?;
            grad_check_module(&lin, &[x], &[dx], &grads, |m, x| m.forward(&x[0])?.dot(&g), &opts())
        }
        "spatial_attention" => {
            let sa = SpatialAttention::init(&mut init);
            let x = sym(&[6, 7, 4], &mut rng);
            let g = sym(&[6, 7], &mut rng);
            let (_, cache) = sa.forward(&x)?;
            let mut grads = sa.zeroed();
            let dx = sa.backward(&cache, &g, &mut grads)?;
            grad_check_module(&sa, &[x], &[dx], &grads, |m, x| m.forward(&x[0])?.0.dot(&g), &opts())
        }
        "dsa" => {
            let dsa = Dsa::init(3, &mut init);
            let (xr, xd) = (sym(&[4, 5, 3], &mut rng), sym(&[4, 5, 3], &mut rng));
            let g = sym(&[4, 5, 3], &mut rng);
            let (_, _, cache) = dsa.forward(&xr, &xd)?;
            let mut grads = dsa.zeroed();
            let (dr, dd) = dsa.backward(&cache, &g, &mut grads)?;
            grad_check_module(&dsa, &[xr, xd], &[dr, dd], &grads, |m, x| m.forward(&x[0], &x[1])?.0.dot(&g), &opts())
        }
        "dik" => {
            let dik = Dik::init(3, 2, &mut init)?;
            let (xr, xd) = (sym(&[4, 5, 3], &mut rng), sym(&[4, 5, 3], &mut rng));
            let (gk, gs, go) = (sym(&[2, 3], &mut rng), sym(&[2], &mut rng), sym(&[2], &mut rng));
            let (_, cache) = dik.forward(&xr, &xd)?;
            let mut grads = dik.zeroed();
            let (dr, dd) = dik.backward(&cache, &gk, &gs, &go, &mut grads)?;
            grad_check_module(
                &dik,
                &[xr, xd],
                &[dr, dd],
                &grads,
                |m, x| {
                    let (k, _) = m.forward(&x[0], &x[1])?;
                    Ok(k.kernels.dot(&gk)? + k.scores.dot(&gs)? + k.objectness.dot(&go)?)
                },
                &opts(),
            )
        }
        "wsf" => {
            let wsf = Wsf::init(2, 1, &mut init)?;
            let (xr, xd) = (sym(&[3, 4, 2], &mut rng), sym(&[3, 4, 2], &mut rng));
            let g = sym(&[3, 4, 2], &mut rng);
            let (_, cache) = wsf.forward(&xr, &xd)?;
            let mut grads = wsf.zeroed();
            let (dr, dd) = wsf.backward(&cache, &g, &mut grads)?;
            grad_check_module(&wsf, &[xr, xd], &[dr, dd], &grads, |m, x| m.forward(&x[0], &x[1])?.0.dot(&g), &opts())
        }
        "mask_branch" => {
            let mb = MaskBranch::init(2, 1, &mut init)?;
            let xs = [sym(&[4, 6, 2], &mut rng), sym(&[2, 3, 2], &mut rng), sym(&[4, 6, 2], &mut rng), sym(&[2, 3, 2], &mut rng)];
            let g = sym(&[4, 6, 2], &mut rng);
            let (_, cache) = mb.forward(&inputs(&xs))?;
            let mut grads = mb.zeroed();
            let d = mb.backward(&cache, &g, &mut grads)?;
            grad_check_module(&mb, &xs, &[d.c2, d.t3, d.d2, d.t3_depth], &grads, |m, x| m.forward(&inputs(x))?.0.dot(&g), &opts())
        }
        "dynamic_head" => {
            let (k, f) = (sym(&[3, 4], &mut rng), sym(&[4, 5, 4], &mut rng));
            let g = sym(&[3, 8, 10], &mut rng);
            let (_, cache) = dynamic_mask_head(&k, &f, 8, 10)?;
            let (dk, df) = dynamic_mask_head_backward(&cache, &g)?;
            grad_check(|x| dynamic_mask_head(&x[0], &x[1], 8, 10)?.0.dot(&g), &[k, f], &[dk, df], &opts())
        }
        "region_heads" => {
            let heads = RegionHeads::init(3, &mut init);
            let xs = [sym(&[4, 6, 3], &mut rng), sym(&[2, 3, 3], &mut rng), sym(&[4, 6, 3], &mut rng), sym(&[2, 3, 3], &mut rng)];
            let g = RegionMaps { c2: sym(&[4, 6], &mut rng), t3: sym(&[2, 3], &mut rng), d2: sym(&[4, 6], &mut rng), d3: sym(&[2, 3], &mut rng) };
            let obj = |m: &RegionHeads<f64>, x: &[Tensor<f64>]| -> Result<f64> {
                let (r, _) = m.forward(&x[0], &x[1], &x[2], &x[3])?;
                Ok(r.c2.dot(&g.c2)? + r.t3.dot(&g.t3)? + r.d2.dot(&g.d2)? + r.d3.dot(&g.d3)?)
            };
            let (_, cache) = heads.forward(&xs[0], &xs[1], &xs[2], &xs[3])?;
            let mut grads = heads.zeroed();
            let d = heads.backward(&cache, &g, &mut grads)?;
            grad_check_module(&heads, &xs, &d, &grads, obj, &opts())
        }
        "focal_loss" => loss_check(focal_default, unit(&[7], &mut rng), binary(&[7], &mut rng)),
        "dice_loss" => loss_check(dice_loss, unit(&[12], &mut rng), binary(&[12], &mut rng)),
        "bce_loss" => loss_check(bce_mean, unit(&[12], &mut rng), binary(&[12], &mut rng)),
        "objectness_loss" => loss_check(objectness_loss, unit(&[5], &mut rng), unit(&[5], &mut rng)),
        "aux_binary_loss" => {
            let gt = binary(&[8, 12], &mut rng);
            let w = LossWeights::default();
            let maps = [unit(&[4, 6], &mut rng), unit(&[2, 3], &mut rng), unit(&[4, 6], &mut rng), unit(&[2, 3], &mut rng)];
            let as_maps = |x: &[Tensor<f64>]| RegionMaps { c2: x[0].clone(), t3: x[1].clone(), d2: x[2].clone(), d3: x[3].clone() };
            let (_, g) = aux_binary_loss(&as_maps(&maps), &gt, &w)?;
            grad_check(|x| Ok(aux_binary_loss(&as_maps(x), &gt, &w)?.0), &maps, &[g.c2, g.t3, g.d2, g.d3], &opts())
        }
        "pipeline" => pipeline_check(seed),
        other => Err(Error::invalid("gradcheck", format!("unknown operator `{other}`"))),
    }
}

/// Total loss through the whole network on a synthetic 32×48 sample, with
/// the matching and the objectness targets held fixed.
fn pipeline_check(seed: u64) -> Result<GradCheckReport> {
    let net = CalibNet::<f64>::new(PipelineConfig::with_size(4, 8), seed)?;
    let sample = synthetic_sample::<f64>(32, 48, 2, seed)?;
    let w = LossWeights::default();
    let (out, cache) = net.forward_detailed(&sample.rgb, &sample.depth)?;
    let assignment = hungarian(&matching_cost(&out.masks, &out.scores, &sample.instances, &w)?);
    let targets = SlotTargets::new(&out, &sample.instances, &assignment)?;
    let (_, g) = total_loss_with_targets(&out, &sample.instances, &targets, &w)?;
    let grads = net.backward(&cache, &g)?;
    grad_check_module(
        &net,
        &[],
        &[],
        &grads,
        |m, _| {
            let (o, _) = m.forward_detailed(&sample.rgb, &sample.depth)?;
            Ok(total_loss_with_targets(&o, &sample.instances, &targets, &w)?.0.total)
        },
        &GradCheckOptions::default().with_tol(PIPELINE_TOL).sampled(4, seed),
    )
}

/// Runs `check_operator` for every `op` and seed `0..seeds`.
pub fn grad_suite(ops: &[&str], seeds: u64) -> Result<Vec<SuiteEntry>> {
    let mut out = Vec::with_capacity(ops.len() * seeds as usize);
    for op in ops {
        for seed in 0..seeds {
            let r = check_operator(op, seed)?;
            out.push(SuiteEntry {
                op: op.to_string(),
                seed,
                tol: r.tol,
                max_rel_error: r.max_rel_error(),
                passed: r.passed(),
            });
        }
    }
    Ok(out)
}
