use std::path::PathBuf;

use calibnet::{hungarian, CostMatrix};
use serde::Serialize;

use crate::error::CliError;
use crate::output::{read_json, write_json};

#[derive(clap::Args, Debug)]
pub struct Args {
    /// Cost matrix as JSON: an array of rows (predictions × ground truths) or
    /// `{"rows": r, "cols": c, "values": [...]}` in row-major order.
    #[arg(long)]
    cost: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize)]
struct Pair {
    prediction: usize,
    gt: usize,
    cost: f64,
}

#[derive(Serialize)]
struct Report {
    rows: usize,
    cols: usize,
    total_cost: f64,
    pairs: Vec<Pair>,
}

pub fn parse_cost(v: &serde_json::Value) -> Result<CostMatrix, CliError> {
    let bad = |m: &str| CliError::Data(format!("cost matrix: {m}"));
    let number = |x: &serde_json::Value| x.as_f64().ok_or_else(|| bad("entries must be numbers"));
    match v {
        serde_json::Value::Array(rows) => {
            let cols = match rows.first() {
                None => 0,
                Some(r) => r.as_array().ok_or_else(|| bad("rows must be arrays"))?.len(),
            };
            let mut values = Vec::with_capacity(rows.len() * cols);
            for r in rows {
                let r = r.as_array().ok_or_else(|| bad("rows must be arrays"))?;
                if r.len() != cols {
                    return Err(bad("ragged rows"));
                }
                for x in r {
                    values.push(number(x)?);
                }
            }
            Ok(CostMatrix::new(rows.len(), cols, values)?)
        }
        serde_json::Value::Object(o) => {
            let dim = |k: &str| o.get(k).and_then(|x| x.as_u64()).map(|x| x as usize).ok_or_else(|| bad(&format!("missing `{k}`")));
            let values = o.get("values").and_then(|x| x.as_array()).ok_or_else(|| bad("missing `values`"))?;
            let values = values.iter().map(number).collect::<Result<Vec<_>, _>>()?;
            Ok(CostMatrix::new(dim("rows")?, dim("cols")?, values)?)
        }
        _ => Err(bad("expected an array of rows or an object")),
    }
}

pub fn run(args: Args) -> Result<(), CliError> {
    let m = parse_cost(&read_json(&args.cost)?)?;
    let a = hungarian(&m);
    let pairs: Vec<Pair> = a.pairs.iter().map(|&(p, g)| Pair { prediction: p, gt: g, cost: m.get(p, g) }).collect();
    println!("match: {}×{} cost matrix, {} pairs, total cost {}", m.rows(), m.cols(), pairs.len(), a.total_cost);
    if let Some(out) = &args.out {
        write_json(out, &Report { rows: m.rows(), cols: m.cols(), total_cost: a.total_cost, pairs })?;
    } else {
        println!("{}", serde_json::to_string(&a)?);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn both_layouts() {
        let a = parse_cost(&json!([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])).unwrap();
        let b = parse_cost(&json!({"rows": 3, "cols": 2, "values": [1, 2, 3, 4, 5, 6]})).unwrap();
        assert_eq!(a, b);
        assert_eq!(parse_cost(&json!([])).unwrap().rows(), 0);
        assert!(parse_cost(&json!([[1.0], [1.0, 2.0]])).is_err());
        assert!(parse_cost(&json!([["x"]])).is_err());
        assert!(parse_cost(&json!(3)).is_err());
    }
}
