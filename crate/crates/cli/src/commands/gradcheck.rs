use std::collections::BTreeMap;
use std::path::PathBuf;

use calibnet::suite::{check_operator, SuiteEntry, OPERATORS};
use serde::Serialize;

use crate::error::CliError;
use crate::output::write_json;

#[derive(clap::Args, Debug)]
pub struct Args {
    /// Operators to check (repeatable); all when omitted.
    #[arg(long = "op")]
    ops: Vec<String>,
    /// Number of seeds per operator, starting at the global seed.
    #[arg(long, default_value_t = 20)]
    seeds: u64,
    /// JSON report path.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize)]
struct OpSummary {
    seeds: u64,
    max_rel_error: f64,
    tol: f64,
    passed: bool,
}

#[derive(Serialize)]
struct Report {
    summary: BTreeMap<String, OpSummary>,
    entries: Vec<SuiteEntry>,
}

pub fn run(args: Args, seed: Option<u64>) -> Result<(), CliError> {
    let base = seed.map_or_else(crate::config::env_seed, Ok)?;
    let ops: Vec<&str> = if args.ops.is_empty() { OPERATORS.to_vec() } else { args.ops.iter().map(String::as_str).collect() };
    if let Some(bad) = ops.iter().find(|o| !OPERATORS.contains(o)) {
        return Err(CliError::Usage(format!("unknown operator `{bad}`; known: {}", OPERATORS.join(", "))));
    }
    let mut entries = Vec::new();
    let mut summary = BTreeMap::new();
    for op in &ops {
        let mut s = OpSummary { seeds: args.seeds, max_rel_error: 0.0, tol: 0.0, passed: true };
        for k in 0..args.seeds {
            let r = check_operator(op, base + k)?;
            let e = SuiteEntry { op: op.to_string(), seed: base + k, tol: r.tol, max_rel_error: r.max_rel_error(), passed: r.passed() };
            s.max_rel_error = s.max_rel_error.max(e.max_rel_error);
            s.tol = e.tol;
            s.passed &= e.passed;
            entries.push(e);
        }
        println!("{:<18} {} max rel err {:.3e} (tol {:.0e})", op, if s.passed { "ok  " } else { "FAIL" }, s.max_rel_error, s.tol);
        summary.insert(op.to_string(), s);
    }
    let failed: Vec<String> = summary.iter().filter(|(_, s)| !s.passed).map(|(k, _)| k.clone()).collect();
    if let Some(out) = &args.out {
        write_json(out, &Report { summary, entries })?;
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Internal(format!("gradient check failed for {}", failed.join(", "))))
    }
}
