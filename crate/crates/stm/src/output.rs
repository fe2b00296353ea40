//! File outputs. Everything is rendered in memory and written atomically.

use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;
use stm_core::concentration::TailEstimate;
use stm_core::driver::{IterationRecord, RunReport};

use crate::spec::RunSpec;

pub const ITERATIONS_SCHEMA: &str = "stm-iterations/1";
pub const SUMMARY_SCHEMA: &str = "stm-summary/1";
pub const TAILS_SCHEMA: &str = "stm-tails/1";

/// Writes `bytes` to a temporary file next to `path` and renames it over
/// `path`.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn to_json<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut out = serde_json::to_vec_pretty(value)?;
    out.push(b'\n');
    Ok(out)
}

fn num(v: f64) -> String {
    // shortest round-trip form; independent of locale
    format!("{v:?}")
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

fn flag(v: Option<bool>) -> String {
    v.map(|b| b.to_string()).unwrap_or_default()
}

const ITERATION_COLUMNS: [&str; 30] = [
    "k",
    "sigma",
    "f",
    "f_trial",
    "step_norm",
    "rho",
    "class",
    "chi1_exact",
    "chi2_exact",
    "chi3_exact",
    "chi1_sampled",
    "chi2_sampled",
    "chi3_sampled",
    "chi1_trial",
    "chi2_trial",
    "chi3_trial",
    "model_decrease",
    "n_g",
    "n_b",
    "n_t",
    "subsolver_status",
    "subsolver_evals",
    "condition1_grad_error",
    "condition1_hess_error",
    "condition1_third_error",
    "condition1_holds",
    "model_decrease_ok",
    "step_first_ok",
    "step_second_ok",
    "step_third_ok",
];

fn enum_name<T: Serialize>(v: &T) -> String {
    serde_json::to_value(v)
        .ok()
        .and_then(|j| j.as_str().map(str::to_owned))
        .unwrap_or_default()
}

pub fn iterations_csv(records: &[IterationRecord]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<&str> = ITERATION_COLUMNS.to_vec();
    header.push("counting_ok");
    w.write_record(&header)?;
    for r in records {
        let tri = |t: Option<[f64; 3]>, i: usize| opt(t.map(|v| v[i]));
        let c1 = r.condition1;
        let row = vec![
            r.k.to_string(),
            num(r.sigma),
            num(r.f),
            opt(r.f_trial),
            num(r.step_norm),
            opt(r.rho),
            enum_name(&r.class),
            tri(r.chi_exact, 0),
            tri(r.chi_exact, 1),
            tri(r.chi_exact, 2),
            num(r.chi_sampled[0]),
            num(r.chi_sampled[1]),
            num(r.chi_sampled[2]),
            tri(r.chi_trial, 0),
            tri(r.chi_trial, 1),
            tri(r.chi_trial, 2),
            num(r.model_decrease),
            r.sample_sizes[0].to_string(),
            r.sample_sizes[1].to_string(),
            r.sample_sizes[2].to_string(),
            enum_name(&r.subsolver_status),
            r.subsolver_evals.to_string(),
            opt(c1.map(|c| c.grad_error)),
            opt(c1.map(|c| c.hess_error)),
            opt(c1.map(|c| c.third_error)),
            flag(c1.map(|c| c.holds())),
            flag(r.checks.model_decrease),
            flag(r.checks.step_first),
            flag(r.checks.step_second),
            flag(r.checks.step_third),
            r.checks.counting.to_string(),
        ];
        w.write_record(&row)?;
    }
    Ok(w.into_inner()?)
}

#[derive(Serialize)]
struct Summary<'a> {
    schema: &'static str,
    iterations_schema: &'static str,
    spec: &'a RunSpec,
    report: &'a RunReport,
}

/// The run report without its per-iteration records, which live in the CSV.
pub fn summary_json(spec: &RunSpec, report: &RunReport) -> Result<Vec<u8>> {
    let mut slim = report.clone();
    slim.records.clear();
    to_json(&Summary {
        schema: SUMMARY_SCHEMA,
        iterations_schema: ITERATIONS_SCHEMA,
        spec,
        report: &slim,
    })
}

pub fn tails_csv(est: &TailEstimate) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "t",
        "empirical_freq",
        "wilson_upper",
        "bound",
        "informative_flag",
        "wilson_lower",
        "exceed",
        "upper_norm_freq",
    ])?;
    for r in &est.rows {
        w.write_record([
            num(r.t),
            num(r.empirical_freq),
            num(r.wilson_upper),
            num(r.bound),
            r.informative.to_string(),
            num(r.wilson_lower),
            r.exceed.to_string(),
            opt(r.exceed_upper.map(|c| c as f64 / est.trials.max(1) as f64)),
        ])?;
    }
    Ok(w.into_inner()?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_round_trip() {
        for v in [0.1, 1e-300, 12345.678, -0.0] {
            assert_eq!(num(v).parse::<f64>().unwrap().to_bits(), v.to_bits());
        }
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a/b.txt");
        atomic_write(&p, b"one").unwrap();
        atomic_write(&p, b"two").unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), b"two");
        assert_eq!(std::fs::read_dir(p.parent().unwrap()).unwrap().count(), 1);
    }
}
