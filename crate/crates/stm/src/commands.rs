//! Subcommand bodies. Each returns the process exit code; errors map to 1.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Result};
use serde::Serialize;
use stm_core::concentration::Normalization;
use stm_core::driver::{run, Termination};
use stm_core::sampling::{plan_with_replacement, plan_without_replacement, Kappas, Spreads};
use stm_core::Scheme;

use crate::checks::{run_check, tol_scale, CheckOutcome, CHECK_NAMES};
use crate::lab::{self, Scenario, ScenarioResult};
use crate::output::{atomic_write, iterations_csv, summary_json, tails_csv, to_json, TAILS_SCHEMA};
use crate::spec::{Overrides, RunSpec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_MAX_ITERS: i32 = 2;
pub const EXIT_FAILED: i32 = 3;

pub fn cmd_run(config: &Path, overrides: &Overrides, out: &mut impl Write) -> Result<i32> {
    let mut spec = RunSpec::load(config)?;
    spec.apply(overrides);
    spec.validate()?;
    let problem = spec.problem.build()?;
    let report = run(problem.as_ref(), &spec.config)?;
    atomic_write(&spec.output.iterations_path(), &iterations_csv(&report.records)?)?;
    atomic_write(&spec.output.summary_path(), &summary_json(&spec, &report)?)?;
    writeln!(
        out,
        "{}: {:?} after {} iterations, f = {:e}, chi = {:?}",
        report.problem,
        report.termination,
        report.iterations,
        report.f_final,
        report.chi_final.values()
    )?;
    Ok(match report.termination {
        Termination::MaxIters => EXIT_MAX_ITERS,
        _ => EXIT_OK,
    })
}

#[derive(Debug, Clone)]
pub struct SampleSizeArgs {
    pub eps: f64,
    pub delta: f64,
    pub kappas: Kappas,
    pub spreads: Spreads,
    pub dim: usize,
    pub population: Option<usize>,
    pub scheme: Scheme,
}

pub fn cmd_sample_size(a: &SampleSizeArgs, out: &mut impl Write) -> Result<i32> {
    let plan = match a.scheme {
        Scheme::WithoutReplacement => {
            let Some(n) = a.population else {
                bail!("sampling without replacement needs --population");
            };
            plan_without_replacement(a.eps, a.delta, a.kappas, a.spreads, a.dim, n)?
        }
        Scheme::WithReplacement => {
            let p = plan_with_replacement(a.eps, a.delta, a.kappas, a.spreads, a.dim)?;
            match a.population {
                Some(n) => p.clamp_to(n),
                None => p,
            }
        }
    };
    out.write_all(&to_json(&plan)?)?;
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct TailsSummary<'a> {
    schema: &'static str,
    result: &'a ScenarioResult,
    /// The same draws normalized by `n`, written next to the main table.
    mean_normalized: Option<&'a ScenarioResult>,
}

pub fn cmd_concentration(sc: &Scenario, dir: &Path, companion: bool, out: &mut impl Write) -> Result<i32> {
    let pool = lab::pool()?;
    let pop = lab::population(sc)?;
    let main = lab::run_population(sc, &pop, &pool)?;
    atomic_write(&dir.join("tails.csv"), &tails_csv(&main.estimate)?)?;
    let other = if companion && sc.normalization == Normalization::Sum {
        let mut alt = sc.clone();
        alt.normalization = Normalization::Mean;
        let r = lab::run_population(&alt, &pop, &pool)?;
        atomic_write(&dir.join("tails_mean.csv"), &tails_csv(&r.estimate)?)?;
        Some(r)
    } else {
        None
    };
    atomic_write(
        &dir.join("tails.json"),
        &to_json(&TailsSummary {
            schema: TAILS_SCHEMA,
            result: &main,
            mean_normalized: other.as_ref(),
        })?,
    )?;
    writeln!(
        out,
        "sigma {:.4}, crossover {:?}, {} informative rows, sound: {}",
        main.sigma,
        main.crossover,
        main.estimate.informative_rows(),
        main.sound
    )?;
    Ok(if main.sound { EXIT_OK } else { EXIT_FAILED })
}

#[derive(Serialize)]
struct CheckReport {
    seed: u64,
    tolerance_scale: f64,
    passed: bool,
    checks: Vec<CheckOutcome>,
}

pub fn cmd_check(names: &[String], seed: u64, out: &mut impl Write) -> Result<i32> {
    let selected: Vec<&str> = if names.is_empty() {
        CHECK_NAMES.to_vec()
    } else {
        for n in names {
            if !CHECK_NAMES.contains(&n.as_str()) {
                bail!("unknown check {n:?}; known checks: {}", CHECK_NAMES.join(", "));
            }
        }
        names.iter().map(String::as_str).collect()
    };
    let scale = tol_scale()?;
    let checks = selected
        .iter()
        .map(|n| run_check(n, seed, scale))
        .collect::<Result<Vec<_>>>()?;
    let passed = checks.iter().all(|c| c.passed);
    out.write_all(&to_json(&CheckReport {
        seed,
        tolerance_scale: scale,
        passed,
        checks,
    })?)?;
    Ok(if passed { EXIT_OK } else { EXIT_FAILED })
}

pub fn default_out() -> PathBuf {
    PathBuf::from("stm-out")
}
