//! Parallel driver for the concentration experiments.

use anyhow::{bail, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use stm_core::concentration::{
    default_grid, log_grid, trial_deviation, Normalization, NormMethod, Recipe, TailEstimate, TensorPopulation,
    TrialConfig, MIN_TRIALS,
};
use stm_core::Scheme;

/// Thread pool capped by `STM_THREADS` when it is set.
pub fn pool() -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var("STM_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| anyhow::anyhow!("STM_THREADS must be a positive integer, got {v:?}"))?;
        if n == 0 {
            bail!("STM_THREADS must be a positive integer, got 0");
        }
        b = b.num_threads(n);
    }
    Ok(b.build()?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub order: usize,
    pub dim: usize,
    pub population: usize,
    pub n: usize,
    pub scheme: Scheme,
    pub recipe: Recipe,
    pub normalization: Normalization,
    pub norm: NormMethod,
    pub trials: usize,
    pub probes: usize,
    pub grid_points: usize,
    /// Explicit grid range; defaults to a quarter to four times the
    /// crossover of the bound.
    pub t_range: Option<[f64; 2]>,
    pub seed: u64,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            order: 3,
            dim: 5,
            population: 2000,
            n: 200,
            scheme: Scheme::WithReplacement,
            recipe: Recipe::RankOne,
            normalization: Normalization::Sum,
            norm: NormMethod::default(),
            trials: 10_000,
            probes: 10_000,
            grid_points: 25,
            t_range: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioResult {
    pub scenario: Scenario,
    pub sigma: f64,
    pub sigma_probed: f64,
    pub sigma_analytic: f64,
    pub crossover: Option<f64>,
    pub estimate: TailEstimate,
    pub sound: bool,
}

pub fn run_population(sc: &Scenario, pop: &TensorPopulation, pool: &rayon::ThreadPool) -> Result<ScenarioResult> {
    if sc.trials < MIN_TRIALS {
        bail!("trials must be at least {MIN_TRIALS}, got {}", sc.trials);
    }
    let bound = pop.tail_bound(sc.n, sc.scheme)?;
    let grid = match sc.t_range {
        Some([lo, hi]) => log_grid(lo, hi, sc.grid_points)?,
        None => default_grid(&bound, pop.sigma, sc.grid_points)?,
    };
    let cfg = TrialConfig {
        n: sc.n,
        scheme: sc.scheme,
        normalization: sc.normalization,
        norm: sc.norm,
    };
    // collect keeps trial order, so the tabulation is thread-count independent
    let dev = pool.install(|| {
        (0..sc.trials as u64)
            .into_par_iter()
            .map(|i| trial_deviation(pop, &cfg, sc.seed, i))
            .collect::<stm_core::Result<Vec<_>>>()
    })?;
    let estimate = TailEstimate::tabulate(&dev, &grid, bound.clone(), sc.seed);
    Ok(ScenarioResult {
        scenario: sc.clone(),
        sigma: pop.sigma,
        sigma_probed: pop.sigma_probed,
        sigma_analytic: pop.sigma_analytic,
        crossover: bound.crossover(1e12),
        sound: estimate.sound(),
        estimate,
    })
}

pub fn population(sc: &Scenario) -> Result<TensorPopulation> {
    Ok(TensorPopulation::generate(sc.order, sc.dim, sc.population, sc.recipe, sc.probes, sc.seed)?)
}

pub fn run_scenario(sc: &Scenario, pool: &rayon::ThreadPool) -> Result<ScenarioResult> {
    run_population(sc, &population(sc)?, pool)
}
