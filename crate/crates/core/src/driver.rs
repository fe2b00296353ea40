//! The adaptive outer loop.
//!
//! Each iteration samples `g_k, B_k, T_k`, approximately minimizes the
//! quartic model, and accepts or rejects the step by the ratio of actual to
//! predicted decrease. The regularization weight shrinks after very successful
//! iterations and grows after unsuccessful ones.
//!
//! In verification mode the loop also evaluates exact derivatives to decide
//! termination and to audit the step-length and counting inequalities of the
//! complexity analysis at every iteration.

use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::criticality::{self, CriticalityTriple};
use crate::error::{Error, Result};
use crate::linalg::{add, norm};
use crate::model::QuarticModel;
use crate::problems::{DerivativeBundle, FiniteSum, Order};
use crate::rng;
use crate::sampling::{
    check_condition1, estimate_derivatives, plan_with_replacement, plan_without_replacement, Condition1Check, Kappas,
    SamplePlan, Scheme, Spreads,
};
use crate::subsolver::{self, SubsolveStatus, SubsolverOptions};
use crate::tensor::PowerOptions;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Terminate on exact criticality and audit every iteration.
    Verify,
    /// Terminate on sampled criticality (a heuristic stopping rule).
    Production,
}

/// How `σ_{k+1}` is picked inside its admissible interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaRule {
    /// `max(σ_min, γ1 σ)`, `σ`, `γ2 σ`.
    Endpoint,
    /// Seeded uniform draw from the whole interval.
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StmConfig {
    pub gamma1: f64,
    pub gamma2: f64,
    pub gamma3: f64,
    pub eta1: f64,
    pub eta2: f64,
    pub sigma0: f64,
    pub sigma_min: f64,
    pub theta: f64,
    /// Curvature tolerance of the third-order measure of `f`; defaults to
    /// `eps[1]`.
    pub zeta: Option<f64>,
    /// Curvature tolerance of the model's third-order measure; defaults to
    /// `θ^2|s|^2`.
    pub model_zeta: Option<f64>,
    pub eps: [f64; 3],
    pub max_iters: usize,
    pub seed: u64,
    pub scheme: Scheme,
    /// Use every component for every derivative, ignoring the sample plan.
    pub full_batch: bool,
    pub delta: f64,
    /// Accuracy handed to the sample-size formulas; defaults to
    /// `min(ε1, ε2^{3/2}, ε3^3)`.
    pub sampling_eps: Option<f64>,
    pub kappas: Kappas,
    pub mode: Mode,
    pub sigma_rule: SigmaRule,
    pub subsolver_budget: usize,
    pub restarts: usize,
    pub x0: Option<Vec<f64>>,
}

impl Default for StmConfig {
    fn default() -> Self {
        StmConfig {
            gamma1: 0.5,
            gamma2: 2.0,
            gamma3: 4.0,
            eta1: 0.1,
            eta2: 0.9,
            sigma0: 1.0,
            sigma_min: 1e-8,
            theta: 0.1,
            zeta: None,
            model_zeta: None,
            eps: [1e-3, 1e-2, 1e-1],
            max_iters: 500,
            seed: 0,
            scheme: Scheme::WithoutReplacement,
            full_batch: false,
            delta: 0.1,
            sampling_eps: None,
            kappas: Kappas::default(),
            mode: Mode::Verify,
            sigma_rule: SigmaRule::Endpoint,
            subsolver_budget: 500,
            restarts: 16,
            x0: None,
        }
    }
}

impl StmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma1 > 0.0 && self.gamma1 < 1.0) {
            return Err(Error::invalid("gamma1", "must lie in (0, 1)"));
        }
        if !(self.gamma2 > 1.0) {
            return Err(Error::invalid("gamma2", "must exceed 1"));
        }
        if !(self.gamma3 > self.gamma2) {
            return Err(Error::invalid("gamma3", "must exceed gamma2"));
        }
        if !(self.eta1 > 0.0 && self.eta1 < self.eta2 && self.eta2 < 1.0) {
            return Err(Error::invalid("eta1/eta2", "need 0 < eta1 < eta2 < 1"));
        }
        if !(self.sigma0 > 0.0 && self.sigma0.is_finite()) {
            return Err(Error::invalid("sigma0", "must be positive"));
        }
        if !(self.sigma_min > 0.0) {
            return Err(Error::invalid("sigma_min", "must be positive"));
        }
        if !(self.theta > 0.0) {
            return Err(Error::invalid("theta", "must be positive"));
        }
        if self.zeta.is_some_and(|z| !(z >= 0.0)) {
            return Err(Error::invalid("zeta", "must be non-negative"));
        }
        if self.model_zeta.is_some_and(|z| !(z >= 0.0)) {
            return Err(Error::invalid("model_zeta", "must be non-negative"));
        }
        if !self.eps.iter().all(|&e| e > 0.0 && e.is_finite()) {
            return Err(Error::invalid("eps", "tolerances must be positive"));
        }
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return Err(Error::invalid("delta", "must lie in (0, 1]"));
        }
        if let Some(e) = self.sampling_eps {
            if !(e > 0.0 && e <= 1.0) {
                return Err(Error::invalid("sampling_eps", "must lie in (0, 1]"));
            }
        }
        if self.subsolver_budget == 0 {
            return Err(Error::invalid("subsolver_budget", "must be at least 1"));
        }
        if self.restarts == 0 {
            return Err(Error::invalid("restarts", "must be at least 1"));
        }
        Ok(())
    }

    pub fn zeta(&self) -> f64 {
        self.zeta.unwrap_or(self.eps[1])
    }

    /// `min(ε1, ε2^{3/2}, ε3^3)`, the accuracy at which the sampling
    /// condition implies all three orders.
    pub fn condition_eps(&self) -> f64 {
        let [e1, e2, e3] = self.eps;
        e1.min(e2.powf(1.5)).min(e3 * e3 * e3)
    }

    pub fn sampling_eps(&self) -> f64 {
        self.sampling_eps.unwrap_or_else(|| self.condition_eps().min(1.0))
    }

    fn power(&self) -> PowerOptions {
        PowerOptions::with_restarts(self.restarts)
    }

    /// The sample plan this configuration uses on `problem`.
    pub fn plan_for(&self, problem: &dyn FiniteSum) -> Result<SamplePlan> {
        let n = problem.len();
        if self.full_batch {
            return Ok(SamplePlan::full_batch(n, problem.dim()));
        }
        let spreads = Spreads::from_lipschitz(&problem.lipschitz());
        let eps = self.sampling_eps();
        let d = problem.dim();
        Ok(match self.scheme {
            Scheme::WithoutReplacement => plan_without_replacement(eps, self.delta, self.kappas, spreads, d, n)?,
            Scheme::WithReplacement => plan_with_replacement(eps, self.delta, self.kappas, spreads, d)?.clamp_to(n),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepClass {
    VerySuccessful,
    Successful,
    Unsuccessful,
}

impl StepClass {
    pub fn from_rho(rho: f64, eta1: f64, eta2: f64) -> StepClass {
        if rho > eta2 {
            StepClass::VerySuccessful
        } else if rho >= eta1 {
            StepClass::Successful
        } else {
            StepClass::Unsuccessful
        }
    }

    pub fn accepted(self) -> bool {
        self != StepClass::Unsuccessful
    }
}

/// Outcome of one audited inequality; `None` where its preconditions did not
/// hold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LemmaChecks {
    pub model_decrease: Option<bool>,
    pub step_first: Option<bool>,
    pub step_second: Option<bool>,
    pub step_third: Option<bool>,
    pub counting: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub k: usize,
    pub sigma: f64,
    pub f: f64,
    pub f_trial: Option<f64>,
    pub step_norm: f64,
    pub rho: Option<f64>,
    pub class: StepClass,
    /// Exact criticality at `x_k` (verification mode).
    pub chi_exact: Option<[f64; 3]>,
    /// Criticality of the sampled derivatives at `x_k`.
    pub chi_sampled: [f64; 3],
    /// Exact criticality at `x_k + s_k` (verification mode, converged subsolve).
    pub chi_trial: Option<[f64; 3]>,
    /// `φ(0) - φ(s)`.
    pub model_decrease: f64,
    pub sample_sizes: [usize; 3],
    pub subsolver_status: SubsolveStatus,
    pub subsolver_evals: usize,
    pub condition1: Option<Condition1Check>,
    pub checks: LemmaChecks,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// Exact criticality tolerances met.
    Converged,
    /// Sampled criticality tolerances met (production mode).
    ConvergedHeuristic,
    /// The model had no decrease at `s = 0`.
    ModelCritical,
    MaxIters,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tally {
    pub checked: usize,
    pub violated: usize,
}

impl Tally {
    fn add(&mut self, outcome: Option<bool>) {
        if let Some(ok) = outcome {
            self.checked += 1;
            if !ok {
                self.violated += 1;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LemmaTallies {
    pub model_decrease: Tally,
    pub step_first: Tally,
    pub step_second: Tally,
    pub step_third: Tally,
    pub counting: Tally,
    pub condition1: Tally,
}

/// Complexity-bound constants evaluated at some `σ_max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationBudget {
    pub sigma_max: f64,
    pub kappa_s: f64,
    pub kappa_s2: f64,
    pub kappa_s3: f64,
    pub kappa_max: f64,
    /// `max(ε1^{-4/3}, ε2^{-2}, ε3^{-4})`.
    pub eps_factor: f64,
    pub k_succ: f64,
    /// `C(γ1, γ2, σ_max, σ0)` with `|S| = K_succ`.
    pub c_value: f64,
    pub k_total: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BudgetConstants {
    pub l_t: f64,
    pub theta: f64,
    pub eta1: f64,
    pub sigma_min: f64,
    pub sigma0: f64,
    pub gamma1: f64,
    pub gamma2: f64,
}

/// `ξ = ε κ_g + ε^{2/3} κ_b / 2 + (ε^{1/3} κ_t + L_t) / 6`.
pub fn xi(eps: f64, kappas: &Kappas, l_t: f64) -> f64 {
    eps * kappas.g + eps.powf(2.0 / 3.0) * kappas.b / 2.0 + (eps.cbrt() * kappas.t + l_t) / 6.0
}

/// `γ3 max(4ξ/(1-η2), ξ(4L_t + 2 + 8θ)/((1-η2)ε - 8ξ))`, or `None` when the
/// second denominator is not positive and the bound is vacuous.
pub fn sigma_max_formula(eps: f64, kappas: &Kappas, l_t: f64, theta: f64, eta2: f64, gamma3: f64) -> Option<f64> {
    let x = xi(eps, kappas, l_t);
    let denom = (1.0 - eta2) * eps - 8.0 * x;
    if !(eta2 < 1.0) || !(denom > 0.0) {
        return None;
    }
    let a = 4.0 * x / (1.0 - eta2);
    let b = x * (4.0 * l_t + 2.0 + 8.0 * theta) / denom;
    let v = gamma3 * a.max(b);
    v.is_finite().then_some(v)
}

pub fn iteration_budget(eps: [f64; 3], f0: f64, f_low: f64, sigma_max: f64, c: &BudgetConstants) -> IterationBudget {
    let kappa_s = sigma_max + c.l_t / 2.0 + c.theta + 0.25;
    let kappa_s2 = 3.0 * sigma_max + c.l_t / 2.0 + c.theta + 0.25;
    let kappa_s3 = c.l_t + sigma_max / 2.0 + c.theta;
    let kappa_max = (2.0f64.cbrt() * kappa_s.powf(4.0 / 3.0))
        .max(2.0 * kappa_s2 * kappa_s2)
        .max(8.0 * kappa_s3);
    let eps_factor = eps[0].powf(-4.0 / 3.0).max(eps[1].powi(-2)).max(eps[2].powi(-4));
    let gap = (f0 - f_low).max(0.0);
    let k_succ = (8.0 * kappa_max * gap / (c.eta1 * c.sigma_min) * eps_factor).ceil();
    let c_value =
        (1.0 + c.gamma1.ln().abs() / c.gamma2.ln()) * k_succ + (sigma_max / c.sigma0).ln() / c.gamma2.ln();
    IterationBudget {
        sigma_max,
        kappa_s,
        kappa_s2,
        kappa_s3,
        kappa_max,
        eps_factor,
        k_succ,
        c_value,
        k_total: c_value.ceil().max(0.0),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetReport {
    pub condition_eps: f64,
    /// `None` when the closed-form `σ_max` is vacuous at this accuracy.
    pub sigma_max_formula: Option<f64>,
    pub formula: Option<IterationBudget>,
    /// The same constants with the largest `σ` actually observed.
    pub observed: IterationBudget,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub problem: String,
    pub termination: Termination,
    pub heuristic: bool,
    pub iterations: usize,
    pub successful: usize,
    pub very_successful: usize,
    pub unsuccessful: usize,
    pub x_final: Vec<f64>,
    pub f_initial: f64,
    pub f_final: f64,
    /// Exact in verification mode, sampled in production mode.
    pub chi_final: CriticalityTriple,
    pub sigma_observed_max: f64,
    pub plan: SamplePlan,
    pub budget: BudgetReport,
    pub tallies: LemmaTallies,
    pub records: Vec<IterationRecord>,
}

impl RunReport {
    pub fn converged(&self) -> bool {
        matches!(self.termination, Termination::Converged | Termination::ConvergedHeuristic)
    }
}

/// Relative slack for the audited inequalities.
const SLACK: f64 = 1e-9;

fn at_least(lhs: f64, rhs: f64) -> bool {
    lhs * (1.0 + SLACK) + 1e-300 >= rhs
}

struct Exact {
    bundle: DerivativeBundle,
    chi: CriticalityTriple,
}

fn exact_at(problem: &dyn FiniteSum, x: &[f64], zeta: f64, power: &PowerOptions, seed: u64) -> Result<Exact> {
    let bundle = problem.full(x, Order::Third)?;
    let chi = criticality::evaluate(&bundle.grad, bundle.hess(), bundle.third(), zeta, power, seed)?;
    Ok(Exact { bundle, chi })
}

pub fn run(problem: &dyn FiniteSum, config: &StmConfig) -> Result<RunReport> {
    config.validate()?;
    let d = problem.dim();
    let verify = config.mode == Mode::Verify;
    let zeta = config.zeta();
    let power = config.power();
    let eps_c = config.condition_eps();
    let plan = config.plan_for(problem)?;
    let lip = problem.lipschitz();
    let seed = config.seed;
    let crit_seed = |k: usize, tag: u64| rng::derive(seed, rng::stream::CRITICALITY, 4 * k as u64 + tag);

    let mut x = match &config.x0 {
        Some(x0) => {
            if x0.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: x0.len(),
                });
            }
            x0.clone()
        }
        None => alloc::vec![0.0; d],
    };
    let mut f = problem.value(&x)?;
    if !f.is_finite() {
        return Err(Error::NonFinite { iteration: 0 });
    }
    let f_initial = f;
    let mut sigma = config.sigma0;
    let mut sigma_seen = sigma;
    let mut exact = if verify {
        Some(exact_at(problem, &x, zeta, &power, crit_seed(0, 0))?)
    } else {
        None
    };

    let sub_opts = SubsolverOptions {
        budget: config.subsolver_budget,
        verify: power,
        ..SubsolverOptions::new(config.theta, config.model_zeta)
    };
    let ln_g2 = config.gamma2.ln();
    let count_coef = 1.0 + config.gamma1.ln().abs() / ln_g2;

    let mut records = Vec::new();
    let mut tallies = LemmaTallies::default();
    let (mut n_succ, mut n_very, mut n_unsucc) = (0usize, 0usize, 0usize);
    let mut last_sampled: Option<CriticalityTriple> = None;

    let termination = loop {
        let k = records.len();
        if let Some(ex) = &exact {
            if ex.chi.within(&config.eps) {
                break Termination::Converged;
            }
        }
        if k >= config.max_iters {
            break Termination::MaxIters;
        }

        let bundle = estimate_derivatives(problem, &x, &plan, rng::derive(seed, rng::stream::GRADIENT_SAMPLE, k as u64))?;
        let sampled = criticality::evaluate(&bundle.grad, bundle.hess(), bundle.third(), zeta, &power, crit_seed(k, 1))?;
        let chi_sampled = sampled.values();
        if !verify && sampled.within(&config.eps) {
            last_sampled = Some(sampled);
            break Termination::ConvergedHeuristic;
        }
        last_sampled = Some(sampled);

        let condition1 = match &exact {
            Some(ex) => Some(check_condition1(&bundle, &ex.bundle, eps_c, &config.kappas, &power, crit_seed(k, 2))?),
            None => None,
        };
        tallies.condition1.add(condition1.map(|c| c.holds()));

        let model = QuarticModel::from_bundle(f, &bundle, sigma)?;
        let sub = subsolver::solve(&model, &sub_opts, rng::derive(seed, rng::stream::SUBSOLVER, k as u64))?;
        let s = &sub.s;
        let r = norm(s);
        let model_decrease = model.phi_decrease(s);

        let mut checks = LemmaChecks {
            model_decrease: None,
            step_first: None,
            step_second: None,
            step_third: None,
            counting: true,
        };
        let mut rho = None;
        let mut f_trial = None;
        let mut chi_trial = None;
        let mut trial_exact = None;
        let class = match sub.status {
            SubsolveStatus::StalledAtZero => {
                records.push(IterationRecord {
                    k,
                    sigma,
                    f,
                    f_trial: None,
                    step_norm: 0.0,
                    rho: None,
                    class: StepClass::Unsuccessful,
                    chi_exact: exact.as_ref().map(|e| e.chi.values()),
                    chi_sampled,
                    chi_trial: None,
                    model_decrease,
                    sample_sizes: plan.sizes(),
                    subsolver_status: sub.status,
                    subsolver_evals: sub.iterations,
                    condition1,
                    checks,
                });
                n_unsucc += 1;
                break Termination::ModelCritical;
            }
            SubsolveStatus::MaxIter => StepClass::Unsuccessful,
            SubsolveStatus::Converged => {
                let xt = add(&x, s);
                let ft = problem.value(&xt)?;
                if !ft.is_finite() {
                    return Err(Error::NonFinite { iteration: k });
                }
                f_trial = Some(ft);
                let denom = f - model.eval_phi(s)?;
                let class = if denom <= 1e-14 * f.abs().max(1.0) {
                    StepClass::Unsuccessful
                } else {
                    let q = (f - ft) / denom;
                    rho = Some(q);
                    StepClass::from_rho(q, config.eta1, config.eta2)
                };

                if verify {
                    let te = exact_at(problem, &xt, zeta, &power, crit_seed(k + 1, 0))?;
                    let [c1, c2, c3] = te.chi.values();
                    chi_trial = Some([c1, c2, c3]);
                    if condition1.is_some_and(|c| c.holds()) {
                        let lt = lip.t;
                        let th = config.theta;
                        let k1 = sigma + lt / 2.0 + th + 0.25;
                        let k2 = 3.0 * sigma + lt / 2.0 + th + 0.25;
                        let k3 = lt + sigma / 2.0 + th;
                        let [e1, e2, e3] = config.eps;
                        let guarded = |rhs: f64, lhs: f64| (rhs > 0.0).then(|| at_least(lhs, rhs));
                        checks.step_first = guarded((c1 - 0.5 * e1) / k1, r * r * r);
                        checks.step_second = guarded((c2 - 0.5 * e2) / k2, r * r);
                        checks.step_third = guarded((c3 - 0.5 * e3) / k3, r);
                    }
                    trial_exact = Some(te);
                }
                class
            }
        };

        if class.accepted() {
            checks.model_decrease = Some(model_decrease > model.quartic(s));
        }

        let next_sigma = next_sigma(config, class, sigma, k);
        match class {
            StepClass::VerySuccessful => {
                n_succ += 1;
                n_very += 1;
            }
            StepClass::Successful => n_succ += 1,
            StepClass::Unsuccessful => n_unsucc += 1,
        }
        let chi_exact = exact.as_ref().map(|e| e.chi.values());
        if class.accepted() {
            x = add(&x, s);
            f = f_trial.expect("accepted steps have a trial value");
            if verify {
                exact = trial_exact;
            }
        }
        sigma = next_sigma;
        sigma_seen = sigma_seen.max(sigma);

        let done = (n_succ + n_unsucc) as f64;
        let allowed = count_coef * n_succ as f64 + (sigma_seen / config.sigma0).ln() / ln_g2;
        checks.counting = done <= allowed * (1.0 + SLACK) + SLACK;

        tallies.model_decrease.add(checks.model_decrease);
        tallies.step_first.add(checks.step_first);
        tallies.step_second.add(checks.step_second);
        tallies.step_third.add(checks.step_third);
        tallies.counting.add(Some(checks.counting));

        records.push(IterationRecord {
            k,
            sigma: model.sigma,
            f: model.f0,
            f_trial,
            step_norm: r,
            rho,
            class,
            chi_exact,
            chi_sampled,
            chi_trial,
            model_decrease,
            sample_sizes: plan.sizes(),
            subsolver_status: sub.status,
            subsolver_evals: sub.iterations,
            condition1,
            checks,
        });
    };

    let chi_final = match (&exact, last_sampled) {
        (Some(ex), _) => ex.chi.clone(),
        (None, Some(s)) if termination == Termination::ConvergedHeuristic => s,
        _ => {
            let b = estimate_derivatives(problem, &x, &plan, rng::derive(seed, rng::stream::VERIFY, records.len() as u64))?;
            criticality::evaluate(&b.grad, b.hess(), b.third(), zeta, &power, crit_seed(records.len(), 3))?
        }
    };

    let consts = BudgetConstants {
        l_t: lip.t,
        theta: config.theta,
        eta1: config.eta1,
        sigma_min: config.sigma_min,
        sigma0: config.sigma0,
        gamma1: config.gamma1,
        gamma2: config.gamma2,
    };
    let smax = sigma_max_formula(eps_c, &config.kappas, lip.t, config.theta, config.eta2, config.gamma3);
    let f_low = problem.f_low();
    let budget = BudgetReport {
        condition_eps: eps_c,
        sigma_max_formula: smax,
        formula: smax.map(|s| iteration_budget(config.eps, f_initial, f_low, s, &consts)),
        observed: iteration_budget(config.eps, f_initial, f_low, sigma_seen, &consts),
    };

    Ok(RunReport {
        problem: problem.name().into(),
        termination,
        heuristic: !verify,
        iterations: records.len(),
        successful: n_succ,
        very_successful: n_very,
        unsuccessful: n_unsucc,
        x_final: x,
        f_initial,
        f_final: f,
        chi_final,
        sigma_observed_max: sigma_seen,
        plan,
        budget,
        tallies,
        records,
    })
}

fn next_sigma(config: &StmConfig, class: StepClass, sigma: f64, k: usize) -> f64 {
    let (lo, hi) = match class {
        StepClass::VerySuccessful => (config.sigma_min.max(config.gamma1 * sigma), sigma),
        StepClass::Successful => (sigma, config.gamma2 * sigma),
        StepClass::Unsuccessful => (config.gamma2 * sigma, config.gamma3 * sigma),
    };
    match config.sigma_rule {
        SigmaRule::Endpoint => match class {
            StepClass::VerySuccessful => lo,
            StepClass::Successful => sigma,
            StepClass::Unsuccessful => lo,
        },
        SigmaRule::Uniform => {
            if hi <= lo {
                return lo;
            }
            let mut g = rng::rng(rng::derive(config.seed, rng::stream::SIGMA_DRAW, k as u64));
            g.random_range(lo..=hi)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn class_thresholds() {
        assert_eq!(StepClass::from_rho(0.95, 0.1, 0.9), StepClass::VerySuccessful);
        assert_eq!(StepClass::from_rho(0.9, 0.1, 0.9), StepClass::Successful);
        assert_eq!(StepClass::from_rho(0.1, 0.1, 0.9), StepClass::Successful);
        assert_eq!(StepClass::from_rho(0.0999, 0.1, 0.9), StepClass::Unsuccessful);
        assert_eq!(StepClass::from_rho(-3.0, 0.1, 0.9), StepClass::Unsuccessful);
    }

    #[test]
    fn endpoint_sigma_updates() {
        let c = StmConfig::default();
        assert_eq!(next_sigma(&c, StepClass::VerySuccessful, 1.0, 0), 0.5);
        assert_eq!(next_sigma(&c, StepClass::VerySuccessful, 1e-8, 0), 1e-8);
        assert_eq!(next_sigma(&c, StepClass::Successful, 3.0, 0), 3.0);
        assert_eq!(next_sigma(&c, StepClass::Unsuccessful, 3.0, 0), 6.0);
    }

    #[test]
    fn uniform_sigma_stays_in_interval() {
        let c = StmConfig {
            sigma_rule: SigmaRule::Uniform,
            ..StmConfig::default()
        };
        for k in 0..50 {
            let v = next_sigma(&c, StepClass::Unsuccessful, 1.0, k);
            assert!((2.0..=4.0).contains(&v));
            let v = next_sigma(&c, StepClass::VerySuccessful, 1.0, k);
            assert!((0.5..=1.0).contains(&v));
        }
    }

    #[test]
    fn config_ordering_enforced() {
        let ok = StmConfig::default();
        assert!(ok.validate().is_ok());
        for bad in [
            StmConfig { gamma1: 1.0, ..ok.clone() },
            StmConfig { gamma2: 1.0, ..ok.clone() },
            StmConfig { gamma3: 2.0, ..ok.clone() },
            StmConfig { eta1: 0.95, ..ok.clone() },
            StmConfig { eta2: 1.0, ..ok.clone() },
            StmConfig { sigma0: 0.0, ..ok.clone() },
            StmConfig { sigma_min: 0.0, ..ok.clone() },
            StmConfig { delta: 0.0, ..ok.clone() },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
    }

    #[test]
    fn sigma_max_vacuous_near_one() {
        let k = Kappas::default();
        assert_eq!(sigma_max_formula(0.1, &k, 0.0, 0.1, 1.0, 4.0), None);
        // 8ξ >= L_t·8/6 > (1-η2)ε whenever L_t is of order one
        assert_eq!(sigma_max_formula(0.1, &k, 1.0, 0.1, 0.9, 4.0), None);
    }

    #[test]
    fn xi_monotone_in_kappas() {
        let base = xi(0.2, &Kappas::default(), 0.3);
        for k in [
            Kappas { g: 0.3, ..Kappas::default() },
            Kappas { b: 0.3, ..Kappas::default() },
            Kappas { t: 0.6, ..Kappas::default() },
        ] {
            assert!(xi(0.2, &k, 0.3) > base);
        }
    }

    #[test]
    fn budget_scales_with_third_tolerance() {
        let c = BudgetConstants {
            l_t: 1.0,
            theta: 0.1,
            eta1: 0.1,
            sigma_min: 1e-8,
            sigma0: 1.0,
            gamma1: 0.5,
            gamma2: 2.0,
        };
        let a = iteration_budget([1.0, 1.0, 0.5], 1.0, 0.0, 10.0, &c);
        let b = iteration_budget([1.0, 1.0, 0.25], 1.0, 0.0, 10.0, &c);
        assert_eq!(b.eps_factor, 16.0 * a.eps_factor);
        let z = iteration_budget([1.0, 1.0, 0.5], 1.0, 1.0, 10.0, &c);
        assert_eq!(z.k_succ, 0.0);
    }
}
