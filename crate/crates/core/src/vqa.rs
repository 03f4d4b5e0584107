//! The variational loop that squeezes random product states onto an energy
//! window: BFGS on `⟨(H − λ)²⟩` with a halving gradient tolerance, stopping
//! as soon as `Var(H) ≤ δ²`, and adding an identity layer whenever the
//! tolerance schedule is exhausted.

use std::fmt;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::circuit::{AnsatzParams, CostFunction, CostValues, ProductStateSeed};
use crate::error::{Error, Result};
use crate::model::{PauliTerm, RealOperator};
use crate::optimize::{Bfgs, BfgsStatus, Objective};

/// `ΔE/N` used when the spectrum is not available.
pub const APPROX_BANDWIDTH_PER_SITE: f64 = 3.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandwidthMode {
    /// `ΔE` from exact diagonalization.
    Exact,
    /// `ΔE = 3N`.
    Approximate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VmeConfig {
    /// `λ/N`
    pub target_energy_density: f64,
    /// `α` in `δ = (ΔE/N) N^α`
    pub window_exponent: f64,
    pub bandwidth_mode: BandwidthMode,
    pub grad_tol_start: f64,
    pub grad_tol_floor: f64,
    pub grad_tol_shrink: f64,
    pub max_layers: usize,
    pub max_cost_evals: u64,
    /// BFGS iterations allowed per tolerance stage.
    pub max_iter_per_stage: usize,
}

impl Default for VmeConfig {
    fn default() -> Self {
        Self {
            target_energy_density: -0.5,
            window_exponent: -0.5,
            bandwidth_mode: BandwidthMode::Exact,
            grad_tol_start: 10.0,
            grad_tol_floor: 1e-3,
            grad_tol_shrink: 0.5,
            max_layers: 40,
            max_cost_evals: 200_000_000,
            max_iter_per_stage: 500,
        }
    }
}

impl VmeConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !self.target_energy_density.is_finite() {
            return bad("target energy density must be finite".into());
        }
        if !(self.window_exponent <= 0.0) {
            return bad(format!("window exponent must be <= 0, got {}", self.window_exponent));
        }
        if !(self.grad_tol_floor > 0.0 && self.grad_tol_floor < self.grad_tol_start) {
            return bad(format!(
                "need 0 < grad_tol_floor < grad_tol_start, got {} and {}",
                self.grad_tol_floor, self.grad_tol_start
            ));
        }
        if !(self.grad_tol_shrink > 0.0 && self.grad_tol_shrink < 1.0) {
            return bad(format!("grad_tol_shrink must lie in (0, 1), got {}", self.grad_tol_shrink));
        }
        if self.max_layers == 0 || self.max_iter_per_stage == 0 || self.max_cost_evals == 0 {
            return bad("max_layers, max_iter_per_stage and max_cost_evals must be positive".into());
        }
        Ok(())
    }

    /// Gradient tolerances of one layer: start, start·shrink, … while ≥ floor.
    pub fn tolerance_schedule(&self) -> Vec<f64> {
        let mut out = Vec::new();
        let mut eps = self.grad_tol_start;
        while eps >= self.grad_tol_floor {
            out.push(eps);
            eps *= self.grad_tol_shrink;
        }
        out
    }
}

/// `δ = (ΔE/N) N^α`, with `ΔE` the exact bandwidth or `3N`.
pub fn window_width(n_sites: usize, bandwidth: Option<f64>, mode: BandwidthMode, exponent: f64) -> Result<f64> {
    let n = n_sites as f64;
    let per_site = match mode {
        BandwidthMode::Exact => {
            bandwidth.ok_or_else(|| {
                Error::InvalidArgument("exact bandwidth mode needs the spectrum bandwidth".into())
            })? / n
        }
        BandwidthMode::Approximate => APPROX_BANDWIDTH_PER_SITE,
    };
    Ok(per_site * n.powf(exponent))
}

/// Everything a run needs besides its seed: the compiled Hamiltonian, the
/// target energy `λ` and the window `δ`.
#[derive(Clone, Debug)]
pub struct VmeProblem {
    pub n_sites: usize,
    pub hamiltonian: RealOperator,
    pub target: f64,
    pub window: f64,
}

impl VmeProblem {
    /// `energy_range` is `(E_min, E_max)` when the spectrum is known; it is
    /// required in exact bandwidth mode.
    pub fn new(
        terms: &[PauliTerm],
        n_sites: usize,
        config: &VmeConfig,
        energy_range: Option<(f64, f64)>,
    ) -> Result<Self> {
        config.validate()?;
        let hamiltonian = RealOperator::new(terms, n_sites)?;
        let target = config.target_energy_density * n_sites as f64;
        let window = window_width(
            n_sites,
            energy_range.map(|(lo, hi)| hi - lo),
            config.bandwidth_mode,
            config.window_exponent,
        )?;
        let (lo, hi) = energy_range.unwrap_or((
            -0.5 * APPROX_BANDWIDTH_PER_SITE * n_sites as f64,
            0.5 * APPROX_BANDWIDTH_PER_SITE * n_sites as f64,
        ));
        if !(target > lo && target < hi) {
            return Err(Error::InvalidArgument(format!(
                "target energy {target} lies outside the spectrum ({lo}, {hi})"
            )));
        }
        Ok(Self {
            n_sites,
            hamiltonian,
            target,
            window,
        })
    }
}

/// One BFGS stage at a fixed depth and gradient tolerance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageLog {
    pub layers: usize,
    pub grad_tol: f64,
    pub status: BfgsStatus,
    pub iterations: usize,
    pub cost_evals: u64,
    pub cost: f64,
    pub variance: f64,
    pub grad_inf: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariationalRun {
    pub run_index: u64,
    pub seed: ProductStateSeed,
    pub params: AnsatzParams,
    pub layers: usize,
    pub cost: f64,
    pub variance: f64,
    pub energy: f64,
    pub target: f64,
    pub window: f64,
    /// Total number of cost-function evaluations, including the two per
    /// component spent on every parameter-shift gradient.
    pub cost_evals: u64,
    pub log: Vec<StageLog>,
    pub wall_time_s: f64,
}

/// A run that hit its layer or evaluation cap, with everything recorded up
/// to that point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NonConvergence {
    pub run_index: u64,
    pub reason: String,
    pub layers: usize,
    pub cost_evals: u64,
    pub variance: f64,
    pub window: f64,
    pub log: Vec<StageLog>,
}

impl fmt::Display for NonConvergence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "run {} did not converge ({}): p = {}, {} cost evaluations, Var(H) = {:.6e} > δ² = {:.6e}",
            self.run_index,
            self.reason,
            self.layers,
            self.cost_evals,
            self.variance,
            self.window * self.window
        )
    }
}

struct Counted<'a> {
    f: &'a CostFunction,
    evals: u64,
}

impl Objective for Counted<'_> {
    fn value(&mut self, x: &[f64]) -> f64 {
        self.evals += 1;
        self.f.cost(x)
    }

    fn gradient(&mut self, x: &[f64]) -> Vec<f64> {
        self.evals += 2 * x.len() as u64;
        self.f.gradient(x)
    }
}

/// Runs the adaptive-depth loop for seed `(master_seed, run_index)`.
pub fn vme_run(problem: &VmeProblem, config: &VmeConfig, master_seed: u64, run_index: u64) -> Result<VariationalRun> {
    config.validate()?;
    let clock = Instant::now();
    let n = problem.n_sites;
    let seed = ProductStateSeed::draw(n, master_seed, run_index);
    let f = CostFunction::new(seed.state(), problem.hamiltonian.clone(), problem.target)?;
    let mut obj = Counted { f: &f, evals: 0 };
    let threshold = problem.window * problem.window;
    let schedule = config.tolerance_schedule();
    let mut log = Vec::new();
    let mut layers = 1;
    let mut bfgs = Bfgs::new(&mut obj, vec![0.0; 2 * n]);
    loop {
        let mut last = None;
        for &eps in &schedule {
            let before = obj.evals;
            let report = bfgs.run(&mut obj, eps, config.max_iter_per_stage);
            let cv: CostValues = f.evaluate(bfgs.x());
            obj.evals += 1;
            log.push(StageLog {
                layers,
                grad_tol: eps,
                status: report.status,
                iterations: report.iterations,
                cost_evals: obj.evals - before,
                cost: cv.cost,
                variance: cv.variance,
                grad_inf: report.grad_inf,
            });
            log::debug!(
                "run {run_index}: p={layers} eps={eps:.3e} {:?} it={} C={:.6e} Var={:.6e} (δ²={threshold:.6e})",
                report.status,
                report.iterations,
                cv.cost,
                cv.variance
            );
            if cv.variance <= threshold {
                return Ok(VariationalRun {
                    run_index,
                    seed,
                    params: AnsatzParams::from_angles(n, bfgs.x().to_vec())?,
                    layers,
                    cost: cv.cost,
                    variance: cv.variance,
                    energy: cv.energy,
                    target: problem.target,
                    window: problem.window,
                    cost_evals: obj.evals,
                    log,
                    wall_time_s: clock.elapsed().as_secs_f64(),
                });
            }
            last = Some(cv);
            if obj.evals > config.max_cost_evals {
                return Err(non_convergence(run_index, "cost evaluation cap reached", layers, obj.evals, cv, problem, log));
            }
        }
        let cv = last.expect("tolerance schedule is never empty");
        if layers >= config.max_layers {
            return Err(non_convergence(run_index, "layer cap reached", layers, obj.evals, cv, problem, log));
        }
        layers += 1;
        let mut x = bfgs.x().to_vec();
        x.extend(std::iter::repeat_n(0.0, 2 * n));
        // the new layer is the identity, so only the gradient changes size
        let value = bfgs.value();
        let grad = obj.gradient(&x);
        bfgs = Bfgs::with_values(x, value, grad);
    }
}

fn non_convergence(
    run_index: u64,
    reason: &str,
    layers: usize,
    cost_evals: u64,
    cv: CostValues,
    problem: &VmeProblem,
    log: Vec<StageLog>,
) -> Error {
    Error::NonConvergence(Box::new(NonConvergence {
        run_index,
        reason: reason.to_string(),
        layers,
        cost_evals,
        variance: cv.variance,
        window: problem.window,
        log,
    }))
}

#[derive(Clone, Debug, Default)]
pub struct EnsembleOutcome {
    /// Converged runs ordered by run index.
    pub runs: Vec<VariationalRun>,
    pub failures: Vec<NonConvergence>,
}

impl EnsembleOutcome {
    /// The runs, or the first failure when completeness is required.
    pub fn into_complete(self) -> Result<Vec<VariationalRun>> {
        match self.failures.into_iter().next() {
            Some(f) => Err(Error::NonConvergence(Box::new(f))),
            None => Ok(self.runs),
        }
    }
}

/// Runs `r = first, …, first + count − 1` in parallel. Failures are
/// collected rather than aborting the ensemble; other errors are returned.
pub fn generate_ensemble_range(
    problem: &VmeProblem,
    config: &VmeConfig,
    master_seed: u64,
    first: u64,
    count: u64,
) -> Result<EnsembleOutcome> {
    let results: Vec<Result<VariationalRun>> = (first..first + count)
        .into_par_iter()
        .map(|r| vme_run(problem, config, master_seed, r))
        .collect();
    let mut out = EnsembleOutcome::default();
    for res in results {
        match res {
            Ok(run) => out.runs.push(run),
            Err(Error::NonConvergence(f)) => out.failures.push(*f),
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// Runs `r = 0, …, count − 1`.
pub fn generate_ensemble(problem: &VmeProblem, config: &VmeConfig, master_seed: u64, count: u64) -> Result<EnsembleOutcome> {
    if count == 0 {
        return Err(Error::InvalidArgument("ensemble size R must be >= 1".into()));
    }
    generate_ensemble_range(problem, config, master_seed, 0, count)
}
