//! Network-centric solver: maximizes total weighted throughput over total
//! consumed energy with the Dinkelbach method.
//!
//! For a ratio guess `q`, the subtractive problem `max wR - q * P_total`
//! over the feasible set is concave and solved through the shared dual
//! machinery; `q` is then updated to the efficiency of the maximizer until
//! the subtractive optimum `T(q)` vanishes, which certifies optimality.

use crate::error::{Error, Result};
use crate::lagrangian::{self, DualProblem, DualSolveConfig, DualWarm};
use crate::model::{self, Allocation, Channel, Scenario};
use crate::refine;
use crate::report::{Scheme, SolveReport};
use std::time::Instant;

#[derive(Debug, Clone)]
pub struct DinkelbachConfig {
    /// Stop once `|T(q)|` falls below this.
    pub tol_t: f64,
    pub max_q_iters: usize,
}

impl Default for DinkelbachConfig {
    fn default() -> Self {
        DinkelbachConfig {
            tol_t: 1e-6,
            max_q_iters: 50,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct NcConfig {
    pub dinkelbach: DinkelbachConfig,
    pub dual: DualSolveConfig,
}

/// One ratio update: the guess and the subtractive optimum there.
#[derive(Debug, Clone, Copy)]
pub struct QTrace {
    pub q: f64,
    pub t_value: f64,
}

/// Maximizes `sum_k w_k R_k - q * P_total` over the feasible set and
/// returns the optimum value and a maximizer.
pub fn t_of_q(
    scenario: &Scenario,
    channel: &Channel,
    q: f64,
    cfg: &NcConfig,
) -> Result<(f64, Allocation)> {
    if q < 0.0 {
        return Err(Error::Domain(format!("ratio parameter q = {q} < 0")));
    }
    channel.validate(scenario)?;
    let feas = model::check_feasibility(scenario, channel)?;
    if !feas.feasible {
        return Err(Error::Infeasible {
            slack: feas.max_min_slack,
        });
    }
    let mut warm = DualWarm {
        duals: None,
        tau: Some(feas.allocation.tau.clone()),
        s: Some(lagrangian::flatten(&feas.allocation.s)),
    };
    let sol = subtractive_solve(scenario, channel, q, cfg, &None, &mut warm)?;
    let guess = recover(
        scenario,
        channel,
        &sol.duals,
        q,
        &feas.allocation,
        lagrangian::RecoveryGoal::SubtractiveAt(q),
    );
    let prob = DualProblem::network_centric(scenario, channel, q, None);
    let alloc = refine::refine_subtractive(&prob, &guess, 1e-11)
        .or_else(|_| refine::refine_subtractive(&prob, &feas.allocation, 1e-11))?;
    Ok((subtractive_at(scenario, channel, &alloc, q)?, alloc))
}

/// `sum_k w_k R_k - q * P_total` at a concrete allocation.
fn subtractive_at(
    scenario: &Scenario,
    channel: &Channel,
    alloc: &Allocation,
    q: f64,
) -> Result<f64> {
    let m = model::metrics(alloc, channel, scenario)?;
    let weighted: f64 = (0..scenario.num_users)
        .map(|k| scenario.weights[k] * m.rate[k])
        .sum();
    Ok(weighted - q * model::total_energy(alloc, scenario))
}

/// One subtractive solve: returns the optimum estimate (the dual optimum
/// value) and the raw inner maximizer. The maximizer's per-user scales are
/// arbitrary near optimal multipliers (the Lagrangian is 1-homogeneous per
/// user), so callers recover scales before using it as an allocation.
fn subtractive_solve(
    scenario: &Scenario,
    channel: &Channel,
    q: f64,
    cfg: &NcConfig,
    fixed_tau: &Option<Vec<f64>>,
    warm: &mut DualWarm,
) -> Result<lagrangian::DualSolution> {
    let prob = DualProblem::network_centric(scenario, channel, q, fixed_tau.clone());
    let sol = lagrangian::solve_dual(&prob, &cfg.dual, warm)?;
    warm.duals = Some(prob.pack(&sol.duals));
    Ok(sol)
}

fn recover(
    scenario: &Scenario,
    channel: &Channel,
    duals: &lagrangian::DualState,
    q: f64,
    reserve: &Allocation,
    goal: lagrangian::RecoveryGoal,
) -> Allocation {
    let kk = scenario.num_users;
    lagrangian::recover_primal(
        scenario,
        channel,
        duals,
        &scenario.weights,
        &vec![q; kk],
        reserve,
        goal,
    )
}

/// Solves the network-efficiency problem to global optimality.
pub fn solve(scenario: &Scenario, channel: &Channel, cfg: &NcConfig) -> Result<SolveReport> {
    solve_with(scenario, channel, cfg, None, Scheme::NcOpt).map(|(rep, _)| rep)
}

/// `solve` returning the ratio-update trace as well.
pub fn solve_detailed(
    scenario: &Scenario,
    channel: &Channel,
    cfg: &NcConfig,
) -> Result<(SolveReport, Vec<QTrace>)> {
    solve_with(scenario, channel, cfg, None, Scheme::NcOpt)
}

pub(crate) fn solve_with(
    scenario: &Scenario,
    channel: &Channel,
    cfg: &NcConfig,
    fixed_tau: Option<Vec<f64>>,
    scheme: Scheme,
) -> Result<(SolveReport, Vec<QTrace>)> {
    let start = Instant::now();
    channel.validate(scenario)?;

    let feas = match &fixed_tau {
        Some(t) => model::feasibility_with_tau(scenario, channel, t)?,
        None => model::check_feasibility(scenario, channel)?,
    };
    if !feas.feasible {
        return Err(Error::Infeasible {
            slack: feas.max_min_slack,
        });
    }
    let reserve = feas.allocation.clone();

    // Starting ratio: the efficiency of the feasible reserve point, which
    // keeps the first subtractive optimum nonnegative.
    let mut q = model::network_ee(&reserve, channel, scenario)?;
    let mut warm = DualWarm {
        duals: None,
        tau: Some(reserve.tau.clone()),
        s: Some(lagrangian::flatten(&reserve.s)),
    };

    let mut inner_iters = 0usize;
    let mut trace = Vec::new();
    let mut final_alloc: Option<Allocation> = None;
    let mut t_residual = f64::INFINITY;
    let mut iters = 0usize;
    let mut tighten = 0u32;
    while iters < cfg.dinkelbach.max_q_iters {
        iters += 1;
        // The dual gap must undercut the target optimality residual.
        let mut local = cfg.clone();
        local.dual.tol = (1e-2 * t_residual.abs())
            .clamp(1e-8 * 10f64.powi(-(tighten as i32)), local.dual.tol);
        let sol = subtractive_solve(scenario, channel, q, &local, &fixed_tau, &mut warm)?;
        inner_iters += sol.ellipsoid_iters;
        let guess = match &fixed_tau {
            None => recover(
                scenario,
                channel,
                &sol.duals,
                q,
                &reserve,
                lagrangian::RecoveryGoal::SubtractiveAt(q),
            ),
            Some(_) => {
                lagrangian::polish_feasible(scenario, channel, &sol.tau, &sol.s, &reserve)
            }
        };
        // Polish the subtractive maximizer to near machine accuracy; its
        // value is the optimality residual and its efficiency the update.
        let prob = DualProblem::network_centric(scenario, channel, q, fixed_tau.clone());
        let polished = refine::refine_subtractive(&prob, &guess, 1e-11)
            .or_else(|_| refine::refine_subtractive(&prob, &reserve, 1e-11))?;
        let t = subtractive_at(scenario, channel, &polished, q)?;
        trace.push(QTrace { q, t_value: t });
        let eta = model::network_ee(&polished, channel, scenario)?;
        t_residual = t;
        let p_total = model::total_energy(&polished, scenario).max(1e-12);
        final_alloc = Some(polished);
        if t.abs() < cfg.dinkelbach.tol_t {
            break;
        }
        // Ratio updates: the recovered allocation's efficiency, or the
        // classical step q + T/P when the recovery lags behind the dual
        // estimate. Clamping keeps the trace nondecreasing; any overshoot
        // is bounded by the dual gap and caught by the residual test.
        let next_q = q.max(eta).max(q + t / p_total);
        if next_q <= q {
            tighten += 1;
            if tighten > 3 {
                return Err(Error::ConvergenceFailure(format!(
                    "ratio updates stagnated at q = {q} with T(q) = {t:.3e}"
                )));
            }
        } else {
            q = next_q;
        }
        if iters == cfg.dinkelbach.max_q_iters {
            return Err(Error::ConvergenceFailure(format!(
                "ratio iteration cap {} reached with T(q) = {t:.3e}",
                cfg.dinkelbach.max_q_iters
            )));
        }
    }

    let alloc = final_alloc.expect("at least one subtractive solve ran");
    let nc_ee = model::network_ee(&alloc, channel, scenario)?;
    let report = SolveReport {
        scheme,
        uc_ee: None,
        nc_ee: Some(nc_ee),
        per_user_ee: None,
        tau: alloc.tau.clone(),
        p: alloc.p.clone(),
        psi_norm: None,
        t_residual: Some(t_residual),
        outer_iters: None,
        q_iters: Some(iters),
        inner_iters,
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    Ok((report, trace))
}
