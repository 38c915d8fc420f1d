//! User-centric solver: maximizes the weighted sum of per-user
//! rate-over-power ratios.
//!
//! The sum of ratios is handled through a parameterized subtractive form
//! with one pair `(alpha_k, beta_k)` per user. For fixed parameters the
//! subtractive problem is concave and solved exactly through the
//! Lagrangian dual machinery; the outer loop drives the stationarity
//! residuals `psi` of the parameters to zero with a damped Newton method.
//! At the fixed point `alpha_k = 1 / T_k` and `beta_k = w_k R_k / T_k`
//! where `T_k` is the energy consumed on user `k`, so `beta` equals the
//! per-user weighted efficiencies.

use crate::error::{Error, Result};
use crate::lagrangian::{self, DualProblem, DualSolveConfig, DualWarm};
use crate::model::{self, Allocation, Channel, Scenario};
use crate::refine;
use crate::report::{Scheme, SolveReport};
use std::time::Instant;

/// Ratio parameters of the subtractive transform.
#[derive(Debug, Clone)]
pub struct RatioParams {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub iteration: usize,
}

/// Damped-Newton settings for the outer parameter iteration.
#[derive(Debug, Clone)]
pub struct NewtonConfig {
    /// Armijo constant in (0, 1).
    pub epsilon: f64,
    /// Backtracking factor in (0, 1).
    pub xi: f64,
    pub max_outer_iters: usize,
    /// Stop when the residual norm falls below this.
    pub tol_psi: f64,
    pub max_backtracks: usize,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        NewtonConfig {
            epsilon: 0.1,
            xi: 0.5,
            max_outer_iters: 60,
            tol_psi: 1e-6,
            max_backtracks: 50,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct UcConfig {
    pub newton: NewtonConfig,
    pub dual: DualSolveConfig,
}

/// Users consuming less than this are frozen out of the Newton system.
const CONSUMED_FLOOR: f64 = 1e-12;

/// Barrier gap for the inner evaluations of the ratio iteration. At the
/// fixed point every user block ties at zero, so the exact inner argmax is
/// a bang-bang frame split that flips between evaluations; this gap sets
/// the scale below which ties resolve to a smooth interior split.
const RATIO_EVAL_GAP: f64 = 1e-4;

/// Residuals, per-user consumed energies and rates at one allocation.
#[derive(Debug, Clone)]
pub struct PsiEval {
    pub psi: Vec<f64>,
    pub consumed: Vec<f64>,
    pub rates: Vec<f64>,
    /// Euclidean norm over the rows of active (non-frozen) users.
    pub norm: f64,
    /// Norm over the active efficiency (beta) rows alone; the alpha rows
    /// are linear and solved exactly at every step, so the damped search
    /// monitors this part.
    pub beta_norm: f64,
}

/// Stationarity residuals of the ratio parameters at an allocation:
/// `psi[k] = alpha_k T_k - 1` and `psi[K+k] = w_k R_k - beta_k T_k`.
pub fn psi(
    alloc: &Allocation,
    scenario: &Scenario,
    channel: &Channel,
    params: &RatioParams,
) -> Result<Vec<f64>> {
    channel.validate(scenario)?;
    let s_flat = lagrangian::flatten(&alloc.s);
    Ok(psi_eval(scenario, channel, &alloc.tau, &s_flat, params).psi)
}

pub(crate) fn psi_eval(
    scenario: &Scenario,
    channel: &Channel,
    tau: &[f64],
    s_flat: &[f64],
    params: &RatioParams,
) -> PsiEval {
    let n = scenario.num_ports;
    let kk = scenario.num_users;
    let mut psi = vec![0.0; 2 * kk];
    let mut consumed = vec![0.0; kk];
    let mut rates = vec![0.0; kk];
    let mut norm_sq = 0.0;
    let mut beta_sq = 0.0;
    for k in 0..kk {
        let mut h_dot_s = 0.0;
        let mut s_sum = 0.0;
        for i in 0..n {
            h_dot_s += channel.h[i][k] * s_flat[i * kk + k];
            s_sum += s_flat[i * kk + k];
        }
        let t = s_sum + tau[k] * scenario.circuit_power[k];
        let r = model::rate_unchecked(tau[k], h_dot_s, scenario.noise_power);
        consumed[k] = t;
        rates[k] = r;
        psi[k] = params.alpha[k] * t - 1.0;
        psi[kk + k] = scenario.weights[k] * r - params.beta[k] * t;
        if t > CONSUMED_FLOOR {
            norm_sq += psi[k] * psi[k] + psi[kk + k] * psi[kk + k];
            beta_sq += psi[kk + k] * psi[kk + k];
        }
    }
    PsiEval {
        psi,
        consumed,
        rates,
        norm: norm_sq.sqrt(),
        beta_norm: beta_sq.sqrt(),
    }
}

/// One damped-Newton update of the ratio parameters.
///
/// The Jacobian of `psi` with the allocation held at the inner optimum is
/// diagonal (`T_k` on the alpha rows, `-T_k` on the beta rows), so the
/// Newton direction is closed-form. The alpha rows are linear in their own
/// parameter and take the full step; the efficiency rows backtrack until
/// their residual norm drops by the Armijo margin (the consumed energies
/// react steeply to the efficiency parameters, so a whole-vector test
/// would reject every useful step through the off-diagonal coupling the
/// simplified Jacobian ignores). Users frozen at zero consumption keep
/// their parameters. Returns the accepted parameters, the step size, and
/// the evaluation at the accepted point.
pub fn newton_step<F>(
    params: &RatioParams,
    current: &PsiEval,
    cfg: &NewtonConfig,
    mut eval: F,
) -> Result<(RatioParams, f64, PsiEval)>
where
    F: FnMut(&RatioParams) -> Result<PsiEval>,
{
    if current.norm == 0.0 {
        return Err(Error::Domain(
            "newton_step called at a stationary point (psi = 0)".into(),
        ));
    }
    let kk = params.alpha.len();
    let mut q = vec![0.0; 2 * kk];
    for k in 0..kk {
        let t = current.consumed[k];
        if t > CONSUMED_FLOOR {
            q[k] = -current.psi[k] / t;
            q[kk + k] = current.psi[kk + k] / t;
        }
    }
    for m in 0..=cfg.max_backtracks {
        let gamma = cfg.xi.powi(m as i32);
        // Both blocks take the damped step; only the efficiency rows
        // decide acceptance (the consumed energies react steeply to the
        // parameters through the frame split, which the simplified
        // diagonal Jacobian cannot see).
        let trial = RatioParams {
            alpha: (0..kk).map(|k| params.alpha[k] + gamma * q[k]).collect(),
            beta: (0..kk).map(|k| params.beta[k] + gamma * q[kk + k]).collect(),
            iteration: params.iteration + 1,
        };
        let trial_eval = eval(&trial)?;
        if trial_eval.beta_norm <= (1.0 - cfg.epsilon * gamma) * current.beta_norm
            || trial_eval.norm <= cfg.tol_psi
        {
            return Ok((trial, gamma, trial_eval));
        }
    }
    Err(Error::LineSearchFailed {
        psi_norm: current.norm,
        max_backtracks: cfg.max_backtracks,
    })
}

/// Per-outer-iteration diagnostics of one solver run. `gamma` is the step
/// accepted when leaving this iterate (NaN on the final row).
#[derive(Debug, Clone)]
pub struct OuterTrace {
    pub psi_norm: f64,
    pub gamma: f64,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub consumed: Vec<f64>,
    pub rates: Vec<f64>,
    pub psi: Vec<f64>,
}

/// Solves the weighted sum-of-efficiencies problem to global optimality.
pub fn solve(scenario: &Scenario, channel: &Channel, cfg: &UcConfig) -> Result<SolveReport> {
    solve_with(scenario, channel, cfg, None, Scheme::UcOpt).map(|(rep, _)| rep)
}

/// `solve` returning the outer iteration trace as well.
pub fn solve_detailed(
    scenario: &Scenario,
    channel: &Channel,
    cfg: &UcConfig,
) -> Result<(SolveReport, Vec<OuterTrace>)> {
    solve_with(scenario, channel, cfg, None, Scheme::UcOpt)
}

pub(crate) fn solve_with(
    scenario: &Scenario,
    channel: &Channel,
    cfg: &UcConfig,
    fixed_tau: Option<Vec<f64>>,
    scheme: Scheme,
) -> Result<(SolveReport, Vec<OuterTrace>)> {
    let start = Instant::now();
    channel.validate(scenario)?;
    let kk = scenario.num_users;

    let feas = match &fixed_tau {
        Some(t) => model::feasibility_with_tau(scenario, channel, t)?,
        None => model::check_feasibility(scenario, channel)?,
    };
    if !feas.feasible {
        return Err(Error::Infeasible {
            slack: feas.max_min_slack,
        });
    }

    // The weighted-sum objective is invariant to how the frame is split
    // among served users (per-user efficiencies cancel the slot length),
    // and the subtractive optimum's split is a degenerate tie at the fixed
    // point. Evaluating the ratio iteration on a *pinned* split removes
    // that degeneracy; the split itself is revised between rounds from the
    // converged power profiles.
    let mut pinned = match &fixed_tau {
        Some(t) => t.clone(),
        None => spread_shares(&feas.allocation.tau),
    };
    let rounds = if fixed_tau.is_some() { 1 } else { 4 };

    let mut params: Option<RatioParams> = None;
    let mut inner_iters = 0usize;
    let mut trace: Vec<OuterTrace> = Vec::new();
    let mut outer_total = 0usize;
    let mut result: Option<(PsiEval, Allocation, RatioParams)> = None;

    for round in 0..rounds {
        let reserve = model::feasibility_with_tau(scenario, channel, &pinned)?;
        if !reserve.feasible {
            break; // keep the previous round's answer
        }
        let reserve = reserve.allocation;
        let mut p = match params.take() {
            Some(p) => p,
            None => initial_params(scenario, channel, &Some(pinned.clone()), &reserve)?,
        };
        let mut warm = DualWarm::default();

        let eval_at = |params: &RatioParams,
                       tol: f64,
                       warm: &mut DualWarm,
                       iters: &mut usize|
         -> Result<(PsiEval, Allocation)> {
            let prob = DualProblem::user_centric(
                scenario,
                channel,
                &params.alpha,
                &params.beta,
                Some(pinned.clone()),
            );
            let mut dcfg = cfg.dual.clone();
            dcfg.tol = tol;
            let sol = lagrangian::solve_dual(&prob, &dcfg, warm)?;
            *iters += sol.ellipsoid_iters;
            warm.duals = Some(prob.pack(&sol.duals));
            let guess =
                lagrangian::polish_feasible(scenario, channel, &sol.tau, &sol.s, &reserve);
            // Polish the inner optimum on the central path: the outer
            // Newton needs evaluations that vary smoothly in the
            // parameters.
            let alloc = refine::refine_subtractive(&prob, &guess, 1e-11)
                .or_else(|_| refine::refine_subtractive(&prob, &reserve, 1e-11))?;
            let s_flat = lagrangian::flatten(&alloc.s);
            let pe = psi_eval(scenario, channel, &alloc.tau, &s_flat, params);
            Ok((pe, alloc))
        };

        let (mut pe, mut current) = eval_at(&p, cfg.dual.tol, &mut warm, &mut inner_iters)?;
        // The normalizing parameters solve their linear rows exactly by
        // assignment at every iterate; the iteration proper runs on the
        // efficiency rows.
        assign_alpha(&mut p, &pe);
        pe = psi_eval(
            scenario,
            channel,
            &current.tau,
            &lagrangian::flatten(&current.s),
            &p,
        );

        let mut outer = 0usize;
        loop {
            trace.push(OuterTrace {
                psi_norm: pe.norm,
                gamma: f64::NAN,
                alpha: p.alpha.clone(),
                beta: p.beta.clone(),
                consumed: pe.consumed.clone(),
                rates: pe.rates.clone(),
                psi: pe.psi.clone(),
            });
            if pe.norm <= cfg.newton.tol_psi {
                break;
            }
            outer += 1;
            outer_total += 1;
            if outer > cfg.newton.max_outer_iters {
                return Err(Error::ConvergenceFailure(format!(
                    "parameter iteration cap {} reached with residual norm {:.3e}",
                    cfg.newton.max_outer_iters, pe.norm
                )));
            }
            // Inner dual accuracy tracks the outer residual; evaluation
            // smoothness comes from the central-path refinement.
            let tol = (1e-2 * pe.norm).clamp(1e-9, cfg.dual.tol);
            if std::env::var_os("UC_DEBUG").is_some() {
                eprintln!(
                    "round {round} outer {outer}: psi {:.4e} beta {:?} T {:?}",
                    pe.norm, p.beta, pe.consumed
                );
            }
            let snapshot = warm.clone();
            let mut stash: Option<(Allocation, DualWarm)> = None;
            let stepped = {
                let mut trial_eval = |trial: &RatioParams| {
                    let mut w = snapshot.clone();
                    let (tpe, talloc) = eval_at(trial, tol, &mut w, &mut inner_iters)?;
                    stash = Some((talloc, w));
                    Ok(tpe)
                };
                newton_step(&p, &pe, &cfg.newton, &mut trial_eval)
            };
            let (accepted, gamma, _) = stepped?;
            p = accepted;
            let (alloc, w) = stash.expect("accepted trial was evaluated");
            current = alloc;
            warm = w;
            if let Some(row) = trace.last_mut() {
                row.gamma = gamma;
            }
            let s_flat = lagrangian::flatten(&current.s);
            assign_alpha_from(&mut p, scenario, &current, &s_flat);
            pe = psi_eval(scenario, channel, &current.tau, &s_flat, &p);
        }

        // Revise the split from the converged profiles: the max-min-slack
        // shares keep every harvest row as loose as possible.
        let next = if fixed_tau.is_none() && round + 1 < rounds {
            split_from_profiles(scenario, channel, &current)?
        } else {
            None
        };
        result = Some((pe, current, p.clone()));
        params = Some(p);
        match next {
            Some(tau) if max_abs_diff(&tau, &pinned) > 1e-10 => pinned = tau,
            _ => break,
        }
    }

    let (pe, polished, params) = result.expect("at least one round ran");
    let m = model::metrics(&polished, channel, scenario)?;
    let per_user_ee = m.user_ee.clone();
    let uc_ee = model::dot(&scenario.weights, &per_user_ee);
    let report = SolveReport {
        scheme,
        uc_ee: Some(uc_ee),
        nc_ee: None,
        per_user_ee: Some(per_user_ee),
        tau: polished.tau.clone(),
        p: polished.p.clone(),
        psi_norm: Some(pe.norm),
        t_residual: None,
        outer_iters: Some(outer_total.max(params.iteration)),
        q_iters: None,
        inner_iters,
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    Ok((report, trace))
}

/// Strictly positive shares: the input with any leftover frame spread
/// evenly (extra on-air time only helps the harvest rows).
fn spread_shares(tau: &[f64]) -> Vec<f64> {
    let kk = tau.len();
    let sum: f64 = tau.iter().sum();
    let slack = (1.0 - sum).max(0.0);
    tau.iter()
        .map(|t| (t + slack / kk as f64).max(1e-9))
        .collect()
}

/// Max-min-slack shares for the profiles of a converged allocation.
fn split_from_profiles(
    scenario: &Scenario,
    channel: &Channel,
    alloc: &Allocation,
) -> Result<Option<Vec<f64>>> {
    let n = scenario.num_ports;
    let kk = scenario.num_users;
    // Harvest delivered to user j per unit of user k's slot time.
    let mut feeds = vec![vec![0.0; kk]; kk];
    for j in 0..kk {
        for k in 0..kk {
            if j != k {
                feeds[j][k] = scenario.conversion_eff
                    * (0..n).map(|i| channel.h[i][j] * alloc.p[i][k]).sum::<f64>();
            }
        }
    }
    let d_pos = kk;
    let d_neg = kk + 1;
    let mut rows = Vec::new();
    for j in 0..kk {
        let mut coeffs = vec![0.0; kk + 2];
        for k in 0..kk {
            coeffs[k] = -feeds[j][k];
        }
        coeffs[d_pos] = 1.0;
        coeffs[d_neg] = -1.0;
        rows.push(crate::simplex::LpRow {
            coeffs,
            rhs: -scenario.energy_req[j],
        });
    }
    let mut coeffs = vec![0.0; kk + 2];
    coeffs[..kk].fill(1.0);
    rows.push(crate::simplex::LpRow { coeffs, rhs: 1.0 });
    let mut objective = vec![0.0; kk + 2];
    objective[d_pos] = 1.0;
    objective[d_neg] = -1.0;
    let Ok(sol) = crate::simplex::maximize(&crate::simplex::LpProblem {
        num_vars: kk + 2,
        objective,
        rows,
    }) else {
        return Ok(None);
    };
    if sol.value < -1e-10 {
        return Ok(None);
    }
    Ok(Some(spread_shares(&sol.x[..kk].to_vec())))
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn assign_alpha(params: &mut RatioParams, pe: &PsiEval) {
    for k in 0..params.alpha.len() {
        if pe.consumed[k] > CONSUMED_FLOOR {
            params.alpha[k] = 1.0 / pe.consumed[k];
        }
    }
}

fn assign_alpha_from(
    params: &mut RatioParams,
    scenario: &Scenario,
    alloc: &Allocation,
    s_flat: &[f64],
) {
    for k in 0..params.alpha.len() {
        let s_sum: f64 = (0..scenario.num_ports)
            .map(|i| s_flat[i * scenario.num_users + k])
            .sum();
        let t = s_sum + alloc.tau[k] * scenario.circuit_power[k];
        if t > CONSUMED_FLOOR {
            params.alpha[k] = 1.0 / t;
        }
    }
}

/// Starting parameters: a feasible equal-time allocation with its energies
/// scaled down onto the tightest harvest requirement, turned into ratio
/// parameters that zero the residuals at that point.
fn initial_params(
    scenario: &Scenario,
    channel: &Channel,
    fixed_tau: &Option<Vec<f64>>,
    reserve: &Allocation,
) -> Result<RatioParams> {
    let kk = scenario.num_users;
    let eq_tau = fixed_tau
        .clone()
        .unwrap_or_else(|| vec![1.0 / kk as f64; kk]);
    let rep = model::feasibility_with_tau(scenario, channel, &eq_tau)?;
    let mut init = if rep.feasible {
        rep.allocation
    } else {
        reserve.clone()
    };
    let mut scale: f64 = 0.0;
    for k in 0..kk {
        let e = model::harvested_energy(k, &init.s, channel, scenario.conversion_eff)?;
        if scenario.energy_req[k] > 0.0 && e > 0.0 {
            scale = scale.max(scenario.energy_req[k] / e);
        }
    }
    if scale > 0.0 && scale <= 1.0 {
        let s: Vec<Vec<f64>> = init
            .s
            .iter()
            .map(|row| row.iter().map(|v| v * scale).collect())
            .collect();
        init = Allocation::from_energy(init.tau, s);
    }
    let metrics = model::metrics(&init, channel, scenario)?;
    let mut alpha = vec![1.0; kk];
    let mut beta = vec![0.0; kk];
    for k in 0..kk {
        let s_sum: f64 = init.s.iter().map(|row| row[k]).sum();
        let t = s_sum + init.tau[k] * scenario.circuit_power[k];
        if t > CONSUMED_FLOOR {
            alpha[k] = 1.0 / t;
            beta[k] = scenario.weights[k] * metrics.rate[k] / t;
        }
    }
    Ok(RatioParams {
        alpha,
        beta,
        iteration: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Broadcast, PortLayout, ScenarioParams};

    fn desk_params(n: usize, k: usize) -> ScenarioParams {
        ScenarioParams {
            num_ports: n,
            num_users: k,
            side_length: 10.0,
            noise_power: 0.1,
            pathloss_const: 1.0,
            pathloss_exp: 2.0,
            conversion_eff: 0.6,
            circuit_power: Broadcast::Scalar(0.5),
            weights: Broadcast::Scalar(1.0),
            power_cap: Broadcast::Scalar(6.0),
            energy_req: Broadcast::Scalar(0.01),
            port_layout: PortLayout::Lattice,
            fading: true,
        }
    }

    #[test]
    fn psi_zero_at_matching_parameters() {
        let sc = Scenario::generate(&desk_params(2, 2), 1).unwrap();
        let ch = Channel::generate(&sc, 2);
        let tau = vec![0.4, 0.5];
        let s = vec![vec![0.5, 0.4], vec![0.3, 0.2]];
        let alloc = Allocation::from_energy(tau, s);
        let m = model::metrics(&alloc, &ch, &sc).unwrap();
        let mut alpha = vec![0.0; 2];
        let mut beta = vec![0.0; 2];
        for k in 0..2 {
            let t: f64 =
                (0..2).map(|i| alloc.s[i][k]).sum::<f64>() + alloc.tau[k] * sc.circuit_power[k];
            alpha[k] = 1.0 / t;
            beta[k] = sc.weights[k] * m.rate[k] / t;
        }
        let params = RatioParams {
            alpha,
            beta,
            iteration: 0,
        };
        let p = psi(&alloc, &sc, &ch, &params).unwrap();
        assert!(p.iter().all(|v| v.abs() <= 1e-12), "{p:?}");
    }

    #[test]
    fn psi_zero_allocation_unit_alpha() {
        let sc = Scenario::generate(&desk_params(2, 2), 3).unwrap();
        let ch = Channel::generate(&sc, 4);
        let alloc = Allocation::zeros(2, 2);
        let params = RatioParams {
            alpha: vec![1.0, 1.0],
            beta: vec![0.7, 0.2],
            iteration: 0,
        };
        let p = psi(&alloc, &sc, &ch, &params).unwrap();
        assert_eq!(&p[..2], &[-1.0, -1.0]);
        assert_eq!(&p[2..], &[0.0, 0.0]);
    }

    #[test]
    fn psi_matches_independent_re_evaluation() {
        let sc = Scenario::generate(&desk_params(2, 3), 5).unwrap();
        let ch = Channel::generate(&sc, 6);
        let alloc = Allocation::from_energy(
            vec![0.2, 0.3, 0.25],
            vec![vec![0.3, 0.5, 0.1], vec![0.2, 0.1, 0.4]],
        );
        let params = RatioParams {
            alpha: vec![0.9, 1.4, 0.3],
            beta: vec![1.1, 0.5, 2.0],
            iteration: 0,
        };
        let p = psi(&alloc, &sc, &ch, &params).unwrap();
        let m = model::metrics(&alloc, &ch, &sc).unwrap();
        for k in 0..3 {
            let t: f64 =
                (0..2).map(|i| alloc.s[i][k]).sum::<f64>() + alloc.tau[k] * sc.circuit_power[k];
            assert!((p[k] - (params.alpha[k] * t - 1.0)).abs() <= 1e-12);
            let expect = sc.weights[k] * m.rate[k] - params.beta[k] * t;
            assert!((p[3 + k] - expect).abs() <= 1e-12 * expect.abs().max(1.0));
        }
    }

    #[test]
    fn newton_step_rejects_stationary_input() {
        let params = RatioParams {
            alpha: vec![1.0],
            beta: vec![1.0],
            iteration: 0,
        };
        let current = PsiEval {
            psi: vec![0.0, 0.0],
            consumed: vec![1.0],
            rates: vec![1.0],
            norm: 0.0,
            beta_norm: 0.0,
        };
        let r = newton_step(&params, &current, &NewtonConfig::default(), |_| {
            panic!("must not evaluate")
        });
        assert!(r.is_err());
    }

    #[test]
    fn newton_step_scalar_case_converges_in_one_full_step() {
        // With the consumption fixed, the alpha residual is linear, so the
        // undamped step lands exactly on alpha = 1/T.
        let t = 2.5f64;
        let w_r = 1.7f64;
        let params = RatioParams {
            alpha: vec![0.1],
            beta: vec![0.0],
            iteration: 0,
        };
        let mk = |p: &RatioParams| PsiEval {
            psi: vec![p.alpha[0] * t - 1.0, w_r - p.beta[0] * t],
            consumed: vec![t],
            rates: vec![w_r],
            norm: ((p.alpha[0] * t - 1.0).powi(2) + (w_r - p.beta[0] * t).powi(2)).sqrt(),
            beta_norm: (w_r - p.beta[0] * t).abs(),
        };
        let current = mk(&params);
        let (next, gamma, eval) =
            newton_step(&params, &current, &NewtonConfig::default(), |p| Ok(mk(p))).unwrap();
        assert_eq!(gamma, 1.0);
        assert!((next.alpha[0] - 1.0 / t).abs() <= 1e-12);
        assert!((next.beta[0] - w_r / t).abs() <= 1e-12);
        assert!(eval.norm <= 1e-12);
        // The accepted update matches the damped-Newton formula.
        let q_alpha = -(params.alpha[0] * t - 1.0) / t;
        assert!((next.alpha[0] - (params.alpha[0] + gamma * q_alpha)).abs() <= 1e-15);
    }

    #[test]
    fn solve_converges_and_satisfies_constraints() {
        let sc = Scenario::generate(&desk_params(2, 2), 11).unwrap();
        let ch = Channel::generate(&sc, 12);
        let (rep, trace) = solve_detailed(&sc, &ch, &UcConfig::default()).unwrap();
        assert!(rep.psi_norm.unwrap() <= 1e-6);
        assert!(rep.uc_ee.unwrap() > 0.0);
        // Residual norms decrease strictly across the outer iterations.
        for w in trace.windows(2) {
            assert!(
                w[1].psi_norm < w[0].psi_norm,
                "{} -> {}",
                w[0].psi_norm,
                w[1].psi_norm
            );
        }
        // Reported allocation is feasible.
        let tau_sum: f64 = rep.tau.iter().sum();
        assert!(tau_sum <= 1.0 + 1e-9);
        for i in 0..2 {
            for k in 0..2 {
                assert!(rep.p[i][k] >= 0.0 && rep.p[i][k] <= sc.power_cap[i] + 1e-9);
            }
        }
        let alloc = Allocation::from_power(rep.tau.clone(), rep.p.clone());
        for k in 0..2 {
            let e = model::harvested_energy(k, &alloc.s, &ch, sc.conversion_eff).unwrap();
            assert!(e >= sc.energy_req[k] - 1e-8, "user {k}: {e}");
        }
        // Fixed-point identities tie beta to the weighted efficiencies.
        let last = trace.last().unwrap();
        for k in 0..2 {
            assert!((last.alpha[k] * last.consumed[k] - 1.0).abs() <= 1e-5);
            let wr = sc.weights[k] * last.rates[k];
            assert!((wr - last.beta[k] * last.consumed[k]).abs() <= 1e-5 * wr.max(1.0));
        }
        let beta_sum: f64 = last.beta.iter().sum();
        assert!((rep.uc_ee.unwrap() - beta_sum).abs() <= 1e-4 * beta_sum.max(1.0));
    }

    #[test]
    fn newton_updates_follow_the_damped_formulas() {
        let sc = Scenario::generate(&desk_params(2, 2), 21).unwrap();
        let ch = Channel::generate(&sc, 22);
        let (_, trace) = solve_detailed(&sc, &ch, &UcConfig::default()).unwrap();
        assert!(trace.len() >= 2);
        for w in trace.windows(2) {
            let (prev, next) = (&w[0], &w[1]);
            let gamma = prev.gamma;
            assert!(gamma > 0.0 && gamma <= 1.0);
            for k in 0..2 {
                if prev.consumed[k] <= 1e-12 {
                    continue;
                }
                // Fresh re-implementation of the update rule.
                let q_a = -(prev.psi[k]) / prev.consumed[k];
                let q_b = prev.psi[2 + k] / prev.consumed[k];
                let exp_a = prev.alpha[k] + gamma * q_a;
                let exp_b = prev.beta[k] + gamma * q_b;
                assert!((next.alpha[k] - exp_a).abs() <= 1e-12 * exp_a.abs().max(1.0));
                assert!((next.beta[k] - exp_b).abs() <= 1e-12 * exp_b.abs().max(1.0));
            }
        }
    }

    #[test]
    fn infeasible_instance_is_reported() {
        let mut sc = Scenario::generate(&desk_params(2, 2), 31).unwrap();
        let ch = Channel::generate(&sc, 32);
        sc.energy_req = vec![1e6, 1e6];
        assert!(matches!(
            solve(&sc, &ch, &UcConfig::default()),
            Err(Error::Infeasible { .. })
        ));
    }
}
