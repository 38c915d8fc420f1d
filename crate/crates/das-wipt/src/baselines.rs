//! The four restricted benchmark schemes: fixed equal time shares with
//! optimized power (FT), and full fixed power with optimized time (FP),
//! each for the user-centric and the network-centric objective.

use crate::error::{Error, Result};
use crate::model::{self, Allocation, Channel, Scenario};
use crate::nc::{self, NcConfig};
use crate::report::{Scheme, SolveReport};
use crate::simplex::{self, LpError, LpProblem, LpRow};
use crate::uc::{self, UcConfig};
use std::time::Instant;

fn equal_time(kk: usize) -> Vec<f64> {
    vec![1.0 / kk as f64; kk]
}

/// User-centric maximization with the frame split evenly: the full solver
/// with the time shares pinned (the frame multiplier drops out).
pub fn solve_uc_ft(scenario: &Scenario, channel: &Channel, cfg: &UcConfig) -> Result<SolveReport> {
    let tau = equal_time(scenario.num_users);
    uc::solve_with(scenario, channel, cfg, Some(tau), Scheme::UcFt).map(|(rep, _)| rep)
}

/// Network-centric maximization with the frame split evenly.
pub fn solve_nc_ft(scenario: &Scenario, channel: &Channel, cfg: &NcConfig) -> Result<SolveReport> {
    let tau = equal_time(scenario.num_users);
    nc::solve_with(scenario, channel, cfg, Some(tau), Scheme::NcFt).map(|(rep, _)| rep)
}

/// Per-unit-time constants of the fixed-power schemes: with every port at
/// its cap, user `k` decodes at rate `rate[k]`, costs `cost[k]` joules per
/// unit slot time, and feeds `feed[k]` joules per unit slot time to each
/// other user's harvester (indexed by the harvesting user).
struct FixedPowerConstants {
    rate: Vec<f64>,
    cost: Vec<f64>,
    /// `feed[j][k]`: harvest rate at user j while user k is served.
    feed: Vec<Vec<f64>>,
}

fn fixed_power_constants(scenario: &Scenario, channel: &Channel) -> FixedPowerConstants {
    let n = scenario.num_ports;
    let kk = scenario.num_users;
    let cap_sum: f64 = scenario.power_cap.iter().sum();
    let mut rate = Vec::with_capacity(kk);
    let mut cost = Vec::with_capacity(kk);
    for k in 0..kk {
        let hp: f64 = (0..n)
            .map(|i| channel.h[i][k] * scenario.power_cap[i])
            .sum();
        rate.push((hp / scenario.noise_power).ln_1p());
        cost.push(cap_sum + scenario.circuit_power[k]);
    }
    let feed = (0..kk)
        .map(|j| {
            (0..kk)
                .map(|k| {
                    if j == k {
                        0.0
                    } else {
                        scenario.conversion_eff
                            * (0..n)
                                .map(|i| channel.h[i][j] * scenario.power_cap[i])
                                .sum::<f64>()
                    }
                })
                .collect()
        })
        .collect();
    FixedPowerConstants { rate, cost, feed }
}

/// Max-min-slack time allocation with all ports at full power:
/// `max delta  s.t.  feed_k . tau - delta >= energy_req[k], sum tau <= 1`.
fn fixed_power_lp(scenario: &Scenario, consts: &FixedPowerConstants) -> Result<(f64, Vec<f64>)> {
    let kk = scenario.num_users;
    let d_pos = kk;
    let d_neg = kk + 1;
    let num_vars = kk + 2;
    let mut rows = Vec::new();
    for k in 0..kk {
        let mut c = vec![0.0; num_vars];
        for k2 in 0..kk {
            c[k2] = -consts.feed[k][k2];
        }
        c[d_pos] = 1.0;
        c[d_neg] = -1.0;
        rows.push(LpRow {
            coeffs: c,
            rhs: -scenario.energy_req[k],
        });
    }
    let mut c = vec![0.0; num_vars];
    c[..kk].fill(1.0);
    rows.push(LpRow { coeffs: c, rhs: 1.0 });
    for k in 0..kk {
        let mut c = vec![0.0; num_vars];
        c[k] = 1.0;
        rows.push(LpRow { coeffs: c, rhs: 1.0 });
    }
    let mut objective = vec![0.0; num_vars];
    objective[d_pos] = 1.0;
    objective[d_neg] = -1.0;
    let sol = simplex::maximize(&LpProblem {
        num_vars,
        objective,
        rows,
    })
    .map_err(|e| Error::Lp(e.to_string()))?;
    Ok((sol.value, sol.x[..kk].to_vec()))
}

/// Fixed power at every port: the per-user efficiencies are constants, so
/// only feasibility of the time shares matters; the reported shares come
/// from the max-min-slack program.
pub fn solve_uc_fp(scenario: &Scenario, channel: &Channel) -> Result<SolveReport> {
    let start = Instant::now();
    channel.validate(scenario)?;
    let kk = scenario.num_users;
    let consts = fixed_power_constants(scenario, channel);
    let (slack, tau) = fixed_power_lp(scenario, &consts)?;
    if slack < -1e-10 {
        return Err(Error::Infeasible { slack });
    }
    let per_user_ee: Vec<f64> = (0..kk).map(|k| consts.rate[k] / consts.cost[k]).collect();
    let uc_ee = model::dot(&scenario.weights, &per_user_ee);
    let p: Vec<Vec<f64>> = (0..scenario.num_ports)
        .map(|i| vec![scenario.power_cap[i]; kk])
        .collect();
    Ok(SolveReport {
        scheme: Scheme::UcFp,
        uc_ee: Some(uc_ee),
        nc_ee: None,
        per_user_ee: Some(per_user_ee),
        tau,
        p,
        psi_norm: None,
        t_residual: None,
        outer_iters: None,
        q_iters: None,
        inner_iters: 0,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

/// Fixed power with the ratio method over the time shares: each
/// subtractive subproblem `max sum (w_k r_k - q c_k) tau_k` over the
/// harvest and frame rows is a small linear program solved exactly.
pub fn solve_nc_fp(
    scenario: &Scenario,
    channel: &Channel,
    cfg: &nc::DinkelbachConfig,
) -> Result<SolveReport> {
    let start = Instant::now();
    channel.validate(scenario)?;
    let kk = scenario.num_users;
    let consts = fixed_power_constants(scenario, channel);
    let (slack, tau0) = fixed_power_lp(scenario, &consts)?;
    if slack < -1e-10 {
        return Err(Error::Infeasible { slack });
    }

    let eta = |tau: &[f64]| -> f64 {
        let num: f64 = (0..kk)
            .map(|k| scenario.weights[k] * consts.rate[k] * tau[k])
            .sum();
        let den: f64 = (0..kk).map(|k| consts.cost[k] * tau[k]).sum();
        if den > 0.0 {
            num / den
        } else {
            0.0
        }
    };

    let mut q = eta(&tau0);
    let mut tau = tau0;
    let mut t_residual = f64::INFINITY;
    let mut iters = 0usize;
    let mut pivots = 0usize;
    while iters < cfg.max_q_iters {
        iters += 1;
        let sol = nc_fp_subproblem(scenario, &consts, q)?;
        pivots += sol.iterations;
        t_residual = sol.value;
        if sol.value.abs() < cfg.tol_t {
            // Keep the maximizer only if it actually carries time; the
            // all-zero solution ties at T = 0 without being an allocation.
            if sol.x[..kk].iter().sum::<f64>() > 1e-12 {
                tau = sol.x[..kk].to_vec();
            }
            break;
        }
        tau = sol.x[..kk].to_vec();
        q = q.max(eta(&tau));
        if iters == cfg.max_q_iters {
            return Err(Error::ConvergenceFailure(format!(
                "fixed-power ratio iteration cap {} reached with T(q) = {:.3e}",
                cfg.max_q_iters, t_residual
            )));
        }
    }

    let p: Vec<Vec<f64>> = (0..scenario.num_ports)
        .map(|i| vec![scenario.power_cap[i]; kk])
        .collect();
    let nc_ee = eta(&tau);
    Ok(SolveReport {
        scheme: Scheme::NcFp,
        uc_ee: None,
        nc_ee: Some(nc_ee),
        per_user_ee: None,
        tau,
        p,
        psi_norm: None,
        t_residual: Some(t_residual),
        outer_iters: None,
        q_iters: Some(iters),
        inner_iters: pivots,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

/// The per-ratio subproblem of the fixed-power network scheme, as a linear
/// program over the time shares.
pub fn nc_fp_subproblem_lp(scenario: &Scenario, channel: &Channel, q: f64) -> LpProblem {
    let consts = fixed_power_constants(scenario, channel);
    nc_fp_lp(scenario, &consts, q)
}

fn nc_fp_lp(scenario: &Scenario, consts: &FixedPowerConstants, q: f64) -> LpProblem {
    let kk = scenario.num_users;
    let mut rows = Vec::new();
    for k in 0..kk {
        let coeffs: Vec<f64> = (0..kk).map(|k2| -consts.feed[k][k2]).collect();
        rows.push(LpRow {
            coeffs,
            rhs: -scenario.energy_req[k],
        });
    }
    rows.push(LpRow {
        coeffs: vec![1.0; kk],
        rhs: 1.0,
    });
    for k in 0..kk {
        let mut c = vec![0.0; kk];
        c[k] = 1.0;
        rows.push(LpRow { coeffs: c, rhs: 1.0 });
    }
    let objective: Vec<f64> = (0..kk)
        .map(|k| scenario.weights[k] * consts.rate[k] - q * consts.cost[k])
        .collect();
    LpProblem {
        num_vars: kk,
        objective,
        rows,
    }
}

fn nc_fp_subproblem(
    scenario: &Scenario,
    consts: &FixedPowerConstants,
    q: f64,
) -> Result<simplex::LpSolution> {
    simplex::maximize(&nc_fp_lp(scenario, consts, q)).map_err(|e| match e {
        LpError::Infeasible => Error::Infeasible { slack: f64::NAN },
        other => Error::Lp(other.to_string()),
    })
}

/// Runs one scheme on one instance.
pub fn solve_scheme(
    scheme: Scheme,
    scenario: &Scenario,
    channel: &Channel,
    uc_cfg: &UcConfig,
    nc_cfg: &NcConfig,
) -> Result<SolveReport> {
    match scheme {
        Scheme::UcOpt => uc::solve(scenario, channel, uc_cfg),
        Scheme::NcOpt => nc::solve(scenario, channel, nc_cfg),
        Scheme::UcFt => solve_uc_ft(scenario, channel, uc_cfg),
        Scheme::UcFp => solve_uc_fp(scenario, channel),
        Scheme::NcFt => solve_nc_ft(scenario, channel, nc_cfg),
        Scheme::NcFp => solve_nc_fp(scenario, channel, &nc_cfg.dinkelbach),
    }
}

/// The true objective value of a reported allocation under either metric;
/// used by dominance checks so every scheme is scored the same way.
pub fn achieved_objective(
    report: &SolveReport,
    scenario: &Scenario,
    channel: &Channel,
) -> Result<f64> {
    let alloc = Allocation::from_power(report.tau.clone(), report.p.clone());
    if report.scheme.is_user_centric() {
        model::sum_weighted_user_ee(&alloc, channel, scenario)
    } else {
        model::network_ee(&alloc, channel, scenario)
    }
}
