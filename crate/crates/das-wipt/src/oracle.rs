//! Independent brute-force verification at desk scale: grid searches over
//! the allocation space, finite-difference derivative checks, and an exact
//! small-LP solver by vertex enumeration. These are the reference answers
//! the solvers are tested against, so they share no code with the solver
//! paths they check.

use crate::error::{Error, Result};
use crate::lagrangian::{self, DualProblem, DualState};
use crate::model::{Allocation, Channel, Scenario};
use crate::simplex::{LpProblem, LpSolution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

#[derive(Debug, Clone)]
pub struct GridSpec {
    /// Points per power axis: zero plus a log-spaced ladder up to the cap.
    pub power_points: usize,
    /// Points per time axis (used for reporting resolution).
    pub time_points: usize,
    /// Hard cap on the number of grid evaluations.
    pub max_evals: u128,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            power_points: 60,
            time_points: 100,
            max_evals: 100_000_000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GridResult {
    pub best_value: f64,
    pub allocation: Allocation,
}

/// Per-user precomputation over that user's own power sub-grid.
struct ColumnTable {
    /// Flattened combos: powers[c][i] is port i's power in combo c.
    powers: Vec<Vec<f64>>,
    /// Weighted per-user efficiency of each combo.
    weighted_ee: Vec<f64>,
    /// Rate of each combo in nats.
    rate: Vec<f64>,
    /// Energy delivered per unit of this user's slot time to the *other*
    /// user (two-user instances).
    feeds_other: Vec<f64>,
    /// Frame cost per unit time: total power plus circuit power.
    cost: Vec<f64>,
}

fn power_axis(cap: f64, points: usize) -> Vec<f64> {
    assert!(points >= 2);
    let mut axis = vec![0.0];
    if cap > 0.0 {
        let lo = cap * 1e-4;
        let steps = points - 2;
        for j in 0..=steps {
            axis.push(lo * (cap / lo).powf(j as f64 / steps.max(1) as f64));
        }
    } else {
        axis.push(0.0);
    }
    axis.truncate(points.max(2));
    axis
}

fn column_table(scenario: &Scenario, channel: &Channel, k: usize, spec: &GridSpec) -> ColumnTable {
    let n = scenario.num_ports;
    let other = 1 - k;
    let axes: Vec<Vec<f64>> = (0..n)
        .map(|i| power_axis(scenario.power_cap[i], spec.power_points))
        .collect();
    let mut counts = 1usize;
    for a in &axes {
        counts *= a.len();
    }
    let mut powers = Vec::with_capacity(counts);
    let mut weighted_ee = Vec::with_capacity(counts);
    let mut rate = Vec::with_capacity(counts);
    let mut feeds_other = Vec::with_capacity(counts);
    let mut cost = Vec::with_capacity(counts);
    let mut idx = vec![0usize; n];
    loop {
        let p: Vec<f64> = (0..n).map(|i| axes[i][idx[i]]).collect();
        let psum: f64 = p.iter().sum();
        let hp: f64 = (0..n).map(|i| channel.h[i][k] * p[i]).sum();
        let r = (hp / scenario.noise_power).ln_1p();
        let denom = psum + scenario.circuit_power[k];
        let eta = if denom > 0.0 { r / denom } else { 0.0 };
        powers.push(p.clone());
        weighted_ee.push(scenario.weights[k] * eta);
        rate.push(r);
        feeds_other.push(
            scenario.conversion_eff * (0..n).map(|i| channel.h[i][other] * p[i]).sum::<f64>(),
        );
        cost.push(denom);
        // odometer
        let mut d = 0;
        loop {
            idx[d] += 1;
            if idx[d] < axes[d].len() {
                break;
            }
            idx[d] = 0;
            d += 1;
            if d == n {
                return ColumnTable {
                    powers,
                    weighted_ee,
                    rate,
                    feeds_other,
                    cost,
                };
            }
        }
    }
}

fn check_scale(scenario: &Scenario, spec: &GridSpec) -> Result<()> {
    if scenario.num_users != 2 {
        return Err(Error::GridTooLarge {
            evals: (spec.power_points as u128)
                .pow((scenario.num_ports * scenario.num_users) as u32),
            cap: spec.max_evals,
        });
    }
    let per_col = (spec.power_points as u128).pow(scenario.num_ports as u32);
    let evals = per_col * per_col;
    if evals > spec.max_evals {
        return Err(Error::GridTooLarge {
            evals,
            cap: spec.max_evals,
        });
    }
    Ok(())
}

/// Minimum slot times forced by the two harvest rows, or None when the
/// combo pair cannot satisfy them: user 0 must stay on air `l0` for user 1
/// to harvest enough, and vice versa.
fn time_lower_bounds(scenario: &Scenario, feed0: f64, feed1: f64) -> Option<(f64, f64)> {
    let need = |req: f64, feed: f64| -> Option<f64> {
        if req <= 0.0 {
            Some(0.0)
        } else if feed <= 0.0 {
            None
        } else {
            let l = req / feed;
            (l <= 1.0).then_some(l)
        }
    };
    // User 1 harvests from user 0's slot and vice versa.
    let l0 = need(scenario.energy_req[1], feed0)?;
    let l1 = need(scenario.energy_req[0], feed1)?;
    (l0 + l1 <= 1.0).then_some((l0, l1))
}

/// Exhaustive maximization of the weighted sum of per-user efficiencies
/// over the power grid, with exact handling of the time shares (they only
/// enter through feasibility and the served/unserved split).
pub fn grid_search_uc(
    scenario: &Scenario,
    channel: &Channel,
    spec: &GridSpec,
) -> Result<GridResult> {
    channel.validate(scenario)?;
    check_scale(scenario, spec)?;
    let cols: Vec<ColumnTable> = (0..2)
        .map(|k| column_table(scenario, channel, k, spec))
        .collect();

    // Serving a single user requires the other's requirement to be zero.
    let mut best = (f64::NEG_INFINITY, 0usize, 0usize, 2usize); // value, c0, c1, mode
    for k in 0..2 {
        let other = 1 - k;
        if scenario.energy_req[k] > 0.0 {
            continue; // the served user cannot harvest anything itself
        }
        for (c, &v) in cols[k].weighted_ee.iter().enumerate() {
            let feed = cols[k].feeds_other[c];
            let l = if scenario.energy_req[other] <= 0.0 {
                0.0
            } else if feed > 0.0 {
                scenario.energy_req[other] / feed
            } else {
                f64::INFINITY
            };
            if l <= 1.0 && v > best.0 {
                best = (v, if k == 0 { c } else { 0 }, if k == 1 { c } else { 0 }, k);
            }
        }
    }

    let n0 = cols[0].weighted_ee.len();
    let both = (0..n0)
        .into_par_iter()
        .map(|c0| {
            let mut local = (f64::NEG_INFINITY, 0usize, 0usize);
            let feed0 = cols[0].feeds_other[c0];
            let v0 = cols[0].weighted_ee[c0];
            for c1 in 0..cols[1].weighted_ee.len() {
                if time_lower_bounds(scenario, feed0, cols[1].feeds_other[c1]).is_some() {
                    let v = v0 + cols[1].weighted_ee[c1];
                    if v > local.0 {
                        local = (v, c0, c1);
                    }
                }
            }
            local
        })
        .reduce(
            || (f64::NEG_INFINITY, 0usize, 0usize),
            |a, b| {
                if b.0 > a.0 || (b.0 == a.0 && (b.1, b.2) < (a.1, a.2)) {
                    b
                } else {
                    a
                }
            },
        );
    if both.0 > best.0 {
        best = (both.0, both.1, both.2, 2);
    }
    if best.0 == f64::NEG_INFINITY {
        // Nothing on the grid is feasible; report the empty allocation.
        return Ok(GridResult {
            best_value: 0.0,
            allocation: Allocation::zeros(scenario.num_ports, 2),
        });
    }

    let (value, c0, c1, mode) = best;
    let allocation = match mode {
        2 => {
            let (l0, l1) =
                time_lower_bounds(scenario, cols[0].feeds_other[c0], cols[1].feeds_other[c1])
                    .expect("winner is feasible");
            // Split the leftover frame evenly; the objective is unaffected.
            let slack = (1.0 - l0 - l1) / 2.0;
            build_alloc(
                scenario,
                &[l0 + slack, l1 + slack],
                &cols[0].powers[c0],
                &cols[1].powers[c1],
            )
        }
        k => {
            let other = 1 - k;
            let c = if k == 0 { c0 } else { c1 };
            let feed = cols[k].feeds_other[c];
            let l = if scenario.energy_req[other] > 0.0 {
                scenario.energy_req[other] / feed
            } else {
                0.0
            };
            let tau_k = l.max(0.5_f64.min(1.0));
            let mut tau = [0.0, 0.0];
            tau[k] = tau_k.min(1.0);
            let zero = vec![0.0; scenario.num_ports];
            let (p0, p1) = if k == 0 {
                (&cols[0].powers[c], &zero)
            } else {
                (&zero, &cols[1].powers[c])
            };
            build_alloc(scenario, &tau, p0, p1)
        }
    };
    Ok(GridResult {
        best_value: value,
        allocation,
    })
}

/// Exhaustive maximization of the network efficiency over the power grid;
/// for each power pair the best time shares lie at a vertex of the small
/// polygon cut out by the harvest rows and the frame budget.
pub fn grid_search_nc(
    scenario: &Scenario,
    channel: &Channel,
    spec: &GridSpec,
) -> Result<GridResult> {
    channel.validate(scenario)?;
    check_scale(scenario, spec)?;
    let cols: Vec<ColumnTable> = (0..2)
        .map(|k| column_table(scenario, channel, k, spec))
        .collect();
    let w = &scenario.weights;

    let n0 = cols[0].weighted_ee.len();
    let best = (0..n0)
        .into_par_iter()
        .map(|c0| {
            let mut local = (f64::NEG_INFINITY, 0usize, 0usize, [0.0f64; 2]);
            let feed0 = cols[0].feeds_other[c0];
            for c1 in 0..cols[1].rate.len() {
                let Some((l0, l1)) = time_lower_bounds(scenario, feed0, cols[1].feeds_other[c1])
                else {
                    continue;
                };
                let num = [w[0] * cols[0].rate[c0], w[1] * cols[1].rate[c1]];
                let den = [cols[0].cost[c0], cols[1].cost[c1]];
                for tau in [[l0, l1], [1.0 - l1, l1], [l0, 1.0 - l0]] {
                    let d = den[0] * tau[0] + den[1] * tau[1];
                    if d <= 0.0 {
                        continue;
                    }
                    let v = (num[0] * tau[0] + num[1] * tau[1]) / d;
                    if v > local.0 {
                        local = (v, c0, c1, tau);
                    }
                }
            }
            local
        })
        .reduce(
            || (f64::NEG_INFINITY, 0usize, 0usize, [0.0f64; 2]),
            |a, b| {
                if b.0 > a.0 || (b.0 == a.0 && (b.1, b.2) < (a.1, a.2)) {
                    b
                } else {
                    a
                }
            },
        );

    if best.0 == f64::NEG_INFINITY {
        return Ok(GridResult {
            best_value: 0.0,
            allocation: Allocation::zeros(scenario.num_ports, 2),
        });
    }
    let (value, c0, c1, tau) = best;
    Ok(GridResult {
        best_value: value,
        allocation: build_alloc(scenario, &tau, &cols[0].powers[c0], &cols[1].powers[c1]),
    })
}

fn build_alloc(scenario: &Scenario, tau: &[f64], p0: &[f64], p1: &[f64]) -> Allocation {
    let n = scenario.num_ports;
    let p: Vec<Vec<f64>> = (0..n).map(|i| vec![p0[i], p1[i]]).collect();
    Allocation::from_power(tau.to_vec(), p)
}

/// Which Lagrangian family a derivative check targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PartialTarget {
    UserCentric,
    NetworkCentric,
}

#[derive(Debug, Clone)]
pub struct FiniteDiffReport {
    pub max_rel_err_tau: f64,
    pub max_rel_err_s: f64,
    /// Largest (most positive) second derivative in a time share seen.
    pub max_second_derivative_tau: f64,
    pub samples: usize,
}

/// Central-difference check of the analytic Lagrangian derivatives at
/// random interior points, with random positive multipliers and ratio
/// parameters. Returns the worst relative error over all coordinates.
pub fn finite_diff(
    scenario: &Scenario,
    channel: &Channel,
    target: PartialTarget,
    samples: usize,
    seed: u64,
) -> Result<FiniteDiffReport> {
    channel.validate(scenario)?;
    let n = scenario.num_ports;
    let kk = scenario.num_users;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut report = FiniteDiffReport {
        max_rel_err_tau: 0.0,
        max_rel_err_s: 0.0,
        max_second_derivative_tau: f64::NEG_INFINITY,
        samples,
    };
    for _ in 0..samples {
        let prob = match target {
            PartialTarget::UserCentric => {
                let alpha: Vec<f64> = (0..kk).map(|_| rng.random_range(0.2..2.0)).collect();
                let beta: Vec<f64> = (0..kk).map(|_| rng.random_range(0.1..3.0)).collect();
                DualProblem::user_centric(scenario, channel, &alpha, &beta, None)
            }
            PartialTarget::NetworkCentric => {
                let q = rng.random_range(0.1..3.0);
                DualProblem::network_centric(scenario, channel, q, None)
            }
        };
        let duals = DualState {
            mu: (0..kk).map(|_| rng.random_range(0.0..0.5)).collect(),
            upsilon: (0..n * kk).map(|_| rng.random_range(0.0..0.3)).collect(),
            lambda: rng.random_range(0.0..1.0),
        };
        let offsets = prob.offsets(&duals);
        let tau: Vec<f64> = (0..kk)
            .map(|_| rng.random_range(0.01..(0.99 / kk as f64)))
            .collect();
        let s: Vec<f64> = (0..n * kk)
            .map(|idx| {
                let i = idx / kk;
                let k = idx % kk;
                rng.random_range(0.01..1.0) * scenario.power_cap[i] * tau[k] * 0.98 + 1e-6
            })
            .collect();

        for k in 0..kk {
            let h = 1e-6 * tau[k].max(0.5);
            let mut tp = tau.clone();
            let mut tm = tau.clone();
            tp[k] += h;
            tm[k] -= h;
            let fd = (lagrangian::lagrangian_value(&prob, &offsets, &tp, &s)
                - lagrangian::lagrangian_value(&prob, &offsets, &tm, &s))
                / (2.0 * h);
            let an = lagrangian::dl_dtau(&prob, &offsets, k, tau[k], &s);
            let err = (fd - an).abs() / an.abs().max(1.0);
            report.max_rel_err_tau = report.max_rel_err_tau.max(err);
            report.max_second_derivative_tau = report
                .max_second_derivative_tau
                .max(lagrangian::d2l_dtau2(&prob, &offsets, k, tau[k], &s));
        }
        for idx in 0..n * kk {
            let h = 1e-6 * s[idx].max(0.5);
            let mut sp = s.clone();
            let mut sm = s.clone();
            sp[idx] += h;
            sm[idx] -= h;
            let fd = (lagrangian::lagrangian_value(&prob, &offsets, &tau, &sp)
                - lagrangian::lagrangian_value(&prob, &offsets, &tau, &sm))
                / (2.0 * h);
            let an = lagrangian::dl_ds(&prob, &offsets, idx / kk, idx % kk, &tau, &s);
            let err = (fd - an).abs() / an.abs().max(1.0);
            report.max_rel_err_s = report.max_rel_err_s.max(err);
        }
    }
    Ok(report)
}

/// Exact solver for small `max c.x s.t. A x <= b, x >= 0` problems by
/// enumerating all candidate vertices (every choice of n active
/// constraints). Exponential, so only for single-digit dimensions; serves
/// as the independent cross-check of the simplex path.
pub fn lp_enumerate(problem: &LpProblem) -> Result<LpSolution> {
    let n = problem.num_vars;
    let m = problem.rows.len();
    assert!(n <= 8, "vertex enumeration is for tiny programs");
    let total = m + n; // rows then coordinate planes
    let mut combo: Vec<usize> = (0..n).collect();
    let mut best: Option<(f64, Vec<f64>)> = None;
    loop {
        if let Some(x) = solve_active_set(problem, &combo) {
            if feasible(problem, &x) {
                let v: f64 = problem
                    .objective
                    .iter()
                    .zip(&x)
                    .map(|(c, xv)| c * xv)
                    .sum();
                if best.as_ref().map_or(true, |(bv, _)| v > *bv) {
                    best = Some((v, x));
                }
            }
        }
        // next combination
        let mut i = n;
        loop {
            if i == 0 {
                let (value, x) = best.ok_or_else(|| Error::Lp("no feasible vertex".into()))?;
                return Ok(LpSolution {
                    x,
                    value,
                    iterations: 0,
                });
            }
            i -= 1;
            if combo[i] + (n - i) < total {
                combo[i] += 1;
                for j in i + 1..n {
                    combo[j] = combo[j - 1] + 1;
                }
                break;
            }
        }
    }
}

fn solve_active_set(problem: &LpProblem, active: &[usize]) -> Option<Vec<f64>> {
    let n = problem.num_vars;
    let m = problem.rows.len();
    let mut a = vec![vec![0.0; n + 1]; n];
    for (r, &idx) in active.iter().enumerate() {
        if idx < m {
            a[r][..n].copy_from_slice(&problem.rows[idx].coeffs);
            a[r][n] = problem.rows[idx].rhs;
        } else {
            a[r][idx - m] = 1.0;
            a[r][n] = 0.0;
        }
    }
    // Gaussian elimination with partial pivoting.
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-11 {
            return None;
        }
        a.swap(col, piv);
        for r in 0..n {
            if r != col {
                let f = a[r][col] / a[col][col];
                if f != 0.0 {
                    for c in col..=n {
                        a[r][c] -= f * a[col][c];
                    }
                }
            }
        }
    }
    Some((0..n).map(|r| a[r][n] / a[r][r]).collect())
}

fn feasible(problem: &LpProblem, x: &[f64]) -> bool {
    if x.iter().any(|&v| v < -1e-8 || !v.is_finite()) {
        return false;
    }
    problem.rows.iter().all(|row| {
        let lhs: f64 = row.coeffs.iter().zip(x).map(|(a, b)| a * b).sum();
        lhs <= row.rhs + 1e-8 * row.rhs.abs().max(1.0)
    })
}
