//! Inner machinery shared by both solvers: block-coordinate ascent of the
//! Lagrangian with closed-form coordinate updates, and minimization of the
//! dual over the multipliers with the ellipsoid method.
//!
//! For multipliers `mu` (minimum-harvest rows), `upsilon` (box rows) and
//! `lambda` (frame length), the Lagrangian of the subtractive problem
//! collapses to
//!
//! ```text
//! L(tau, s) = sum_k lw_k * R_k(tau_k, s_col_k)
//!           + sum_{i,k} s_coef[i,k] * s[i,k]
//!           + sum_k tau_coef[k] * tau[k]
//!           + const(duals)
//! ```
//!
//! where `lw` weights the log terms, and `s_coef`/`tau_coef` gather every
//! linear contribution. Those coefficients drive both the closed-form
//! coordinate maximizers and the analytic derivatives.

use crate::ellipsoid::{self, EllipsoidConfig};
use crate::error::{Error, Result};
use crate::lambert::lambert_w0;
use crate::model::{self, rate_unchecked, Allocation, Channel, Scenario};
use crate::simplex::{self, LpProblem, LpRow};

/// Which objective the subtractive form came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObjectiveKind {
    UserCentric,
    NetworkCentric,
}

/// Multipliers of the harvest, box, and frame constraints. `upsilon` is
/// stored port-major (`upsilon[i * num_users + k]`), matching the packed
/// dual vector layout: the `mu` block, the `upsilon` block, then `lambda`.
#[derive(Debug, Clone)]
pub struct DualState {
    pub mu: Vec<f64>,
    pub upsilon: Vec<f64>,
    pub lambda: f64,
}

impl DualState {
    pub fn zeros(num_ports: usize, num_users: usize) -> DualState {
        DualState {
            mu: vec![0.0; num_users],
            upsilon: vec![0.0; num_ports * num_users],
            lambda: 0.0,
        }
    }
}

/// Mode-resolved linear coefficients of the Lagrangian for one dual point.
#[derive(Debug, Clone)]
pub struct LinearOffsets {
    pub mode: ObjectiveKind,
    /// Weight of each user's log term.
    pub log_weight: Vec<f64>,
    /// Net linear coefficient of `tau[k]`.
    pub tau_coef: Vec<f64>,
    /// Net linear coefficient of `s[i*num_users + k]`.
    pub s_coef: Vec<f64>,
    /// Value terms independent of the allocation.
    pub dual_const: f64,
}

/// One dual evaluation subproblem: everything held fixed while the
/// multipliers move. `fixed_tau` pins the time shares (fixed-time
/// schemes); the frame multiplier is then dropped from the dual vector.
#[derive(Debug, Clone)]
pub struct DualProblem<'a> {
    pub scenario: &'a Scenario,
    pub channel: &'a Channel,
    pub mode: ObjectiveKind,
    /// `alpha_k * w_k` (user-centric) or `w_k` (network-centric).
    pub log_weight: Vec<f64>,
    /// Cost per joule for each user: `alpha_k * beta_k` or the ratio `q`.
    pub energy_cost: Vec<f64>,
    pub fixed_tau: Option<Vec<f64>>,
    h_flat: Vec<f64>,
}

impl<'a> DualProblem<'a> {
    pub fn user_centric(
        scenario: &'a Scenario,
        channel: &'a Channel,
        alpha: &[f64],
        beta: &[f64],
        fixed_tau: Option<Vec<f64>>,
    ) -> DualProblem<'a> {
        let log_weight = alpha
            .iter()
            .zip(&scenario.weights)
            .map(|(a, w)| a * w)
            .collect();
        let energy_cost = alpha.iter().zip(beta).map(|(a, b)| a * b).collect();
        DualProblem::build(scenario, channel, ObjectiveKind::UserCentric, log_weight, energy_cost, fixed_tau)
    }

    pub fn network_centric(
        scenario: &'a Scenario,
        channel: &'a Channel,
        q: f64,
        fixed_tau: Option<Vec<f64>>,
    ) -> DualProblem<'a> {
        DualProblem::build(
            scenario,
            channel,
            ObjectiveKind::NetworkCentric,
            scenario.weights.clone(),
            vec![q; scenario.num_users],
            fixed_tau,
        )
    }

    fn build(
        scenario: &'a Scenario,
        channel: &'a Channel,
        mode: ObjectiveKind,
        log_weight: Vec<f64>,
        energy_cost: Vec<f64>,
        fixed_tau: Option<Vec<f64>>,
    ) -> DualProblem<'a> {
        let n = scenario.num_ports;
        let kk = scenario.num_users;
        let mut h_flat = vec![0.0; n * kk];
        for i in 0..n {
            h_flat[i * kk..(i + 1) * kk].copy_from_slice(&channel.h[i]);
        }
        DualProblem {
            scenario,
            channel,
            mode,
            log_weight,
            energy_cost,
            fixed_tau,
            h_flat,
        }
    }

    pub fn num_ports(&self) -> usize {
        self.scenario.num_ports
    }

    pub fn num_users(&self) -> usize {
        self.scenario.num_users
    }

    pub fn has_lambda(&self) -> bool {
        self.fixed_tau.is_none()
    }

    /// Dimension of the packed dual vector.
    pub fn dim(&self) -> usize {
        self.num_users() + self.num_ports() * self.num_users() + usize::from(self.has_lambda())
    }

    pub fn pack(&self, d: &DualState) -> Vec<f64> {
        let mut z = Vec::with_capacity(self.dim());
        z.extend_from_slice(&d.mu);
        z.extend_from_slice(&d.upsilon);
        if self.has_lambda() {
            z.push(d.lambda);
        }
        z
    }

    pub fn unpack(&self, z: &[f64]) -> DualState {
        let kk = self.num_users();
        let nk = self.num_ports() * kk;
        debug_assert_eq!(z.len(), self.dim());
        DualState {
            mu: z[..kk].to_vec(),
            upsilon: z[kk..kk + nk].to_vec(),
            lambda: if self.has_lambda() { z[kk + nk] } else { 0.0 },
        }
    }

    /// Resolves the per-coordinate linear coefficients at a dual point.
    pub fn offsets(&self, duals: &DualState) -> LinearOffsets {
        let n = self.num_ports();
        let kk = self.num_users();
        let sc = self.scenario;
        let zeta = sc.conversion_eff;

        let mut tau_coef = vec![0.0; kk];
        for k in 0..kk {
            let mut cap_ups = 0.0;
            for i in 0..n {
                cap_ups += sc.power_cap[i] * duals.upsilon[i * kk + k];
            }
            tau_coef[k] = cap_ups - self.energy_cost[k] * sc.circuit_power[k] - duals.lambda;
        }

        let mut s_coef = vec![0.0; n * kk];
        for i in 0..n {
            // zeta * sum_k' mu_k' h[i][k'] once per port, then exclude own user.
            let mut all = 0.0;
            for k2 in 0..kk {
                all += duals.mu[k2] * self.h_flat[i * kk + k2];
            }
            for k in 0..kk {
                let idx = i * kk + k;
                s_coef[idx] = zeta * (all - duals.mu[k] * self.h_flat[idx])
                    - self.energy_cost[k]
                    - duals.upsilon[idx];
            }
        }

        let dual_const = duals.lambda
            - duals
                .mu
                .iter()
                .zip(&sc.energy_req)
                .map(|(m, e)| m * e)
                .sum::<f64>();
        LinearOffsets {
            mode: self.mode,
            log_weight: self.log_weight.clone(),
            tau_coef,
            s_coef,
            dual_const,
        }
    }
}

/// Closed-form maximizer of the Lagrangian over one user's time share,
/// clipped to `[0, 1]`. Returns 0 when the user carries no energy or when
/// the linear coefficient is positive (the stated case split).
pub fn tau_update(
    k: usize,
    s_col: &[f64],
    h_col: &[f64],
    offsets: &LinearOffsets,
    noise_power: f64,
) -> Result<f64> {
    let h_dot_s = model::dot(h_col, s_col);
    tau_update_raw(
        h_dot_s,
        offsets.log_weight[k],
        offsets.tau_coef[k],
        noise_power,
    )
}

#[inline]
fn tau_update_raw(h_dot_s: f64, log_weight: f64, tau_coef: f64, noise_power: f64) -> Result<f64> {
    if h_dot_s <= 0.0 {
        return Ok(0.0);
    }
    if tau_coef > 0.0 {
        return Ok(0.0);
    }
    if log_weight <= 0.0 {
        return Ok(0.0);
    }
    let a = tau_coef / log_weight; // <= 0
    if a == 0.0 {
        // Derivative stays positive for every finite time share.
        return Ok(1.0);
    }
    // Stationarity in the SNR variable x = h.s / (noise * tau):
    // ln(1+x) - x/(1+x) = -a, solved by the principal Lambert branch.
    let w = lambert_w0(-(a - 1.0).exp())?;
    let x = (w + 1.0 - a).exp() - 1.0;
    if !(x > 0.0) || !x.is_finite() {
        return Ok(if x.is_finite() { 1.0 } else { 0.0 });
    }
    Ok((h_dot_s / (noise_power * x)).clamp(0.0, 1.0))
}

/// Coordinate maximizer for one energy entry. `rest` callers pass the
/// current column state; the positive-slope case is pushed to the box
/// bound so iterates stay bounded (the dual cut then restores a negative
/// coefficient).
pub fn s_update(
    i: usize,
    k: usize,
    s: &[f64],
    tau_k: f64,
    channel: &Channel,
    offsets: &LinearOffsets,
    noise_power: f64,
    power_cap_i: f64,
) -> f64 {
    let kk = channel.num_users();
    let h_ik = channel.h[i][k];
    let mut rest = tau_k * noise_power;
    for (j, hrow) in channel.h.iter().enumerate() {
        if j != i {
            rest += hrow[k] * s[j * kk + k];
        }
    }
    s_update_raw(
        h_ik,
        rest,
        tau_k,
        offsets.log_weight[k],
        offsets.s_coef[i * kk + k],
        power_cap_i * tau_k,
    )
}

#[inline]
fn s_update_raw(
    h_ik: f64,
    rest: f64,
    tau_k: f64,
    log_weight: f64,
    s_coef: f64,
    box_bound: f64,
) -> f64 {
    if tau_k <= 0.0 {
        return 0.0;
    }
    if s_coef >= 0.0 {
        return box_bound;
    }
    if h_ik <= 0.0 {
        return 0.0;
    }
    (-log_weight * tau_k / s_coef - rest / h_ik).max(0.0)
}

/// Full Lagrangian value at an allocation, including the dual constants.
pub fn lagrangian_value(
    prob: &DualProblem,
    offsets: &LinearOffsets,
    tau: &[f64],
    s_flat: &[f64],
) -> f64 {
    let n = prob.num_ports();
    let kk = prob.num_users();
    let noise = prob.scenario.noise_power;
    let mut total = offsets.dual_const;
    for k in 0..kk {
        let mut h_dot_s = 0.0;
        for i in 0..n {
            h_dot_s += prob.h_flat[i * kk + k] * s_flat[i * kk + k];
        }
        total += offsets.log_weight[k] * rate_unchecked(tau[k], h_dot_s, noise)
            + offsets.tau_coef[k] * tau[k];
    }
    total += model::dot(&offsets.s_coef, s_flat);
    total
}

/// Analytic partial derivative of the Lagrangian in one time share.
pub fn dl_dtau(
    prob: &DualProblem,
    offsets: &LinearOffsets,
    k: usize,
    tau_k: f64,
    s_flat: &[f64],
) -> f64 {
    let kk = prob.num_users();
    let h_dot_s: f64 = (0..prob.num_ports())
        .map(|i| prob.h_flat[i * kk + k] * s_flat[i * kk + k])
        .sum();
    let x = h_dot_s / (prob.scenario.noise_power * tau_k);
    offsets.log_weight[k] * (x.ln_1p() - x / (1.0 + x)) + offsets.tau_coef[k]
}

/// Analytic second derivative in one time share (always nonpositive).
pub fn d2l_dtau2(
    prob: &DualProblem,
    offsets: &LinearOffsets,
    k: usize,
    tau_k: f64,
    s_flat: &[f64],
) -> f64 {
    let kk = prob.num_users();
    let h_dot_s: f64 = (0..prob.num_ports())
        .map(|i| prob.h_flat[i * kk + k] * s_flat[i * kk + k])
        .sum();
    let noise = prob.scenario.noise_power;
    -offsets.log_weight[k] * h_dot_s * h_dot_s
        / (tau_k * (tau_k * noise + h_dot_s).powi(2))
}

/// Analytic partial derivative of the Lagrangian in one energy entry.
pub fn dl_ds(
    prob: &DualProblem,
    offsets: &LinearOffsets,
    i: usize,
    k: usize,
    tau: &[f64],
    s_flat: &[f64],
) -> f64 {
    let kk = prob.num_users();
    let mut denom = tau[k] * prob.scenario.noise_power;
    for j in 0..prob.num_ports() {
        denom += prob.h_flat[j * kk + k] * s_flat[j * kk + k];
    }
    offsets.log_weight[k] * tau[k] * prob.h_flat[i * kk + k] / denom
        + offsets.s_coef[i * kk + k]
}

/// The subtractive objective (Lagrangian without multiplier terms).
pub fn subtractive_value(prob: &DualProblem, tau: &[f64], s_flat: &[f64]) -> f64 {
    let n = prob.num_ports();
    let kk = prob.num_users();
    let noise = prob.scenario.noise_power;
    let mut total = 0.0;
    for k in 0..kk {
        let mut h_dot_s = 0.0;
        let mut s_sum = 0.0;
        for i in 0..n {
            h_dot_s += prob.h_flat[i * kk + k] * s_flat[i * kk + k];
            s_sum += s_flat[i * kk + k];
        }
        total += prob.log_weight[k] * rate_unchecked(tau[k], h_dot_s, noise)
            - prob.energy_cost[k] * (s_sum + tau[k] * prob.scenario.circuit_power[k]);
    }
    total
}

#[derive(Debug, Clone)]
pub struct InnerConfig {
    pub tol_abs: f64,
    pub tol_rel: f64,
    pub max_passes: usize,
}

impl Default for InnerConfig {
    fn default() -> Self {
        InnerConfig {
            tol_abs: 1e-9,
            tol_rel: 1e-7,
            max_passes: 500,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BcdOutcome {
    pub tau: Vec<f64>,
    pub s: Vec<f64>,
    pub value: f64,
    pub passes: usize,
}

/// Block-coordinate ascent: a full time-share sweep followed by one cyclic
/// sweep over the energy entries per pass, until the Lagrangian improvement
/// falls below tolerance. The value trace is nondecreasing up to round-off
/// whenever every energy coefficient is negative (the generic case).
pub fn bcd_maximize(
    prob: &DualProblem,
    offsets: &LinearOffsets,
    init_tau: &[f64],
    init_s: &[f64],
    cfg: &InnerConfig,
) -> Result<BcdOutcome> {
    let n = prob.num_ports();
    let kk = prob.num_users();
    let noise = prob.scenario.noise_power;
    let caps = &prob.scenario.power_cap;

    let mut tau = match &prob.fixed_tau {
        Some(t) => t.clone(),
        None => init_tau.to_vec(),
    };
    let mut s = init_s.to_vec();
    let mut col_dot = vec![0.0; kk];
    for k in 0..kk {
        for i in 0..n {
            col_dot[k] += prob.h_flat[i * kk + k] * s[i * kk + k];
        }
    }

    let mut prev = lagrangian_value(prob, offsets, &tau, &s);
    for pass in 1..=cfg.max_passes {
        if prob.fixed_tau.is_none() {
            for k in 0..kk {
                tau[k] = tau_update_raw(
                    col_dot[k],
                    offsets.log_weight[k],
                    offsets.tau_coef[k],
                    noise,
                )?;
            }
        }
        for i in 0..n {
            let base = i * kk;
            for k in 0..kk {
                let idx = base + k;
                let h_ik = prob.h_flat[idx];
                let old = s[idx];
                let rest = tau[k] * noise + (col_dot[k] - h_ik * old);
                let new = s_update_raw(
                    h_ik,
                    rest.max(0.0),
                    tau[k],
                    offsets.log_weight[k],
                    offsets.s_coef[idx],
                    caps[i] * tau[k],
                );
                if new != old {
                    s[idx] = new;
                    col_dot[k] += h_ik * (new - old);
                }
            }
        }
        let value = lagrangian_value(prob, offsets, &tau, &s);
        let gain = value - prev;
        prev = value;
        if gain < cfg.tol_abs.max(cfg.tol_rel * value.abs()) {
            return Ok(BcdOutcome {
                tau,
                s,
                value,
                passes: pass,
            });
        }
    }
    Err(Error::BcdStalled {
        passes: cfg.max_passes,
        last_value: prev,
        last_tau: tau,
        last_s: s,
    })
}

/// Exact maximizer of one user's Lagrangian block. The block is
/// separable from the other users once the multipliers are fixed, and
/// equals `tau * (lw*ln(1 + sum_i h_i p_i / noise) + sum_i c_i p_i + a)`
/// in per-unit-time powers `p = s / tau`; among power vectors with a given
/// channel-weighted sum, the one concentrating on the best `c_i/h_i` port
/// wins, leaving a one-dimensional problem with a closed-form root.
///
/// Returns `(block value, tau, s_col)`. Requires every `c_i <= 0`; ports
/// at the boundary `c_i = 0` are capped at a large finite energy.
fn exact_block_maximize(
    lw: f64,
    a: f64,
    h_col: &[f64],
    c_col: &[f64],
    noise: f64,
    fixed_tau: Option<f64>,
) -> (f64, f64, Vec<f64>) {
    let n = h_col.len();
    let tau_scale = fixed_tau.unwrap_or(1.0);
    let sigma = noise * tau_scale;
    const U_CAP: f64 = 1e15;

    // Best single-port interior optimum of lw*ln(1+u/sigma) + (c/h)*u.
    let mut best = (0.0f64, usize::MAX, 0.0f64); // (phi, port, u)
    if lw > 0.0 {
        for i in 0..n {
            let (h, c) = (h_col[i], c_col[i]);
            if h <= 0.0 {
                continue;
            }
            let u = if c < 0.0 {
                (-lw * tau_scale * h / c - sigma).min(U_CAP)
            } else {
                U_CAP
            };
            if u <= 0.0 {
                continue;
            }
            let phi = lw * tau_scale * (u / sigma).ln_1p() + c * u / h;
            if phi > best.0 {
                best = (phi, i, u);
            }
        }
    }
    let block = best.0 + a * tau_scale;
    let mut s_col = vec![0.0; n];
    match fixed_tau {
        Some(t) => {
            // Time share pinned: take the energy maximizer regardless of
            // the block sign (the a*tau term is a constant).
            if best.1 != usize::MAX {
                s_col[best.1] = best.2 / h_col[best.1];
            }
            (block, t, s_col)
        }
        None => {
            // Linear in tau over [0, 1]: all or nothing.
            if block > 0.0 {
                if best.1 != usize::MAX {
                    s_col[best.1] = best.2 / h_col[best.1];
                }
                (block, 1.0, s_col)
            } else {
                (0.0, 0.0, s_col)
            }
        }
    }
}

/// Exact evaluation of the dual function at fixed multipliers, with a
/// maximizer. Requires every energy coefficient nonpositive (enforced by
/// the feasibility cuts in the dual loop).
pub fn exact_inner_maximize(
    prob: &DualProblem,
    offsets: &LinearOffsets,
) -> (f64, Vec<f64>, Vec<f64>) {
    let n = prob.num_ports();
    let kk = prob.num_users();
    let noise = prob.scenario.noise_power;
    let mut tau = vec![0.0; kk];
    let mut s = vec![0.0; n * kk];
    let mut value = offsets.dual_const;
    for k in 0..kk {
        let h_col: Vec<f64> = (0..n).map(|i| prob.h_flat[i * kk + k]).collect();
        let c_col: Vec<f64> = (0..n).map(|i| offsets.s_coef[i * kk + k]).collect();
        let fixed = prob.fixed_tau.as_ref().map(|t| t[k]);
        let (block, t, s_col) = exact_block_maximize(
            offsets.log_weight[k],
            offsets.tau_coef[k],
            &h_col,
            &c_col,
            noise,
            fixed,
        );
        value += block;
        tau[k] = t;
        for i in 0..n {
            s[i * kk + k] = s_col[i];
        }
    }
    (value, tau, s)
}

/// Constraint residuals at an allocation, packed in dual-vector order:
/// harvested-energy slacks, box slacks (port-major), then the frame slack
/// (when time shares are free). This is a subgradient of the dual function
/// when the allocation maximizes the Lagrangian.
pub fn dual_subgradient(
    scenario: &Scenario,
    channel: &Channel,
    tau: &[f64],
    s_flat: &[f64],
    has_lambda: bool,
) -> Vec<f64> {
    let n = scenario.num_ports;
    let kk = scenario.num_users;
    let mut g = Vec::with_capacity(kk + n * kk + usize::from(has_lambda));
    for k in 0..kk {
        let mut harvest = 0.0;
        for i in 0..n {
            let mut others = 0.0;
            for k2 in 0..kk {
                if k2 != k {
                    others += s_flat[i * kk + k2];
                }
            }
            harvest += channel.h[i][k] * others;
        }
        g.push(scenario.conversion_eff * harvest - scenario.energy_req[k]);
    }
    for i in 0..n {
        for k in 0..kk {
            g.push(scenario.power_cap[i] * tau[k] - s_flat[i * kk + k]);
        }
    }
    if has_lambda {
        g.push(1.0 - tau.iter().sum::<f64>());
    }
    g
}

#[derive(Debug, Clone)]
pub struct DualSolveConfig {
    pub inner: InnerConfig,
    /// Ellipsoid stopping threshold on `sqrt(g' A g)`.
    pub tol: f64,
    pub max_iters_per_dim: usize,
    /// Base radius factor; per-coordinate radii divide it by the residual
    /// scale of the matching constraint.
    pub radius_factor: f64,
    /// Radius shrink applied when warm-started from a previous solution.
    pub warm_radius_frac: f64,
    pub max_restarts: usize,
}

impl Default for DualSolveConfig {
    fn default() -> Self {
        DualSolveConfig {
            inner: InnerConfig::default(),
            tol: 1e-6,
            max_iters_per_dim: 2000,
            radius_factor: 10.0,
            warm_radius_frac: 0.1,
            max_restarts: 3,
        }
    }
}

/// Carry-over between consecutive dual solves of one outer iteration.
#[derive(Debug, Clone, Default)]
pub struct DualWarm {
    pub duals: Option<Vec<f64>>,
    pub tau: Option<Vec<f64>>,
    pub s: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct DualSolution {
    pub duals: DualState,
    /// Inner maximizer at the returned multipliers.
    pub tau: Vec<f64>,
    pub s: Vec<f64>,
    pub dual_value: f64,
    pub ellipsoid_iters: usize,
    pub converged: bool,
}

fn base_radii(prob: &DualProblem, factor: f64) -> Vec<f64> {
    let sc = prob.scenario;
    let n = prob.num_ports();
    let kk = prob.num_users();
    let w_max = sc.weights.iter().cloned().fold(0.0, f64::max).max(1e-12);
    let pc_min = sc
        .circuit_power
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
        .max(1e-3);
    let base = factor * (w_max / pc_min).max(1.0);
    let mut radii = Vec::with_capacity(prob.dim());
    for k in 0..kk {
        // Scale of the harvest residual for user k.
        let full: f64 = (0..n)
            .map(|i| prob.h_flat[i * kk + k] * sc.power_cap[i])
            .sum();
        let scale = (sc.conversion_eff * full / kk as f64)
            .max(sc.energy_req[k])
            .max(1e-12);
        radii.push(base / scale);
    }
    for i in 0..n {
        let scale = (sc.power_cap[i] / kk as f64).max(1e-12);
        for _ in 0..kk {
            radii.push(base / scale);
        }
    }
    if prob.has_lambda() {
        radii.push(base);
    }
    radii
}

/// Minimizes the dual function over the nonnegative multipliers. Restarts
/// with doubled radii when the optimum lands on the initial shell.
pub fn solve_dual(
    prob: &DualProblem,
    cfg: &DualSolveConfig,
    warm: &DualWarm,
) -> Result<DualSolution> {
    solve_dual_traced(prob, cfg, warm, None)
}

/// `solve_dual` with an optional per-iteration trace
/// `(ellipsoid iteration, dual value, sqrt(g'Ag))`.
pub fn solve_dual_traced(
    prob: &DualProblem,
    cfg: &DualSolveConfig,
    warm: &DualWarm,
    mut trace: Option<&mut dyn FnMut(usize, f64, f64)>,
) -> Result<DualSolution> {
    let dim = prob.dim();

    let mut best: Option<(f64, Vec<f64>, Vec<f64>, Vec<f64>)> = None; // value, duals, tau, s
    let mut total_iters = 0usize;
    #[allow(unused_assignments)]
    let mut converged = false;

    let (center0, radii0) = match &warm.duals {
        Some(z) => (
            z.clone(),
            base_radii(prob, cfg.radius_factor * cfg.warm_radius_frac),
        ),
        None => (vec![1e-3; dim], base_radii(prob, cfg.radius_factor)),
    };

    let mut attempt = 0usize;
    loop {
        let scale = (1 << attempt) as f64;
        let radii: Vec<f64> = radii0.iter().map(|r| r * scale).collect();
        let ell_cfg = EllipsoidConfig {
            tol: cfg.tol,
            max_iters: cfg.max_iters_per_dim * dim,
            center: center0.clone(),
            radii,
        };
        let mut eval = |z: &[f64]| -> Result<(f64, Vec<f64>)> {
            let duals = prob.unpack(z);
            let offsets = prob.offsets(&duals);
            let (value, tau, s) = exact_inner_maximize(prob, &offsets);
            let g = dual_subgradient(prob.scenario, prob.channel, &tau, &s, prob.has_lambda());
            if best.as_ref().map_or(true, |(bv, ..)| value < *bv) {
                best = Some((value, z.to_vec(), tau.clone(), s.clone()));
            }
            Ok((value, g))
        };
        // The dual is finite only where every linear energy coefficient is
        // nonpositive; those coefficients are linear in the multipliers, so
        // violated ones become cuts.
        let mut oracle = |z: &[f64]| coef_feasibility_cut(prob, z);
        let result = match trace.as_deref_mut() {
            Some(t) => {
                let mut shim = |i: usize, v: f64, g: f64| t(i, v, g);
                ellipsoid::minimize(&mut eval, Some(&mut oracle), &ell_cfg, Some(&mut shim))
            }
            None => ellipsoid::minimize(&mut eval, Some(&mut oracle), &ell_cfg, None),
        };
        match result {
            Ok(outcome) => {
                total_iters += outcome.iterations;
                converged = outcome.converged;
                if !outcome.hit_boundary || attempt >= cfg.max_restarts {
                    break;
                }
            }
            // Lost shape-matrix conditioning: retry on fresh geometry.
            Err(Error::EllipsoidNumerical { iters, .. }) if attempt < cfg.max_restarts => {
                total_iters += iters;
                converged = false;
            }
            Err(e) => return Err(e),
        }
        attempt += 1;
    }

    let (dual_value, z, tau, s) = best.ok_or_else(|| {
        Error::ConvergenceFailure("dual solve produced no feasible evaluation".into())
    })?;
    Ok(DualSolution {
        duals: prob.unpack(&z),
        tau,
        s,
        dual_value,
        ellipsoid_iters: total_iters,
        converged,
    })
}

/// Returns the most violated sign constraint on the Lagrangian's energy
/// coefficients at a packed dual point, as an ellipsoid cut. A positive
/// coefficient makes the inner maximization unbounded, so the dual optimum
/// always satisfies these rows.
fn coef_feasibility_cut(prob: &DualProblem, z: &[f64]) -> Option<(Vec<f64>, f64)> {
    let duals = prob.unpack(z);
    let offsets = prob.offsets(&duals);
    let n = prob.num_ports();
    let kk = prob.num_users();
    let dim = prob.dim();
    let zeta = prob.scenario.conversion_eff;

    let mut worst: Option<(f64, usize, usize)> = None; // violation, i, k
    for (idx, &c) in offsets.s_coef.iter().enumerate() {
        if c > 0.0 && worst.map_or(true, |(v, ..)| c > v) {
            worst = Some((c, idx / kk, idx % kk));
        }
    }
    let (violation, i, k) = worst?;
    let mut g = vec![0.0; dim];
    for k2 in 0..kk {
        if k2 != k {
            g[k2] = zeta * prob.h_flat[i * kk + k2];
        }
    }
    g[kk + i * kk + k] = -1.0;
    Some((g, violation))
}

/// Per-unit-slot-time description of one user's transmission pattern:
/// powers within the caps, decode rate, energy cost, and the energy it
/// feeds to every other user's harvester.
#[derive(Debug, Clone)]
struct UserProfile {
    power: Vec<f64>,
    rate: f64,
    cost: f64,
    feeds: Vec<f64>,
}

/// Box-constrained maximizer of `lw * ln(1 + sum h_i p_i / noise) +
/// sum c_i p_i` over `0 <= p <= cap`: ports are ranked by the SNR
/// threshold at which their marginal value crosses zero; better ports
/// saturate, one is fractional, the rest stay dark.
fn waterfill_powers(lw: f64, h: &[f64], c: &[f64], caps: &[f64], noise: f64) -> Vec<f64> {
    let n = h.len();
    let mut p = vec![0.0; n];
    let mut y = 0.0; // accumulated SNR sum h.p / noise
    for i in 0..n {
        if c[i] >= 0.0 {
            // Positive net value at any SNR.
            p[i] = caps[i];
            y += h[i] * caps[i] / noise;
        }
    }
    if lw <= 0.0 {
        return p;
    }
    // theta_i: the value of 1 + y where port i's marginal value vanishes.
    let mut order: Vec<(f64, usize)> = (0..n)
        .filter(|&i| c[i] < 0.0 && h[i] > 0.0)
        .map(|i| (lw * h[i] / (noise * (-c[i])), i))
        .collect();
    order.sort_by(|a, b| b.0.total_cmp(&a.0));
    for (theta, i) in order {
        if 1.0 + y >= theta {
            break; // this and all worse ports stay dark
        }
        let head = (theta - 1.0 - y) * noise / h[i];
        if head >= caps[i] {
            p[i] = caps[i];
            y += h[i] * caps[i] / noise;
        } else {
            p[i] = head;
            break;
        }
    }
    p
}

/// Profiles at the given multipliers: the per-user power pattern trades the
/// decode value against the energy cost net of the harvest credit
/// `zeta * sum_{k' != k} mu_k' h[i][k']`, with the port caps enforced
/// directly. Users whose pattern is dark fall back to the reserve pattern,
/// then to half power.
fn build_profiles(
    scenario: &Scenario,
    channel: &Channel,
    duals: &DualState,
    log_weight: &[f64],
    energy_cost: &[f64],
    reserve: &Allocation,
) -> Vec<UserProfile> {
    let n = scenario.num_ports;
    let kk = scenario.num_users;
    let zeta = scenario.conversion_eff;
    (0..kk)
        .map(|k| {
            let h_col: Vec<f64> = (0..n).map(|i| channel.h[i][k]).collect();
            let c_col: Vec<f64> = (0..n)
                .map(|i| {
                    let credit: f64 = (0..kk)
                        .filter(|&k2| k2 != k)
                        .map(|k2| duals.mu[k2] * channel.h[i][k2])
                        .sum();
                    zeta * credit - energy_cost[k]
                })
                .collect();
            let mut power = waterfill_powers(
                log_weight[k],
                &h_col,
                &c_col,
                &scenario.power_cap,
                scenario.noise_power,
            );
            if power.iter().sum::<f64>() <= 0.0 {
                power = if reserve.tau[k] > 1e-12 {
                    (0..n)
                        .map(|i| (reserve.s[i][k] / reserve.tau[k]).min(scenario.power_cap[i]))
                        .collect()
                } else {
                    scenario.power_cap.iter().map(|c| 0.5 * c).collect()
                };
            }
            let hp: f64 = (0..n).map(|i| h_col[i] * power[i]).sum();
            let rate = (hp / scenario.noise_power).ln_1p();
            let cost = power.iter().sum::<f64>() + scenario.circuit_power[k];
            let feeds = (0..kk)
                .map(|j| {
                    if j == k {
                        0.0
                    } else {
                        zeta * (0..n).map(|i| channel.h[i][j] * power[i]).sum::<f64>()
                    }
                })
                .collect();
            UserProfile {
                power,
                rate,
                cost,
                feeds,
            }
        })
        .collect()
}

/// Harvest-feasibility rows over the time shares for fixed profiles:
/// `sum_{k != j} feeds[j][k] * tau_k >= energy_req[j]`, `sum tau <= 1`.
fn profile_rows(scenario: &Scenario, profiles: &[UserProfile], extra_vars: usize) -> Vec<LpRow> {
    let kk = profiles.len();
    let mut rows = Vec::with_capacity(kk + 1);
    for j in 0..kk {
        let mut coeffs = vec![0.0; kk + extra_vars];
        for (k, prof) in profiles.iter().enumerate() {
            coeffs[k] = -prof.feeds[j];
        }
        rows.push(LpRow {
            coeffs,
            rhs: -scenario.energy_req[j],
        });
    }
    let mut coeffs = vec![0.0; kk + extra_vars];
    coeffs[..kk].fill(1.0);
    rows.push(LpRow { coeffs, rhs: 1.0 });
    rows
}

fn alloc_from_profiles(profiles: &[UserProfile], tau: Vec<f64>, n: usize) -> Allocation {
    let p: Vec<Vec<f64>> = (0..n)
        .map(|i| profiles.iter().map(|prof| prof.power[i]).collect())
        .collect();
    Allocation::from_power(tau, p)
}

/// What the recovered time shares should optimize.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RecoveryGoal {
    /// Any feasible shares; per-user efficiencies are scale-invariant.
    /// Prefers the smooth uniform stretch so consecutive recoveries of
    /// nearby profiles stay close, falling back to the max-min-slack
    /// program only when the uniform direction cannot satisfy the rows.
    UserCentric,
    /// Maximize `w.R - q * cost` over the shares (one linear program).
    SubtractiveAt(f64),
    /// Maximize the throughput-per-joule ratio over the shares (an exact
    /// ratio iteration over linear programs).
    BestRatio,
}

/// Primal recovery. Each user's Lagrangian block is 1-homogeneous in its
/// time share and energies, so near-optimal multipliers pin only the
/// per-user transmission pattern while the inner maximizer's scales are
/// arbitrary. The patterns are rebuilt from the multipliers with the caps
/// enforced, and the time shares are then re-optimized exactly.
pub fn recover_primal(
    scenario: &Scenario,
    channel: &Channel,
    duals: &DualState,
    log_weight: &[f64],
    energy_cost: &[f64],
    reserve: &Allocation,
    goal: RecoveryGoal,
) -> Allocation {
    let n = scenario.num_ports;
    let kk = scenario.num_users;
    let profiles = build_profiles(scenario, channel, duals, log_weight, energy_cost, reserve);
    let recovered = match goal {
        RecoveryGoal::UserCentric => {
            // Uniform stretch: tau = c/K with the smallest c satisfying the
            // harvest rows, placed halfway to the frame budget.
            let mut c_min = 0.0f64;
            let mut ok = true;
            for j in 0..kk {
                let d: f64 = (0..kk)
                    .filter(|&k| k != j)
                    .map(|k| profiles[k].feeds[j])
                    .sum::<f64>()
                    / kk as f64;
                if scenario.energy_req[j] > 0.0 {
                    if d > 0.0 {
                        c_min = c_min.max(scenario.energy_req[j] / d);
                    } else {
                        ok = false;
                    }
                }
            }
            if ok && c_min <= 1.0 {
                let c = 0.5 * (1.0 + c_min) * (1.0 + 1e-12);
                Some(alloc_from_profiles(
                    &profiles,
                    vec![c.min(1.0) / kk as f64; kk],
                    n,
                ))
            } else {
                // Max-min harvest slack over the shares, then distribute
                // the leftover frame (extra on-air time only adds harvest).
                let mut rows = profile_rows(scenario, &profiles, 2);
                let d_pos = kk;
                let d_neg = kk + 1;
                for row in rows.iter_mut().take(kk) {
                    row.coeffs[d_pos] = 1.0;
                    row.coeffs[d_neg] = -1.0;
                }
                let mut objective = vec![0.0; kk + 2];
                objective[d_pos] = 1.0;
                objective[d_neg] = -1.0;
                simplex::maximize(&LpProblem {
                    num_vars: kk + 2,
                    objective,
                    rows,
                })
                .ok()
                .filter(|sol| sol.value >= -1e-10)
                .map(|sol| {
                    let mut tau: Vec<f64> = sol.x[..kk].to_vec();
                    let slack = 1.0 - tau.iter().sum::<f64>();
                    if slack > 0.0 {
                        for t in tau.iter_mut() {
                            *t += slack / kk as f64;
                        }
                    }
                    alloc_from_profiles(&profiles, tau, n)
                })
            }
        }
        RecoveryGoal::SubtractiveAt(q) => {
            let rows = profile_rows(scenario, &profiles, 0);
            let objective: Vec<f64> = (0..kk)
                .map(|k| scenario.weights[k] * profiles[k].rate - q * profiles[k].cost)
                .collect();
            simplex::maximize(&LpProblem {
                num_vars: kk,
                objective,
                rows,
            })
            .ok()
            .map(|sol| alloc_from_profiles(&profiles, sol.x[..kk].to_vec(), n))
        }
        RecoveryGoal::BestRatio => {
            let rows = profile_rows(scenario, &profiles, 0);
            let mut q = model::network_ee(reserve, channel, scenario).unwrap_or(0.0);
            let mut best: Option<Vec<f64>> = None;
            for _ in 0..40 {
                let objective: Vec<f64> = (0..kk)
                    .map(|k| scenario.weights[k] * profiles[k].rate - q * profiles[k].cost)
                    .collect();
                let Ok(sol) = simplex::maximize(&LpProblem {
                    num_vars: kk,
                    objective,
                    rows: rows.clone(),
                }) else {
                    break;
                };
                let num: f64 = (0..kk)
                    .map(|k| scenario.weights[k] * profiles[k].rate * sol.x[k])
                    .sum();
                let den: f64 = (0..kk).map(|k| profiles[k].cost * sol.x[k]).sum();
                if den > 0.0 && num / den > q * (1.0 + 1e-14) {
                    q = num / den;
                    best = Some(sol.x.clone());
                } else {
                    if best.is_none() && den > 0.0 {
                        best = Some(sol.x.clone());
                    }
                    break;
                }
            }
            best.map(|tau| alloc_from_profiles(&profiles, tau, n))
        }
    };
    // Directions unable to satisfy the requirements fall back to the
    // strictly feasible reserve.
    recovered.unwrap_or_else(|| reserve.clone())
}

/// Clips an allocation onto the box and, when the minimum-harvest or frame
/// rows are violated, blends it toward a strictly feasible point. Every
/// constraint is affine, so the blend restores feasibility while moving the
/// objective only marginally.
pub fn polish_feasible(
    scenario: &Scenario,
    channel: &Channel,
    tau: &[f64],
    s_flat: &[f64],
    reserve: &Allocation,
) -> Allocation {
    let n = scenario.num_ports;
    let kk = scenario.num_users;
    let mut tau = tau.to_vec();
    for t in tau.iter_mut() {
        *t = t.clamp(0.0, 1.0);
    }
    let mut s = vec![vec![0.0; kk]; n];
    for i in 0..n {
        for k in 0..kk {
            s[i][k] = s_flat[i * kk + k]
                .max(0.0)
                .min(scenario.power_cap[i] * tau[k]);
        }
    }

    let mut t_need = 0.0f64;
    let tau_sum: f64 = tau.iter().sum();
    let reserve_sum: f64 = reserve.tau.iter().sum();
    if tau_sum > 1.0 && tau_sum > reserve_sum {
        t_need = t_need.max((tau_sum - 1.0) / (tau_sum - reserve_sum));
    }
    for k in 0..kk {
        let e = model::harvested_energy(k, &s, channel, scenario.conversion_eff)
            .unwrap_or(0.0);
        let req = scenario.energy_req[k];
        if e < req {
            let e_res = model::harvested_energy(k, &reserve.s, channel, scenario.conversion_eff)
                .unwrap_or(0.0);
            if e_res > e {
                t_need = t_need.max((req - e) / (e_res - e));
            } else {
                t_need = 1.0; // reserve cannot help; fall back to it wholesale
            }
        }
    }
    if t_need > 0.0 {
        let t = (t_need * (1.0 + 1e-9) + 1e-12).min(1.0);
        for k in 0..kk {
            tau[k] = (1.0 - t) * tau[k] + t * reserve.tau[k];
        }
        for i in 0..n {
            for k in 0..kk {
                s[i][k] = ((1.0 - t) * s[i][k] + t * reserve.s[i][k])
                    .min(scenario.power_cap[i] * tau[k]);
            }
        }
    }
    Allocation::from_energy(tau, s)
}

pub(crate) fn flatten(m: &[Vec<f64>]) -> Vec<f64> {
    m.iter().flatten().copied().collect()
}

pub(crate) fn unflatten(flat: &[f64], rows: usize, cols: usize) -> Vec<Vec<f64>> {
    (0..rows)
        .map(|i| flat[i * cols..(i + 1) * cols].to_vec())
        .collect()
}
