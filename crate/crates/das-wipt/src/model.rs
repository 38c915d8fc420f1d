//! Problem instances and physical-layer formulas.
//!
//! A [`Scenario`] is a static downlink instance: port/user geometry, power
//! and energy limits, weights, noise, and RF-to-DC conversion efficiency.
//! A [`Channel`] holds the nonnegative channel power gains `h[i][k]` between
//! port `i` and user `k`. An [`Allocation`] carries the time shares `tau`,
//! the energy variables `s[i][k] = tau[k] * p[i][k]`, and the recovered
//! transmit powers `p`.
//!
//! Conventions: the frame length is normalized to 1 so energies equal
//! average powers numerically, rates are in nats (natural log), and a time
//! share of zero contributes zero rate and zero per-user efficiency.

use crate::error::{Error, Result};
use crate::simplex::{self, LpProblem, LpRow};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Users landing on top of a port are clamped to this distance in meters,
/// keeping the pathloss law finite.
pub const MIN_DISTANCE_M: f64 = 0.5;

/// Scalar broadcast over users/ports, or an explicit per-element vector.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Broadcast {
    Scalar(f64),
    Vector(Vec<f64>),
}

impl Broadcast {
    pub fn materialize(&self, n: usize, name: &str) -> Result<Vec<f64>> {
        match self {
            Broadcast::Scalar(v) => Ok(vec![*v; n]),
            Broadcast::Vector(v) => {
                if v.len() == n {
                    Ok(v.clone())
                } else {
                    Err(Error::InvalidConfig(format!(
                        "{name} has {} entries, expected {n}",
                        v.len()
                    )))
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PortLayout {
    /// Deterministic ceil(sqrt(N)) x ceil(sqrt(N)) lattice of sub-square
    /// centers; the first N cells in row-major order are used.
    Lattice,
    /// Ports drawn uniformly at random over the area.
    Random,
}

/// Table-style generation parameters. All fields have simulation defaults;
/// partial JSON documents deserialize against them.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioParams {
    pub num_ports: usize,
    pub num_users: usize,
    /// Side of the square deployment area in meters.
    pub side_length: f64,
    /// Receiver noise power in watts.
    pub noise_power: f64,
    /// Channel gain at the 1 m reference distance.
    pub pathloss_const: f64,
    pub pathloss_exp: f64,
    /// RF-to-DC conversion efficiency, in (0, 1].
    pub conversion_eff: f64,
    /// Per-user circuit power in watts.
    pub circuit_power: Broadcast,
    /// Per-user efficiency weights.
    pub weights: Broadcast,
    /// Per-port transmit power cap in watts.
    pub power_cap: Broadcast,
    /// Per-user minimum harvested energy per frame, in joules.
    pub energy_req: Broadcast,
    pub port_layout: PortLayout,
    /// Unit-mean exponential power fading when true; pure pathloss when
    /// false (deterministic tests).
    pub fading: bool,
}

impl Default for ScenarioParams {
    fn default() -> Self {
        ScenarioParams {
            num_ports: 7,
            num_users: 4,
            side_length: 10.0,
            noise_power: 10f64.powf(-13.4), // -104 dBm
            pathloss_const: 1e-3,
            pathloss_exp: 2.0,
            conversion_eff: 0.6,
            circuit_power: Broadcast::Scalar(0.5),
            weights: Broadcast::Scalar(1.0),
            power_cap: Broadcast::Scalar(6.0),
            energy_req: Broadcast::Scalar(1e-4),
            port_layout: PortLayout::Lattice,
            fading: true,
        }
    }
}

/// A static problem instance. Immutable after construction and safe to
/// share across threads; every operation on it is a pure function.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Scenario {
    pub num_ports: usize,
    pub num_users: usize,
    /// Port coordinates in meters.
    pub port_positions: Vec<(f64, f64)>,
    /// User coordinates in meters.
    pub user_positions: Vec<(f64, f64)>,
    /// Noise power in watts.
    pub noise_power: f64,
    pub pathloss_const: f64,
    pub pathloss_exp: f64,
    pub conversion_eff: f64,
    /// Per-user circuit power in watts.
    pub circuit_power: Vec<f64>,
    pub weights: Vec<f64>,
    /// Per-port power cap in watts.
    pub power_cap: Vec<f64>,
    /// Per-user minimum harvested energy in joules per frame.
    pub energy_req: Vec<f64>,
    /// Fixed at 1 (normalized frame).
    pub frame_length: f64,
    pub rng_seed: u64,
    /// Generation switch carried along so channel draws know whether to fade.
    #[serde(default = "default_true")]
    pub fading: bool,
}

fn default_true() -> bool {
    true
}

impl Scenario {
    /// Builds an instance from table-style parameters: a deterministic port
    /// layout (or seeded random placement) and i.i.d. uniform user positions.
    pub fn generate(params: &ScenarioParams, rng_seed: u64) -> Result<Scenario> {
        let n = params.num_ports;
        let k = params.num_users;
        if n < 1 {
            return Err(Error::InvalidConfig("num_ports must be >= 1".into()));
        }
        if k < 2 {
            return Err(Error::InvalidConfig(
                "num_users must be >= 2 (harvesting happens in other users' slots)".into(),
            ));
        }
        if !(params.side_length > 0.0) {
            return Err(Error::InvalidConfig("side_length must be > 0".into()));
        }
        let l = params.side_length;
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        let port_positions = match params.port_layout {
            PortLayout::Lattice => lattice_positions(n, l),
            PortLayout::Random => (0..n)
                .map(|_| (rng.random_range(0.0..l), rng.random_range(0.0..l)))
                .collect(),
        };
        let user_positions = (0..k)
            .map(|_| (rng.random_range(0.0..l), rng.random_range(0.0..l)))
            .collect();
        let scenario = Scenario {
            num_ports: n,
            num_users: k,
            port_positions,
            user_positions,
            noise_power: params.noise_power,
            pathloss_const: params.pathloss_const,
            pathloss_exp: params.pathloss_exp,
            conversion_eff: params.conversion_eff,
            circuit_power: params.circuit_power.materialize(k, "circuit_power")?,
            weights: params.weights.materialize(k, "weights")?,
            power_cap: params.power_cap.materialize(n, "power_cap")?,
            energy_req: params.energy_req.materialize(k, "energy_req")?,
            frame_length: 1.0,
            rng_seed,
            fading: params.fading,
        };
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.num_ports;
        let k = self.num_users;
        if n < 1 || k < 2 {
            return Err(Error::InvalidConfig(format!(
                "need num_ports >= 1 and num_users >= 2, got {n} and {k}"
            )));
        }
        if self.port_positions.len() != n || self.user_positions.len() != k {
            return Err(Error::InvalidConfig("position vector length mismatch".into()));
        }
        if !(self.noise_power > 0.0) {
            return Err(Error::InvalidConfig("noise_power must be > 0".into()));
        }
        if !(self.conversion_eff > 0.0 && self.conversion_eff <= 1.0) {
            return Err(Error::InvalidConfig("conversion_eff must lie in (0, 1]".into()));
        }
        if !(self.pathloss_const > 0.0) {
            return Err(Error::InvalidConfig("pathloss_const must be > 0".into()));
        }
        if self.frame_length != 1.0 {
            return Err(Error::InvalidConfig("frame_length is normalized to 1".into()));
        }
        let nonneg = |v: &[f64], len: usize, name: &str| -> Result<()> {
            if v.len() != len {
                return Err(Error::InvalidConfig(format!("{name} length mismatch")));
            }
            if v.iter().any(|x| !x.is_finite() || *x < 0.0) {
                return Err(Error::InvalidConfig(format!("{name} must be finite and >= 0")));
            }
            Ok(())
        };
        nonneg(&self.circuit_power, k, "circuit_power")?;
        nonneg(&self.weights, k, "weights")?;
        nonneg(&self.power_cap, n, "power_cap")?;
        nonneg(&self.energy_req, k, "energy_req")?;
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn from_json(doc: &str) -> Result<Scenario> {
        let s: Scenario =
            serde_json::from_str(doc).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }
}

fn lattice_positions(n: usize, l: f64) -> Vec<(f64, f64)> {
    let m = (n as f64).sqrt().ceil() as usize;
    let cell = l / m as f64;
    (0..n)
        .map(|idx| {
            let row = idx / m;
            let col = idx % m;
            ((col as f64 + 0.5) * cell, (row as f64 + 0.5) * cell)
        })
        .collect()
}

/// Channel power gains `h[i][k]` between port `i` and user `k`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Channel {
    pub h: Vec<Vec<f64>>,
}

impl Channel {
    /// Draws `h[i][k] = c * d^(-phi) * g` with `g` a unit-mean exponential
    /// fading power when the scenario enables fading, `g = 1` otherwise.
    pub fn generate(scenario: &Scenario, rng_seed: u64) -> Channel {
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        let h = scenario
            .port_positions
            .iter()
            .map(|&(px, py)| {
                scenario
                    .user_positions
                    .iter()
                    .map(|&(ux, uy)| {
                        let d = ((px - ux).powi(2) + (py - uy).powi(2))
                            .sqrt()
                            .max(MIN_DISTANCE_M);
                        let g = if scenario.fading {
                            let u: f64 = rng.random();
                            -(1.0 - u).ln()
                        } else {
                            1.0
                        };
                        scenario.pathloss_const * d.powf(-scenario.pathloss_exp) * g
                    })
                    .collect()
            })
            .collect();
        Channel { h }
    }

    /// Pure pathloss gains, convenient for deterministic tests.
    pub fn deterministic(scenario: &Scenario) -> Channel {
        let faded = Scenario {
            fading: false,
            ..scenario.clone()
        };
        Channel::generate(&faded, 0)
    }

    pub fn num_ports(&self) -> usize {
        self.h.len()
    }

    pub fn num_users(&self) -> usize {
        self.h.first().map_or(0, |r| r.len())
    }

    pub fn validate(&self, scenario: &Scenario) -> Result<()> {
        if self.num_ports() != scenario.num_ports
            || self.h.iter().any(|r| r.len() != scenario.num_users)
        {
            return Err(Error::InvalidConfig("channel dimensions mismatch".into()));
        }
        if self
            .h
            .iter()
            .flatten()
            .any(|&g| !g.is_finite() || g < 0.0)
        {
            return Err(Error::InvalidConfig("channel gains must be finite and >= 0".into()));
        }
        Ok(())
    }
}

/// Time shares, energy variables, and the powers recovered from them.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Allocation {
    pub tau: Vec<f64>,
    /// Energy sent from port `i` during user `k`'s slot, `s[i][k]`.
    pub s: Vec<Vec<f64>>,
    /// Transmit powers `p[i][k] = s[i][k] / tau[k]` (zero where `tau[k] = 0`).
    pub p: Vec<Vec<f64>>,
}

impl Allocation {
    pub fn from_energy(tau: Vec<f64>, s: Vec<Vec<f64>>) -> Allocation {
        let p = recover_power(&tau, &s);
        Allocation { tau, s, p }
    }

    pub fn from_power(tau: Vec<f64>, p: Vec<Vec<f64>>) -> Allocation {
        let s = p
            .iter()
            .map(|row| row.iter().zip(&tau).map(|(pv, t)| pv * t).collect())
            .collect();
        Allocation { tau, s, p }
    }

    pub fn zeros(num_ports: usize, num_users: usize) -> Allocation {
        Allocation {
            tau: vec![0.0; num_users],
            s: vec![vec![0.0; num_users]; num_ports],
            p: vec![vec![0.0; num_users]; num_ports],
        }
    }
}

/// Power recovery `p = s / tau` with the zero-slot convention `p = 0`.
pub fn recover_power(tau: &[f64], s: &[Vec<f64>]) -> Vec<Vec<f64>> {
    s.iter()
        .map(|row| {
            row.iter()
                .zip(tau)
                .map(|(sv, &t)| if t > 0.0 { sv / t } else { 0.0 })
                .collect()
        })
        .collect()
}

/// Achievable rate of one user in nats per unit bandwidth per frame:
/// `tau * ln(1 + sum_i h[i]*s[i] / (noise * tau))`, extended by continuity
/// to 0 at `tau = 0`.
pub fn rate(tau_k: f64, s_col: &[f64], h_col: &[f64], noise_power: f64) -> Result<f64> {
    if tau_k < 0.0 {
        return Err(Error::Domain(format!("negative time share {tau_k}")));
    }
    if !(noise_power > 0.0) {
        return Err(Error::Domain("noise power must be positive".into()));
    }
    if s_col.iter().any(|&v| v < 0.0) || h_col.iter().any(|&v| v < 0.0) {
        return Err(Error::Domain("negative energy or channel gain".into()));
    }
    Ok(rate_unchecked(tau_k, dot(h_col, s_col), noise_power))
}

/// Rate from the precomputed channel-energy dot product; inputs assumed valid.
#[inline]
pub(crate) fn rate_unchecked(tau_k: f64, h_dot_s: f64, noise_power: f64) -> f64 {
    if tau_k <= 0.0 || h_dot_s <= 0.0 {
        return 0.0;
    }
    let x = h_dot_s / (noise_power * tau_k);
    if x.is_finite() {
        tau_k * x.ln_1p()
    } else {
        // tau so small the SNR overflows: expand tau*ln(dot/(noise*tau)).
        tau_k * (h_dot_s.ln() - noise_power.ln() - tau_k.ln())
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Energy harvested by user `k` from every other user's slot:
/// `zeta * sum_i h[i][k] * sum_{k' != k} s[i][k']`.
pub fn harvested_energy(
    k: usize,
    s: &[Vec<f64>],
    channel: &Channel,
    conversion_eff: f64,
) -> Result<f64> {
    let num_users = channel.num_users();
    if k >= num_users {
        return Err(Error::IndexOutOfRange(format!(
            "user {k} of {num_users}"
        )));
    }
    if s.len() != channel.num_ports() || s.iter().any(|r| r.len() != num_users) {
        return Err(Error::IndexOutOfRange("energy matrix dimensions".into()));
    }
    let mut total = 0.0;
    for (row, hrow) in s.iter().zip(&channel.h) {
        let others: f64 = row
            .iter()
            .enumerate()
            .filter(|(kk, _)| *kk != k)
            .map(|(_, v)| v)
            .sum();
        total += hrow[k] * others;
    }
    Ok(conversion_eff * total)
}

/// Per-user rates, harvested energies, efficiencies, and the network
/// efficiency of an allocation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PerUserMetrics {
    /// Rates in nats/Hz per frame.
    pub rate: Vec<f64>,
    /// Harvested energies in joules.
    pub harvested: Vec<f64>,
    /// Per-user efficiencies in nats/Hz/joule; zero for unscheduled users.
    pub user_ee: Vec<f64>,
    /// Weighted throughput over total consumed energy, nats/Hz/joule.
    pub network_ee: f64,
}

pub fn metrics(alloc: &Allocation, channel: &Channel, scenario: &Scenario) -> Result<PerUserMetrics> {
    let n = scenario.num_ports;
    let kk = scenario.num_users;
    let mut rates = Vec::with_capacity(kk);
    let mut harvested = Vec::with_capacity(kk);
    let mut user_ee = Vec::with_capacity(kk);
    let mut weighted_rate = 0.0;
    let mut total_energy = 0.0;
    for k in 0..kk {
        let s_col: Vec<f64> = (0..n).map(|i| alloc.s[i][k]).collect();
        let h_col: Vec<f64> = (0..n).map(|i| channel.h[i][k]).collect();
        let r = rate(alloc.tau[k], &s_col, &h_col, scenario.noise_power)?;
        rates.push(r);
        harvested.push(harvested_energy(k, &alloc.s, channel, scenario.conversion_eff)?);
        let e_k: f64 = s_col.iter().sum::<f64>() + alloc.tau[k] * scenario.circuit_power[k];
        // Per-user efficiency in its time-free form, 0 when unscheduled.
        let eta = if alloc.tau[k] > 0.0 {
            let p_sum: f64 = (0..n).map(|i| alloc.p[i][k]).collect::<Vec<_>>().iter().sum();
            let hp = dot(&h_col, &(0..n).map(|i| alloc.p[i][k]).collect::<Vec<_>>());
            let num = (hp / scenario.noise_power).ln_1p();
            let den = p_sum + scenario.circuit_power[k];
            if den > 0.0 {
                num / den
            } else {
                0.0
            }
        } else {
            0.0
        };
        user_ee.push(eta);
        weighted_rate += scenario.weights[k] * r;
        total_energy += e_k;
    }
    let network_ee = if total_energy > 0.0 {
        weighted_rate / total_energy
    } else {
        0.0
    };
    Ok(PerUserMetrics {
        rate: rates,
        harvested,
        user_ee,
        network_ee,
    })
}

pub fn user_ee(alloc: &Allocation, channel: &Channel, scenario: &Scenario) -> Result<Vec<f64>> {
    Ok(metrics(alloc, channel, scenario)?.user_ee)
}

pub fn network_ee(alloc: &Allocation, channel: &Channel, scenario: &Scenario) -> Result<f64> {
    Ok(metrics(alloc, channel, scenario)?.network_ee)
}

/// Weighted sum of per-user efficiencies (the user-centric objective).
pub fn sum_weighted_user_ee(
    alloc: &Allocation,
    channel: &Channel,
    scenario: &Scenario,
) -> Result<f64> {
    let m = metrics(alloc, channel, scenario)?;
    Ok(dot(&scenario.weights, &m.user_ee))
}

/// Total consumed energy `sum_k (sum_i s[i][k] + tau[k] * p_c[k])`.
pub fn total_energy(alloc: &Allocation, scenario: &Scenario) -> f64 {
    let mut t = 0.0;
    for k in 0..scenario.num_users {
        let s_sum: f64 = alloc.s.iter().map(|row| row[k]).sum();
        t += s_sum + alloc.tau[k] * scenario.circuit_power[k];
    }
    t
}

/// Outcome of the max-min-slack feasibility program.
#[derive(Debug, Clone)]
pub struct FeasibilityReport {
    pub feasible: bool,
    /// Largest `delta` with every harvested energy at least `energy_req + delta`
    /// under the box and frame constraints.
    pub max_min_slack: f64,
    /// The allocation attaining the slack.
    pub allocation: Allocation,
}

/// Solves `max delta  s.t.  E_k(s) - energy_req[k] >= delta, 0 <= s <= tau * cap,
/// sum tau <= 1, 0 <= tau <= 1`. The instance is feasible iff `delta* >= 0`.
pub fn check_feasibility(scenario: &Scenario, channel: &Channel) -> Result<FeasibilityReport> {
    feasibility_lp(scenario, channel, None)
}

/// Same program with the time shares pinned (used by fixed-time schemes and
/// solver initialization).
pub fn feasibility_with_tau(
    scenario: &Scenario,
    channel: &Channel,
    tau: &[f64],
) -> Result<FeasibilityReport> {
    feasibility_lp(scenario, channel, Some(tau))
}

fn feasibility_lp(
    scenario: &Scenario,
    channel: &Channel,
    fixed_tau: Option<&[f64]>,
) -> Result<FeasibilityReport> {
    channel.validate(scenario)?;
    let n = scenario.num_ports;
    let kk = scenario.num_users;
    let zeta = scenario.conversion_eff;
    let num_tau = if fixed_tau.is_some() { 0 } else { kk };
    // Variables: s (n*kk, index i*kk + k), then tau (kk unless fixed),
    // then the split slack delta = d_pos - d_neg.
    let s_at = |i: usize, k: usize| i * kk + k;
    let tau_at = |k: usize| n * kk + k;
    let d_pos = n * kk + num_tau;
    let d_neg = d_pos + 1;
    let num_vars = d_neg + 1;

    let mut rows = Vec::new();
    for k in 0..kk {
        // delta - E_k(s) <= -energy_req[k]
        let mut c = vec![0.0; num_vars];
        for i in 0..n {
            for k2 in 0..kk {
                if k2 != k {
                    c[s_at(i, k2)] = -zeta * channel.h[i][k];
                }
            }
        }
        c[d_pos] = 1.0;
        c[d_neg] = -1.0;
        rows.push(LpRow {
            coeffs: c,
            rhs: -scenario.energy_req[k],
        });
    }
    for i in 0..n {
        for k in 0..kk {
            let mut c = vec![0.0; num_vars];
            c[s_at(i, k)] = 1.0;
            let rhs = match fixed_tau {
                Some(t) => scenario.power_cap[i] * t[k],
                None => {
                    c[tau_at(k)] = -scenario.power_cap[i];
                    0.0
                }
            };
            rows.push(LpRow { coeffs: c, rhs });
        }
    }
    if fixed_tau.is_none() {
        let mut c = vec![0.0; num_vars];
        for k in 0..kk {
            c[tau_at(k)] = 1.0;
        }
        rows.push(LpRow { coeffs: c, rhs: 1.0 });
    }

    let mut objective = vec![0.0; num_vars];
    objective[d_pos] = 1.0;
    objective[d_neg] = -1.0;
    let problem = LpProblem {
        num_vars,
        objective,
        rows,
    };
    let sol = simplex::maximize(&problem).map_err(|e| Error::Lp(e.to_string()))?;

    let tau: Vec<f64> = match fixed_tau {
        Some(t) => t.to_vec(),
        None => (0..kk).map(|k| sol.x[tau_at(k)].min(1.0)).collect(),
    };
    let mut s = vec![vec![0.0; kk]; n];
    for (i, row) in s.iter_mut().enumerate() {
        for (k, v) in row.iter_mut().enumerate() {
            // Clamp LP round-off onto the box.
            *v = sol.x[s_at(i, k)].min(scenario.power_cap[i] * tau[k]);
        }
    }
    let slack = sol.value;
    Ok(FeasibilityReport {
        feasible: slack >= -1e-10,
        max_min_slack: slack,
        allocation: Allocation::from_energy(tau, s),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

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
    fn defaults_match_simulation_table() {
        let s = Scenario::generate(&ScenarioParams::default(), 7).unwrap();
        assert_eq!(s.num_ports, 7);
        assert_eq!(s.num_users, 4);
        assert!((s.noise_power - 10f64.powf(-13.4)).abs() < 1e-20);
        assert_eq!(s.pathloss_const, 1e-3);
        assert_eq!(s.pathloss_exp, 2.0);
        assert_eq!(s.conversion_eff, 0.6);
        assert!(s.circuit_power.iter().all(|&p| p == 0.5));
        assert!(s.weights.iter().all(|&w| w == 1.0));
        assert_eq!(s.frame_length, 1.0);
    }

    #[test]
    fn degenerate_geometry_rejected() {
        let params = ScenarioParams {
            num_ports: 1,
            num_users: 2,
            side_length: 0.0,
            ..Default::default()
        };
        assert!(Scenario::generate(&params, 0).is_err());
        let params = ScenarioParams {
            num_users: 1,
            ..Default::default()
        };
        assert!(Scenario::generate(&params, 0).is_err());
    }

    #[test]
    fn same_seed_same_scenario() {
        let p = ScenarioParams {
            port_layout: PortLayout::Random,
            ..Default::default()
        };
        let a = Scenario::generate(&p, 42).unwrap();
        let b = Scenario::generate(&p, 42).unwrap();
        assert_eq!(a.to_json(), b.to_json());
        let c = Scenario::generate(&p, 43).unwrap();
        assert_ne!(a.user_positions, c.user_positions);
    }

    #[test]
    fn scenario_json_round_trip() {
        let s = Scenario::generate(&ScenarioParams::default(), 11).unwrap();
        let doc = s.to_json();
        for field in [
            "num_ports",
            "num_users",
            "port_positions",
            "user_positions",
            "noise_power",
            "pathloss_const",
            "pathloss_exp",
            "conversion_eff",
            "circuit_power",
            "weights",
            "power_cap",
            "energy_req",
            "frame_length",
            "rng_seed",
        ] {
            assert!(doc.contains(field), "missing {field}");
        }
        let back = Scenario::from_json(&doc).unwrap();
        assert_eq!(back.user_positions, s.user_positions);
        assert_eq!(back.rng_seed, s.rng_seed);
    }

    #[test]
    fn pathloss_reference_identities() {
        // A port and a user exactly 1 m apart, no fading.
        let mut sc = Scenario::generate(&desk_params(1, 2), 0).unwrap();
        sc.pathloss_const = 1e-3;
        sc.port_positions = vec![(0.0, 0.0)];
        sc.user_positions = vec![(1.0, 0.0), (0.0, 10.0)];
        sc.fading = false;
        let ch = Channel::generate(&sc, 0);
        assert!((ch.h[0][0] - 1e-3).abs() < 1e-15);
        assert!((ch.h[0][1] - 1e-5).abs() < 1e-18);
    }

    #[test]
    fn fading_mean_matches_pathloss() {
        let mut sc = Scenario::generate(&desk_params(1, 2), 0).unwrap();
        sc.port_positions = vec![(0.0, 0.0)];
        sc.user_positions = vec![(2.0, 0.0), (0.0, 3.0)];
        let expected = sc.pathloss_const * 2.0f64.powf(-sc.pathloss_exp);
        let mut mean = 0.0;
        let trials = 100_000;
        for seed in 0..trials {
            let ch = Channel::generate(&sc, seed);
            mean += ch.h[0][0];
        }
        mean /= trials as f64;
        assert!(
            (mean - expected).abs() <= 0.02 * expected,
            "mean {mean:e} expected {expected:e}"
        );
    }

    #[test]
    fn rate_continuity_and_unit_snr() {
        assert_eq!(rate(0.0, &[5.0], &[1.0], 1.0).unwrap(), 0.0);
        let r = rate(0.5, &[0.5], &[1.0], 1.0).unwrap();
        assert!((r - 0.5 * 2f64.ln()).abs() < 1e-12);
        assert!(rate(-0.1, &[0.0], &[1.0], 1.0).is_err());
        assert!(rate(0.5, &[-1.0], &[1.0], 1.0).is_err());
    }

    #[test]
    fn rate_matches_power_form_after_recovery() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let tau = rng.random_range(0.05..1.0);
            let s: Vec<f64> = (0..3).map(|_| rng.random_range(0.0..2.0)).collect();
            let h: Vec<f64> = (0..3).map(|_| rng.random_range(0.0..1.0)).collect();
            let noise = 0.3;
            let s_form = rate(tau, &s, &h, noise).unwrap();
            let p: Vec<f64> = s.iter().map(|v| v / tau).collect();
            let p_form = tau * (dot(&h, &p) / noise).ln_1p();
            assert!((s_form - p_form).abs() <= 1e-12 * s_form.abs().max(1.0));
        }
    }

    #[test]
    fn harvested_energy_basics() {
        let sc = {
            let mut sc = Scenario::generate(&desk_params(1, 2), 0).unwrap();
            sc.conversion_eff = 0.6;
            sc
        };
        let ch = Channel {
            h: vec![vec![2.0, 1.0]],
        };
        // Only user 2's slot carries energy; user 1 harvests through h=2.
        let s = vec![vec![0.0, 0.5]];
        let e0 = harvested_energy(0, &s, &ch, sc.conversion_eff).unwrap();
        assert!((e0 - 0.6).abs() < 1e-15);
        assert_eq!(
            harvested_energy(1, &vec![vec![0.0, 0.0]], &ch, 0.6).unwrap(),
            0.0
        );
        // Perturbing a user's own slot leaves its harvest unchanged.
        let s2 = vec![vec![3.0, 0.5]];
        assert_eq!(
            harvested_energy(0, &s2, &ch, 0.6).unwrap(),
            harvested_energy(0, &s, &ch, 0.6).unwrap()
        );
        assert!(harvested_energy(5, &s, &ch, 0.6).is_err());
    }

    #[test]
    fn metrics_zero_allocation() {
        let sc = Scenario::generate(&desk_params(2, 2), 3).unwrap();
        let ch = Channel::deterministic(&sc);
        let alloc = Allocation::zeros(2, 2);
        let m = metrics(&alloc, &ch, &sc).unwrap();
        assert!(m.user_ee.iter().all(|&e| e == 0.0));
        assert_eq!(m.network_ee, 0.0);
    }

    #[test]
    fn single_active_user_collapses_network_ee() {
        let mut sc = Scenario::generate(&desk_params(1, 2), 4).unwrap();
        sc.weights = vec![2.0, 1.0];
        let ch = Channel::deterministic(&sc);
        let mut alloc = Allocation::zeros(1, 2);
        alloc.tau[0] = 0.5;
        alloc.s[0][0] = 1.0;
        alloc.p = recover_power(&alloc.tau, &alloc.s);
        let m = metrics(&alloc, &ch, &sc).unwrap();
        let t0 = 1.0 + 0.5 * sc.circuit_power[0];
        assert!((m.network_ee - sc.weights[0] * m.rate[0] / t0).abs() < 1e-12);
    }

    #[test]
    fn metrics_match_direct_formula_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let sc = Scenario::generate(&desk_params(2, 2), 5).unwrap();
        let ch = Channel::generate(&sc, 6);
        for _ in 0..20 {
            let tau: Vec<f64> = (0..2).map(|_| rng.random_range(0.05..0.5)).collect();
            let s: Vec<Vec<f64>> = (0..2)
                .map(|i| {
                    (0..2)
                        .map(|k| rng.random_range(0.0..sc.power_cap[i] * tau[k]))
                        .collect()
                })
                .collect();
            let alloc = Allocation::from_energy(tau.clone(), s.clone());
            let m = metrics(&alloc, &ch, &sc).unwrap();
            // Independent re-evaluation straight from the definitions.
            let mut wr = 0.0;
            let mut te = 0.0;
            for k in 0..2 {
                let hs: f64 = (0..2).map(|i| ch.h[i][k] * s[i][k]).sum();
                let r = tau[k] * (hs / (sc.noise_power * tau[k])).ln_1p();
                assert!((m.rate[k] - r).abs() <= 1e-12 * r.max(1.0));
                let ssum: f64 = (0..2).map(|i| s[i][k]).sum();
                let hp: f64 = (0..2).map(|i| ch.h[i][k] * s[i][k] / tau[k]).sum();
                let eta = (hp / sc.noise_power).ln_1p() / (ssum / tau[k] + sc.circuit_power[k]);
                assert!((m.user_ee[k] - eta).abs() <= 1e-12 * eta.max(1.0));
                wr += sc.weights[k] * r;
                te += ssum + tau[k] * sc.circuit_power[k];
            }
            assert!((m.network_ee - wr / te).abs() <= 1e-12 * (wr / te).max(1.0));
        }
    }

    #[test]
    fn recover_power_conventions() {
        let tau = vec![0.0, 0.5];
        let s = vec![vec![0.0, 1.0]];
        let p = recover_power(&tau, &s);
        assert_eq!(p[0][0], 0.0);
        assert_eq!(p[0][1], 2.0);
    }

    #[test]
    fn recovered_power_respects_caps() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let sc = Scenario::generate(&desk_params(2, 3), 12).unwrap();
        for _ in 0..200 {
            let tau: Vec<f64> = (0..3).map(|_| rng.random_range(0.0..0.34)).collect();
            let s: Vec<Vec<f64>> = (0..2)
                .map(|i| {
                    (0..3)
                        .map(|k| rng.random_range(0.0..=1.0) * sc.power_cap[i] * tau[k])
                        .collect()
                })
                .collect();
            let p = recover_power(&tau, &s);
            for i in 0..2 {
                for k in 0..3 {
                    assert!(p[i][k] >= 0.0 && p[i][k] <= sc.power_cap[i] + 1e-9);
                }
            }
        }
    }

    #[test]
    fn rate_jointly_concave_on_random_combinations() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let h = vec![0.8, 0.3];
        let noise = 0.2;
        for _ in 0..500 {
            let ta = rng.random_range(0.0..1.0);
            let tb = rng.random_range(0.0..1.0);
            let sa: Vec<f64> = (0..2).map(|_| rng.random_range(0.0..3.0)).collect();
            let sb: Vec<f64> = (0..2).map(|_| rng.random_range(0.0..3.0)).collect();
            let th = rng.random_range(0.0..1.0);
            let tm = th * ta + (1.0 - th) * tb;
            let sm: Vec<f64> = sa
                .iter()
                .zip(&sb)
                .map(|(a, b)| th * a + (1.0 - th) * b)
                .collect();
            let fm = rate(tm, &sm, &h, noise).unwrap();
            let fa = rate(ta, &sa, &h, noise).unwrap();
            let fb = rate(tb, &sb, &h, noise).unwrap();
            assert!(fm >= th * fa + (1.0 - th) * fb - 1e-9);
        }
    }

    #[test]
    fn feasibility_zero_requirement() {
        let mut sc = Scenario::generate(&desk_params(2, 2), 8).unwrap();
        sc.energy_req = vec![0.0, 0.0];
        let ch = Channel::generate(&sc, 8);
        let rep = check_feasibility(&sc, &ch).unwrap();
        assert!(rep.feasible);
        assert!(rep.max_min_slack >= 0.0);
    }

    #[test]
    fn feasibility_impossible_requirement() {
        let mut sc = Scenario::generate(&desk_params(2, 2), 9).unwrap();
        let ch = Channel::generate(&sc, 9);
        // More than the hardest upper bound on any user's harvest.
        let cap: f64 = (0..2)
            .map(|k| {
                sc.conversion_eff
                    * (0..2).map(|i| ch.h[i][k] * sc.power_cap[i]).sum::<f64>()
            })
            .fold(0.0, f64::max);
        sc.energy_req = vec![cap * 1.5, 0.0];
        let rep = check_feasibility(&sc, &ch).unwrap();
        assert!(!rep.feasible);
        assert!(rep.max_min_slack < 0.0);
    }

    #[test]
    fn feasibility_agrees_with_grid_scan() {
        for seed in 0..8u64 {
            let mut sc = Scenario::generate(&desk_params(2, 2), seed).unwrap();
            let ch = Channel::generate(&sc, seed + 100);
            // Scale requirements around the feasibility boundary.
            let base = 0.005 + 0.02 * (seed as f64);
            sc.energy_req = vec![base, base * 0.7];
            let rep = check_feasibility(&sc, &ch).unwrap();
            let grid_feasible = grid_feasibility_scan(&sc, &ch, 13);
            if rep.max_min_slack.abs() > 1e-3 {
                assert_eq!(
                    rep.feasible, grid_feasible,
                    "seed {seed} slack {}",
                    rep.max_min_slack
                );
            }
        }
    }

    /// Dense scan over (tau, s) used only to cross-check the LP.
    fn grid_feasibility_scan(sc: &Scenario, ch: &Channel, pts: usize) -> bool {
        let steps = |hi: f64| (0..pts).map(move |j| hi * j as f64 / (pts - 1) as f64);
        for t0 in steps(1.0) {
            for t1 in steps(1.0 - t0) {
                let tau = [t0, t1];
                let mut ok_any = false;
                // Energies are monotone in s, so only the box corner matters.
                let s: Vec<Vec<f64>> = (0..2)
                    .map(|i| (0..2).map(|k| sc.power_cap[i] * tau[k]).collect())
                    .collect();
                let feas = (0..2).all(|k| {
                    harvested_energy(k, &s, ch, sc.conversion_eff).unwrap()
                        >= sc.energy_req[k] - 1e-12
                });
                ok_any |= feas;
                if ok_any {
                    return true;
                }
            }
        }
        false
    }

    #[test]
    fn feasibility_report_allocation_is_feasible() {
        let sc = Scenario::generate(&desk_params(2, 3), 21).unwrap();
        let ch = Channel::generate(&sc, 22);
        let rep = check_feasibility(&sc, &ch).unwrap();
        assert!(rep.feasible);
        let a = &rep.allocation;
        assert!(a.tau.iter().sum::<f64>() <= 1.0 + 1e-9);
        for i in 0..2 {
            for k in 0..3 {
                assert!(a.s[i][k] <= a.tau[k] * sc.power_cap[i] + 1e-9);
            }
        }
        for k in 0..3 {
            let e = harvested_energy(k, &a.s, &ch, sc.conversion_eff).unwrap();
            assert!(e >= sc.energy_req[k] - 1e-9);
        }
    }

    proptest! {
        #[test]
        fn harvested_energy_is_linear(
            a in 0.0f64..5.0,
            b in 0.0f64..5.0,
            seed in 0u64..50,
        ) {
            let sc = Scenario::generate(&desk_params(2, 3), seed).unwrap();
            let ch = Channel::generate(&sc, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
            let s1: Vec<Vec<f64>> = (0..2)
                .map(|_| (0..3).map(|_| rng.random_range(0.0..2.0)).collect())
                .collect();
            let s2: Vec<Vec<f64>> = (0..2)
                .map(|_| (0..3).map(|_| rng.random_range(0.0..2.0)).collect())
                .collect();
            let mix: Vec<Vec<f64>> = (0..2)
                .map(|i| (0..3).map(|k| a * s1[i][k] + b * s2[i][k]).collect())
                .collect();
            for k in 0..3 {
                let lhs = harvested_energy(k, &mix, &ch, sc.conversion_eff).unwrap();
                let rhs = a * harvested_energy(k, &s1, &ch, sc.conversion_eff).unwrap()
                    + b * harvested_energy(k, &s2, &ch, sc.conversion_eff).unwrap();
                prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs.abs().max(1.0));
            }
        }

        #[test]
        fn user_ee_invariant_to_time_scaling(
            tau0 in 0.05f64..0.9,
            scale in 0.1f64..1.0,
            seed in 0u64..50,
        ) {
            let sc = Scenario::generate(&desk_params(2, 2), seed).unwrap();
            let ch = Channel::generate(&sc, seed.wrapping_add(1));
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x1234);
            let p: Vec<Vec<f64>> = (0..2)
                .map(|i| (0..2).map(|_| rng.random_range(0.0..sc.power_cap[i])).collect())
                .collect();
            let tau = vec![tau0.min(0.5), (1.0 - tau0).min(0.5)];
            let scaled: Vec<f64> = tau.iter().map(|t| t * scale).collect();
            let a1 = Allocation::from_power(tau, p.clone());
            let a2 = Allocation::from_power(scaled, p);
            let e1 = user_ee(&a1, &ch, &sc).unwrap();
            let e2 = user_ee(&a2, &ch, &sc).unwrap();
            for k in 0..2 {
                prop_assert!((e1[k] - e2[k]).abs() <= 1e-12 * e1[k].abs().max(1.0));
            }
        }
    }
}
