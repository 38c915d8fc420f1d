//! Solver outputs and shared solver configuration.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// The six allocation schemes the harness can run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scheme {
    #[serde(rename = "uc-opt")]
    UcOpt,
    #[serde(rename = "nc-opt")]
    NcOpt,
    #[serde(rename = "uc-ft")]
    UcFt,
    #[serde(rename = "uc-fp")]
    UcFp,
    #[serde(rename = "nc-ft")]
    NcFt,
    #[serde(rename = "nc-fp")]
    NcFp,
}

impl Scheme {
    pub const ALL: [Scheme; 6] = [
        Scheme::UcOpt,
        Scheme::NcOpt,
        Scheme::UcFt,
        Scheme::UcFp,
        Scheme::NcFt,
        Scheme::NcFp,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Scheme::UcOpt => "uc-opt",
            Scheme::NcOpt => "nc-opt",
            Scheme::UcFt => "uc-ft",
            Scheme::UcFp => "uc-fp",
            Scheme::NcFt => "nc-ft",
            Scheme::NcFp => "nc-fp",
        }
    }

    pub fn parse(s: &str) -> Result<Scheme> {
        Scheme::ALL
            .into_iter()
            .find(|sch| sch.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown scheme {s:?}")))
    }

    /// Whether the scheme reports the user-centric (weighted-sum) objective.
    pub fn is_user_centric(&self) -> bool {
        matches!(self, Scheme::UcOpt | Scheme::UcFt | Scheme::UcFp)
    }
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Result of one solver run. User-centric runs fill `uc_ee`, `per_user_ee`
/// and `psi_norm`; network-centric runs fill `nc_ee`, `t_residual` and
/// `q_iters`. Serialized with the fields of the active mode only.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveReport {
    pub scheme: Scheme,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub uc_ee: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nc_ee: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_user_ee: Option<Vec<f64>>,
    pub tau: Vec<f64>,
    pub p: Vec<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub psi_norm: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_residual: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub outer_iters: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q_iters: Option<usize>,
    /// Total ellipsoid iterations over all dual solves.
    pub inner_iters: usize,
    pub wall_time_s: f64,
}

impl SolveReport {
    /// The scalar objective the scheme optimizes.
    pub fn ee(&self) -> f64 {
        self.uc_ee.or(self.nc_ee).unwrap_or(0.0)
    }
}
