//! Energy-efficient time and power allocation for TDMA downlinks served by
//! distributed antenna ports, where idle users harvest RF energy from the
//! slots of scheduled users.
//!
//! The crate solves two maximization problems over time shares and
//! transmit powers, subject to per-user minimum-harvest and per-port
//! power-cap constraints:
//!
//! * the weighted sum of per-user rate/power efficiency ratios
//!   ([`uc::solve`]), handled through a parametric subtractive transform
//!   with a damped-Newton outer loop, and
//! * the network-level throughput-per-joule ratio ([`nc::solve`]),
//!   handled with the Dinkelbach method.
//!
//! Both share an inner Lagrangian machinery: closed-form coordinate
//! updates (time shares via the Lambert W function) inside a block
//! coordinate ascent, and an ellipsoid method over the dual multipliers.
//! Restricted benchmark schemes, brute-force grid oracles, and a seeded
//! Monte-Carlo sweep harness round out the library.

pub mod baselines;
pub mod error;
pub mod lambert;
pub mod model;
pub mod oracle;
pub mod report;
pub mod simplex;
pub mod sweep;

pub mod ellipsoid;
pub mod lagrangian;
pub mod nc;
pub mod refine;
pub mod uc;

pub use error::{Error, Result};
pub use model::{Allocation, Channel, PerUserMetrics, Scenario, ScenarioParams};
pub use report::{Scheme, SolveReport};
