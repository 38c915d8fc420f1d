//! Ellipsoid method for minimizing a convex function over the nonnegative
//! orthant, given only value-and-subgradient evaluations.
//!
//! The ellipsoid `{x : (x-z)' A^-1 (x-z) <= 1}` is tracked through its
//! center `z` and shape matrix `A`. Objective evaluations produce deep cuts
//! (using the gap to the best value seen); centers with negative
//! coordinates are handled by constraint cuts without evaluating.

use crate::error::{Error, Result};

/// Center, shape matrix, and iteration count of the search ellipsoid.
#[derive(Debug, Clone)]
pub struct EllipsoidState {
    pub center: Vec<f64>,
    /// Symmetric positive-definite shape matrix.
    pub shape: Vec<Vec<f64>>,
    pub iterations: usize,
}

impl EllipsoidState {
    /// Axis-aligned ellipsoid with the given center and per-coordinate radii.
    pub fn new(center: Vec<f64>, radii: &[f64]) -> EllipsoidState {
        let n = center.len();
        assert_eq!(radii.len(), n);
        let mut shape = vec![vec![0.0; n]; n];
        for j in 0..n {
            shape[j][j] = radii[j] * radii[j];
        }
        EllipsoidState {
            center,
            shape,
            iterations: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    /// `A g` and `sqrt(g' A g)` for a cut direction.
    fn project(&self, g: &[f64]) -> (Vec<f64>, f64) {
        let n = self.dim();
        let mut ag = vec![0.0; n];
        for (row, out) in self.shape.iter().zip(ag.iter_mut()) {
            *out = row.iter().zip(g).map(|(a, b)| a * b).sum();
        }
        let gag: f64 = g.iter().zip(&ag).map(|(a, b)| a * b).sum();
        (ag, gag.max(0.0).sqrt())
    }

    /// Applies a deep cut `g . (x - z) <= -depth * ||g||_A`, shrinking the
    /// ellipsoid around the kept half. `depth` must lie in `[0, 1)`.
    pub fn cut(&mut self, g: &[f64], depth: f64) -> Result<()> {
        let n = self.dim();
        let (ag, norm) = self.project(g);
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::EllipsoidNumerical {
                iters: self.iterations,
                detail: format!("cut direction has invalid norm {norm}"),
            });
        }
        // Depths near 1 make the rank-1 downdate singular; capping keeps a
        // positive-definiteness margin (a shallower cut is always valid).
        let alpha = depth.clamp(0.0, 0.7);
        let nf = n as f64;
        if n == 1 {
            // Interval halving: keep [z - r, z - alpha r].
            let r = norm / g[0].abs();
            let sign = g[0].signum();
            self.center[0] -= sign * r * (1.0 + alpha) / 2.0;
            let nr = r * (1.0 - alpha) / 2.0;
            self.shape[0][0] = nr * nr;
            self.iterations += 1;
            return Ok(());
        }
        let b: Vec<f64> = ag.iter().map(|v| v / norm).collect();
        let step = (1.0 + nf * alpha) / (nf + 1.0);
        for (c, bv) in self.center.iter_mut().zip(&b) {
            *c -= step * bv;
        }
        let scale = nf * nf * (1.0 - alpha * alpha) / (nf * nf - 1.0);
        let rank1 = 2.0 * (1.0 + nf * alpha) / ((nf + 1.0) * (1.0 + alpha));
        for i in 0..n {
            for j in 0..n {
                self.shape[i][j] = scale * (self.shape[i][j] - rank1 * b[i] * b[j]);
            }
        }
        // Keep the matrix exactly symmetric against round-off drift.
        for i in 0..n {
            for j in 0..i {
                let m = 0.5 * (self.shape[i][j] + self.shape[j][i]);
                self.shape[i][j] = m;
                self.shape[j][i] = m;
            }
        }
        self.iterations += 1;
        Ok(())
    }

    pub fn is_positive_definite(&self) -> bool {
        cholesky(&self.shape).is_some()
    }

    pub fn log_det(&self) -> Option<f64> {
        cholesky(&self.shape).map(|l| 2.0 * (0..self.dim()).map(|i| l[i][i].ln()).sum::<f64>())
    }
}

pub(crate) fn cholesky(a: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let n = a.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[i][j];
            for k in 0..j {
                sum -= l[i][k] * l[j][k];
            }
            if i == j {
                if sum <= 0.0 {
                    return None;
                }
                l[i][j] = sum.sqrt();
            } else {
                l[i][j] = sum / l[j][j];
            }
        }
    }
    Some(l)
}

#[derive(Debug, Clone)]
pub struct EllipsoidConfig {
    /// Stop when `sqrt(g' A g) <= tol` at an evaluated center.
    pub tol: f64,
    pub max_iters: usize,
    pub center: Vec<f64>,
    /// Initial per-coordinate radii.
    pub radii: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct EllipsoidOutcome {
    pub best: Vec<f64>,
    pub best_value: f64,
    pub iterations: usize,
    pub converged: bool,
    /// The best point sits close to the initial shell, suggesting the
    /// starting ball was too small.
    pub hit_boundary: bool,
}

/// A violated linear constraint at a query point: its gradient and the
/// (positive) violation amount.
pub type FeasibilityCut = (Vec<f64>, f64);

/// Minimizes `f` over `x >= 0`, optionally intersected with a convex region
/// described by a cut oracle: `feas(x)` returns a violated-constraint
/// gradient and violation when `x` is outside the region. The evaluator is
/// only called at points passing both checks. An optional trace receives
/// `(iteration, value, sqrt(g'Ag))` at each evaluated center.
pub fn minimize<F>(
    f: &mut F,
    mut feas: Option<&mut dyn FnMut(&[f64]) -> Option<FeasibilityCut>>,
    cfg: &EllipsoidConfig,
    mut trace: Option<&mut dyn FnMut(usize, f64, f64)>,
) -> Result<EllipsoidOutcome>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let n = cfg.center.len();
    assert!(n >= 1);
    // Work in coordinates scaled by the initial radii so the shape matrix
    // starts as the identity; scaling about 0 preserves the orthant.
    let radii = &cfg.radii;
    let scaled_center: Vec<f64> = cfg.center.iter().zip(radii).map(|(c, r)| c / r).collect();
    let mut state = EllipsoidState::new(scaled_center, &vec![1.0; n]);
    let mut point = vec![0.0; n];
    let mut scaled_grad = vec![0.0; n];
    let mut best: Option<(f64, Vec<f64>)> = None;

    // Centers this far (in scaled units) below zero get cut; anything
    // closer is clamped for evaluation. Without the margin, a boundary
    // optimum drives an endless cut cycle that degenerates its axis.
    const FEAS_MARGIN: f64 = 1e-8;

    let mut converged = false;
    while state.iterations < cfg.max_iters {
        for (p, (z, r)) in point.iter_mut().zip(state.center.iter().zip(radii)) {
            *p = (z * r).max(0.0);
        }
        // Most-violated nonnegativity constraint relative to the ellipsoid.
        let mut feas_cut: Option<(usize, f64)> = None;
        for j in 0..n {
            let z = state.center[j];
            if z < -FEAS_MARGIN {
                let span = state.shape[j][j].max(0.0).sqrt();
                if span <= 0.0 {
                    return Err(Error::EllipsoidNumerical {
                        iters: state.iterations,
                        detail: format!("degenerate axis {j}"),
                    });
                }
                let depth = -z / span;
                if feas_cut.map_or(true, |(_, d)| depth > d) {
                    feas_cut = Some((j, depth));
                }
            }
        }
        if let Some((j, depth)) = feas_cut {
            let span = state.shape[j][j].max(0.0).sqrt();
            if span <= 1e-10 {
                // The axis has collapsed against the boundary: the optimum
                // sits on this face to within tolerance, so pin it there
                // instead of shaving the axis into underflow.
                state.center[j] = 0.0;
                for i in 0..n {
                    state.shape[i][j] = 0.0;
                    state.shape[j][i] = 0.0;
                }
                state.shape[j][j] = 1e-24;
                state.iterations += 1;
            } else {
                let mut g = vec![0.0; n];
                g[j] = -1.0;
                state.cut(&g, depth)?;
            }
            continue;
        }
        if let Some(oracle) = feas.as_deref_mut() {
            if let Some((g, violation)) = oracle(&point) {
                for (sg, (gv, r)) in scaled_grad.iter_mut().zip(g.iter().zip(radii)) {
                    *sg = gv * r;
                }
                let (_, norm) = state.project(&scaled_grad);
                if !(norm > 0.0) {
                    return Err(Error::EllipsoidNumerical {
                        iters: state.iterations,
                        detail: "feasibility cut with degenerate direction".into(),
                    });
                }
                let depth = violation / norm;
                state.cut(&scaled_grad.clone(), depth)?;
                continue;
            }
        }

        let (value, grad) = f(&point)?;
        if !value.is_finite() {
            return Err(Error::EllipsoidNumerical {
                iters: state.iterations,
                detail: format!("objective evaluated to {value}"),
            });
        }
        let improved = best.as_ref().map_or(true, |(bv, _)| value < *bv);
        if improved {
            best = Some((value, point.clone()));
        }
        let best_value = best.as_ref().map(|(v, _)| *v).unwrap();

        for (sg, (gv, r)) in scaled_grad.iter_mut().zip(grad.iter().zip(radii)) {
            *sg = gv * r;
        }
        let (_, norm) = state.project(&scaled_grad);
        if let Some(t) = trace.as_deref_mut() {
            t(state.iterations, value, norm);
        }
        if norm <= cfg.tol {
            converged = true;
            break;
        }
        // Deep cut by the gap to the incumbent; zero depth at the incumbent.
        let depth = (value - best_value) / norm;
        state.cut(&scaled_grad.clone(), depth)?;
    }

    let (best_value, best) = best.ok_or_else(|| Error::EllipsoidNumerical {
        iters: state.iterations,
        detail: "no feasible center was ever evaluated".into(),
    })?;
    let shell: f64 = best
        .iter()
        .zip(&cfg.center)
        .zip(radii)
        .map(|((b, c), r)| ((b - c) / r).powi(2))
        .sum();
    Ok(EllipsoidOutcome {
        best,
        best_value,
        iterations: state.iterations,
        converged,
        hit_boundary: shell >= 0.81,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_quadratic(
        q: &[f64],
        c: &[f64],
        center: Vec<f64>,
        radius: f64,
        tol: f64,
    ) -> EllipsoidOutcome {
        let n = c.len();
        let cfg = EllipsoidConfig {
            tol,
            max_iters: 200_000,
            center,
            radii: vec![radius; n],
        };
        let mut f = |x: &[f64]| {
            let value: f64 = (0..n).map(|j| q[j] * (x[j] - c[j]).powi(2)).sum();
            let grad: Vec<f64> = (0..n).map(|j| 2.0 * q[j] * (x[j] - c[j])).collect();
            Ok((value, grad))
        };
        minimize(&mut f, None, &cfg, None).unwrap()
    }

    #[test]
    fn scalar_quadratic() {
        // The stopping rule bounds the objective gap, so the coordinate
        // error is about its square root; 1e-12 leaves a 1e-6 box.
        let out = run_quadratic(&[1.0], &[2.0], vec![0.0], 10.0, 1e-12);
        assert!((out.best[0] - 2.0).abs() < 1e-5, "got {}", out.best[0]);
        assert!(out.converged);
    }

    #[test]
    fn nonnegativity_cut_finds_boundary_optimum() {
        let out = run_quadratic(&[1.0], &[-1.0], vec![5.0], 10.0, 1e-12);
        assert!(out.best[0].abs() < 1e-5, "got {}", out.best[0]);
    }

    #[test]
    fn feasibility_oracle_constrains_the_region() {
        // min (x0-2)^2 + (x1-2)^2 over x >= 0 and x0 + x1 <= 1.
        let cfg = EllipsoidConfig {
            tol: 1e-12,
            max_iters: 100_000,
            center: vec![0.1, 0.1],
            radii: vec![10.0, 10.0],
        };
        let mut f = |x: &[f64]| {
            let value = (x[0] - 2.0).powi(2) + (x[1] - 2.0).powi(2);
            Ok((value, vec![2.0 * (x[0] - 2.0), 2.0 * (x[1] - 2.0)]))
        };
        let mut oracle = |x: &[f64]| {
            let v = x[0] + x[1] - 1.0;
            (v > 0.0).then(|| (vec![1.0, 1.0], v))
        };
        let out = minimize(&mut f, Some(&mut oracle), &cfg, None).unwrap();
        assert!((out.best[0] - 0.5).abs() < 1e-4, "{:?}", out.best);
        assert!((out.best[1] - 0.5).abs() < 1e-4, "{:?}", out.best);
    }

    #[test]
    fn diagonal_quadratic_matches_projected_optimum() {
        // Unconstrained optimum has negative coordinates; the true optimum
        // over x >= 0 clamps them at zero.
        let q = [1.0, 2.0, 0.5, 3.0, 1.5];
        let c = [1.0, -2.0, 3.0, -0.5, 0.7];
        let out = run_quadratic(&q, &c, vec![1.0; 5], 20.0, 1e-9);
        for j in 0..5 {
            let expect = c[j].max(0.0);
            assert!(
                (out.best[j] - expect).abs() < 1e-4,
                "coord {j}: got {} want {expect}",
                out.best[j]
            );
        }
    }

    #[test]
    fn volume_strictly_decreases_per_cut() {
        let n = 6;
        let mut state = EllipsoidState::new(vec![0.5; n], &vec![3.0; n]);
        let mut prev = state.log_det().unwrap();
        let mut g = vec![0.0; n];
        for it in 0..200 {
            for (j, v) in g.iter_mut().enumerate() {
                *v = ((it * 7 + j * 13) % 11) as f64 - 5.0;
            }
            if g.iter().all(|&v| v == 0.0) {
                g[0] = 1.0;
            }
            state.cut(&g, 0.0).unwrap();
            let ld = state.log_det().expect("shape stays positive definite");
            // Central cuts shrink volume by at least e^(-1/(2(n+1))), i.e.
            // log det drops by at least 1/(n+1).
            assert!(
                ld <= prev - 1.0 / (n as f64 + 1.0) + 1e-9,
                "iter {it}: {ld} vs {prev}"
            );
            prev = ld;
        }
        assert!(state.is_positive_definite());
    }

    #[test]
    fn boundary_hit_is_flagged() {
        // Optimum far outside the initial ball.
        let out = run_quadratic(&[1.0, 1.0], &[50.0, 0.0], vec![0.1, 0.1], 1.0, 1e-8);
        assert!(out.hit_boundary);
    }
}
