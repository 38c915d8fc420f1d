//! Dense two-phase simplex for the small linear programs in this crate:
//! feasibility checks, fixed-power time allocation, and oracle duties.
//!
//! Problems are stated as `maximize c.x  s.t.  A x <= b, x >= 0` with
//! right-hand sides of any sign. Sizes here are tens of rows, so the
//! tableau is dense and rows are rescaled once up front.

/// One inequality `coeffs . x <= rhs`.
#[derive(Debug, Clone)]
pub struct LpRow {
    pub coeffs: Vec<f64>,
    pub rhs: f64,
}

#[derive(Debug, Clone)]
pub struct LpProblem {
    pub num_vars: usize,
    /// Coefficients of the maximization objective.
    pub objective: Vec<f64>,
    pub rows: Vec<LpRow>,
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LpError {
    Infeasible,
    Unbounded,
    Numerical(String),
}

impl std::fmt::Display for LpError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LpError::Infeasible => write!(f, "infeasible"),
            LpError::Unbounded => write!(f, "unbounded"),
            LpError::Numerical(s) => write!(f, "numerical failure: {s}"),
        }
    }
}

const EPS_ENTER: f64 = 1e-10;
const EPS_PIVOT: f64 = 1e-11;
const EPS_FEAS: f64 = 1e-8;

struct Tableau {
    tab: Vec<Vec<f64>>,
    obj: Vec<f64>,
    basis: Vec<usize>,
    num_cols: usize,
    first_artificial: usize,
    iterations: usize,
}

impl Tableau {
    fn rhs(&self, i: usize) -> f64 {
        let c = self.num_cols;
        self.tab[i][c]
    }

    fn pivot(&mut self, row: usize, col: usize) {
        let piv = self.tab[row][col];
        let inv = 1.0 / piv;
        for v in self.tab[row].iter_mut() {
            *v *= inv;
        }
        let pr = self.tab[row].clone();
        for (i, r) in self.tab.iter_mut().enumerate() {
            if i == row {
                continue;
            }
            let f = r[col];
            if f != 0.0 {
                for (v, p) in r.iter_mut().zip(&pr) {
                    *v -= f * p;
                }
                r[col] = 0.0;
            }
        }
        let f = self.obj[col];
        if f != 0.0 {
            for (v, p) in self.obj.iter_mut().zip(&pr) {
                *v -= f * p;
            }
            self.obj[col] = 0.0;
        }
        self.basis[row] = col;
    }

    /// Runs simplex iterations on the current objective row until optimal.
    /// `allow_artificial` permits artificial columns to enter (phase 1 only).
    fn run(&mut self, allow_artificial: bool) -> Result<(), LpError> {
        let limit = self.first_artificial;
        let max_cols = if allow_artificial { self.num_cols } else { limit };
        // Dantzig's rule first; switch to Bland's rule if the iteration
        // count suggests cycling on degenerate vertices.
        let bland_after = 200 + 20 * (self.tab.len() + self.num_cols);
        let hard_cap = 200 * (10 + self.tab.len() + self.num_cols);
        loop {
            let bland = self.iterations > bland_after;
            let mut enter = None;
            if bland {
                for j in 0..max_cols {
                    if self.obj[j] > EPS_ENTER {
                        enter = Some(j);
                        break;
                    }
                }
            } else {
                let mut best = EPS_ENTER;
                for j in 0..max_cols {
                    if self.obj[j] > best {
                        best = self.obj[j];
                        enter = Some(j);
                    }
                }
            }
            let Some(enter) = enter else {
                return Ok(());
            };

            let mut leave: Option<(usize, f64)> = None;
            for i in 0..self.tab.len() {
                let a = self.tab[i][enter];
                if a > EPS_PIVOT {
                    let ratio = self.rhs(i) / a;
                    let better = match leave {
                        None => true,
                        Some((li, lr)) => {
                            ratio < lr - 1e-12
                                || (ratio < lr + 1e-12 && self.basis[i] < self.basis[li])
                        }
                    };
                    if better {
                        leave = Some((i, ratio));
                    }
                }
            }
            let Some((leave, _)) = leave else {
                return Err(LpError::Unbounded);
            };
            self.pivot(leave, enter);
            self.iterations += 1;
            if self.iterations > hard_cap {
                return Err(LpError::Numerical(format!(
                    "simplex exceeded {hard_cap} pivots"
                )));
            }
        }
    }
}

/// Solves `maximize objective . x  s.t.  rows, x >= 0`.
pub fn maximize(problem: &LpProblem) -> Result<LpSolution, LpError> {
    let n = problem.num_vars;
    assert_eq!(problem.objective.len(), n, "objective length mismatch");
    let m = problem.rows.len();

    // Normalized rows: unit max coefficient, nonnegative rhs, slack sign.
    let mut rows: Vec<(Vec<f64>, f64, f64)> = Vec::with_capacity(m); // (coeffs, rhs, slack_sign)
    for r in &problem.rows {
        assert_eq!(r.coeffs.len(), n, "row length mismatch");
        let scale = r.coeffs.iter().fold(0.0f64, |a, &c| a.max(c.abs()));
        if scale <= 0.0 {
            if r.rhs < -EPS_FEAS {
                return Err(LpError::Infeasible);
            }
            continue; // vacuous row
        }
        let mut coeffs: Vec<f64> = r.coeffs.iter().map(|&c| c / scale).collect();
        let mut rhs = r.rhs / scale;
        let mut slack = 1.0;
        if rhs < 0.0 {
            for c in coeffs.iter_mut() {
                *c = -*c;
            }
            rhs = -rhs;
            slack = -1.0;
        }
        rows.push((coeffs, rhs, slack));
    }
    let m = rows.len();
    let num_art = rows.iter().filter(|r| r.2 < 0.0).count();
    let num_cols = n + m + num_art;

    let mut t = Tableau {
        tab: vec![vec![0.0; num_cols + 1]; m],
        obj: vec![0.0; num_cols + 1],
        basis: vec![0; m],
        num_cols,
        first_artificial: n + m,
        iterations: 0,
    };
    let mut art = n + m;
    for (i, (coeffs, rhs, slack)) in rows.iter().enumerate() {
        t.tab[i][..n].copy_from_slice(coeffs);
        t.tab[i][n + i] = *slack;
        t.tab[i][num_cols] = *rhs;
        if *slack < 0.0 {
            t.tab[i][art] = 1.0;
            t.basis[i] = art;
            art += 1;
        } else {
            t.basis[i] = n + i;
        }
    }

    if num_art > 0 {
        // Phase 1: maximize -(sum of artificials).
        for j in (n + m)..num_cols {
            t.obj[j] = -1.0;
        }
        for i in 0..m {
            if t.basis[i] >= n + m {
                let row = t.tab[i].clone();
                for (v, p) in t.obj.iter_mut().zip(&row) {
                    *v += p;
                }
            }
        }
        t.run(true)?;
        let phase1 = -t.obj[num_cols];
        if phase1 < -EPS_FEAS {
            return Err(LpError::Infeasible);
        }
        // Drive any artificial still in the basis out of it.
        for i in 0..m {
            if t.basis[i] >= n + m {
                let col = (0..n + m).find(|&j| t.tab[i][j].abs() > 1e-9);
                match col {
                    Some(j) => t.pivot(i, j),
                    None => t.tab[i][num_cols] = 0.0, // redundant row
                }
            }
        }
    }

    // Phase 2 objective, reduced against the current basis.
    t.obj = vec![0.0; num_cols + 1];
    t.obj[..n].copy_from_slice(&problem.objective);
    for i in 0..m {
        let b = t.basis[i];
        let c = t.obj[b];
        if c != 0.0 {
            let row = t.tab[i].clone();
            for (v, p) in t.obj.iter_mut().zip(&row) {
                *v -= c * p;
            }
            t.obj[b] = 0.0;
        }
    }
    t.run(false)?;

    let mut x = vec![0.0; n];
    for i in 0..m {
        if t.basis[i] < n {
            x[t.basis[i]] = t.rhs(i).max(0.0);
        }
    }
    let value = problem
        .objective
        .iter()
        .zip(&x)
        .map(|(c, v)| c * v)
        .sum();
    Ok(LpSolution {
        x,
        value,
        iterations: t.iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lp(n: usize, obj: &[f64], rows: &[(&[f64], f64)]) -> LpProblem {
        LpProblem {
            num_vars: n,
            objective: obj.to_vec(),
            rows: rows
                .iter()
                .map(|(c, b)| LpRow {
                    coeffs: c.to_vec(),
                    rhs: *b,
                })
                .collect(),
        }
    }

    #[test]
    fn box_constrained_sum() {
        let p = lp(
            2,
            &[1.0, 1.0],
            &[(&[1.0, 0.0], 2.0), (&[0.0, 1.0], 3.0), (&[1.0, 1.0], 4.0)],
        );
        let s = maximize(&p).unwrap();
        assert!((s.value - 4.0).abs() < 1e-9);
        assert!(s.x.iter().all(|&v| v >= -1e-12));
    }

    #[test]
    fn negative_rhs_needs_phase_one() {
        // x >= 2 encoded as -x <= -2; maximize -x gives x = 2.
        let p = lp(1, &[-1.0], &[(&[-1.0], -2.0), (&[1.0], 5.0)]);
        let s = maximize(&p).unwrap();
        assert!((s.x[0] - 2.0).abs() < 1e-9);
        assert!((s.value + 2.0).abs() < 1e-9);
    }

    #[test]
    fn infeasible_detected() {
        let p = lp(1, &[1.0], &[(&[1.0], -1.0)]);
        assert_eq!(maximize(&p).unwrap_err(), LpError::Infeasible);
    }

    #[test]
    fn unbounded_detected() {
        let p = lp(2, &[1.0, 0.0], &[(&[0.0, 1.0], 1.0)]);
        assert_eq!(maximize(&p).unwrap_err(), LpError::Unbounded);
    }

    #[test]
    fn mixed_scales_stay_accurate() {
        // Widely scaled coefficients similar to the physical instances.
        let p = lp(
            2,
            &[1.0, 1e-6],
            &[(&[1e-6, 1.0], 1e-3), (&[1.0, 0.0], 3.0)],
        );
        let s = maximize(&p).unwrap();
        assert!((s.x[0] - 3.0).abs() < 1e-8);
        // second var limited by first row: 1e-6*3 + y <= 1e-3
        assert!((s.x[1] - (1e-3 - 3e-6)).abs() < 1e-9);
    }

    #[test]
    fn degenerate_vertex_terminates() {
        let p = lp(
            3,
            &[2.0, 3.0, 1.0],
            &[
                (&[1.0, 1.0, 1.0], 1.0),
                (&[1.0, 1.0, 0.0], 1.0),
                (&[0.0, 1.0, 1.0], 1.0),
                (&[1.0, 0.0, 1.0], 1.0),
            ],
        );
        let s = maximize(&p).unwrap();
        assert!((s.value - 3.0).abs() < 1e-9);
    }
}
