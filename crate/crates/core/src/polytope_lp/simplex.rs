//! Dense revised simplex (Phase I / Phase II) for `max c·x, A x = b, x ≥ 0`.
//!
//! The basis inverse is kept explicitly in column-major order and updated in
//! product form, with a full refactorization every `REFACTOR_EVERY` pivots.
//! Pricing is Dantzig's rule until more than `5 n` consecutive degenerate
//! pivots occur, after which Bland's rule takes over for the rest of the phase.

use super::{
    check_objective, Basis, LinearProgram, LpStatus, ReducedSystem, VertexSolution, PIVOT_TOL,
};
use crate::error::{Error, Result};
use crate::factor_graph::ScoreVector;

const OPT_TOL: f64 = 1e-9;
const FEAS_TOL: f64 = 1e-9;
const REFACTOR_EVERY: usize = 64;

#[derive(Clone, Copy, Debug, Default)]
pub struct SolveOptions<'a> {
    /// Columns forced to zero (never allowed into the basis).
    pub excluded: Option<&'a [bool]>,
    /// Starting basis; silently ignored if singular or infeasible.
    pub warm_start: Option<&'a Basis>,
    pub max_iterations: Option<usize>,
}

/// Maximizes `c·μ` over the program. Deterministic for fixed inputs.
pub fn simplex_solve(lp: &LinearProgram, c: &ScoreVector) -> Result<VertexSolution> {
    simplex_solve_with(lp, c, SolveOptions::default())
}

pub fn simplex_solve_with(
    lp: &LinearProgram,
    c: &[f64],
    opts: SolveOptions<'_>,
) -> Result<VertexSolution> {
    check_objective(lp, c)?;
    if let Some(ex) = opts.excluded {
        crate::factor_graph::check_len("excluded mask", lp.n_cols(), ex.len())?;
    }
    let sys = lp.reduced();
    let n = lp.n_cols();
    if !sys.consistent {
        return Ok(infeasible(n, sys.row_ids.len()));
    }
    let m = sys.row_ids.len();
    let max_iter = opts.max_iterations.unwrap_or(20 * (m + n) + 1000);
    let mut t = Tableau::new(sys, c, opts.excluded, max_iter);

    let warm = opts.warm_start.map(|b| t.try_warm_start(b)).unwrap_or(false);
    if !warm {
        t.cold_start();
        t.run(Phase::One)?;
        let infeas: f64 = (0..m)
            .filter(|&i| t.basis[i] >= n)
            .map(|i| t.xb[i].max(0.0))
            .sum();
        let scale = 1.0 + sys.rhs.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        if infeas > 1e-8 * scale {
            return Ok(infeasible(n, m));
        }
        t.drive_out_artificials();
    }
    let status = t.run(Phase::Two)?;
    Ok(t.solution(status))
}

fn infeasible(n: usize, m: usize) -> VertexSolution {
    VertexSolution {
        mu: ScoreVector::zeros(n),
        objective: f64::NEG_INFINITY,
        basis: Basis {
            vars: Vec::with_capacity(m),
            n_structural: n,
        },
        status: LpStatus::Infeasible,
        iterations: 0,
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Phase {
    One,
    Two,
}

struct Tableau<'a> {
    sys: &'a ReducedSystem,
    obj: &'a [f64],
    excluded: Option<&'a [bool]>,
    n: usize,
    m: usize,
    basis: Vec<usize>,
    is_basic: Vec<bool>,
    /// Column-major `B⁻¹`: column `r` is `binv[r*m..(r+1)*m]`.
    binv: Vec<f64>,
    xb: Vec<f64>,
    iterations: usize,
    max_iter: usize,
    since_refactor: usize,
}

impl<'a> Tableau<'a> {
    fn new(
        sys: &'a ReducedSystem,
        obj: &'a [f64],
        excluded: Option<&'a [bool]>,
        max_iter: usize,
    ) -> Self {
        let n = sys.columns.len();
        let m = sys.rhs.len();
        Tableau {
            sys,
            obj,
            excluded,
            n,
            m,
            basis: Vec::new(),
            is_basic: vec![false; n + m],
            binv: Vec::new(),
            xb: Vec::new(),
            iterations: 0,
            max_iter,
            since_refactor: 0,
        }
    }

    fn allowed(&self, j: usize) -> bool {
        j < self.n && !self.excluded.is_some_and(|ex| ex[j])
    }

    fn cold_start(&mut self) {
        let m = self.m;
        self.basis = (self.n..self.n + m).collect();
        self.is_basic = vec![false; self.n + m];
        for &j in &self.basis {
            self.is_basic[j] = true;
        }
        self.binv = vec![0.0; m * m];
        for r in 0..m {
            self.binv[r * m + r] = 1.0;
        }
        self.xb = self.sys.rhs.clone();
    }

    fn try_warm_start(&mut self, start: &Basis) -> bool {
        let (n, m) = (self.n, self.m);
        if start.n_structural != n || start.vars.len() != m {
            return false;
        }
        let mut seen = vec![false; n + m];
        for &j in &start.vars {
            if j >= n + m || seen[j] || (j < n && !self.allowed(j)) {
                return false;
            }
            seen[j] = true;
        }
        self.basis = start.vars.clone();
        self.is_basic = seen;
        if !self.refactor() {
            return false;
        }
        for i in 0..m {
            let v = self.xb[i];
            if v < -FEAS_TOL || (self.basis[i] >= n && v.abs() > FEAS_TOL) {
                return false;
            }
            if v < 0.0 {
                self.xb[i] = 0.0;
            }
        }
        true
    }

    fn column(&self, j: usize) -> ColumnRef<'_> {
        if j < self.n {
            ColumnRef::Sparse(&self.sys.columns[j])
        } else {
            ColumnRef::Unit(j - self.n)
        }
    }

    /// `B⁻¹ a_j`
    fn ftran(&self, j: usize, out: &mut [f64]) {
        let m = self.m;
        out.iter_mut().for_each(|v| *v = 0.0);
        let mut axpy = |r: usize, v: f64| {
            let col = &self.binv[r * m..(r + 1) * m];
            for (o, b) in out.iter_mut().zip(col) {
                *o += v * b;
            }
        };
        match self.column(j) {
            ColumnRef::Sparse(entries) => entries.iter().for_each(|&(r, v)| axpy(r, v)),
            ColumnRef::Unit(r) => axpy(r, 1.0),
        }
    }

    fn cost(&self, phase: Phase, j: usize) -> f64 {
        match phase {
            Phase::One => {
                if j >= self.n {
                    1.0
                } else {
                    0.0
                }
            }
            Phase::Two => {
                if j >= self.n {
                    0.0
                } else {
                    -self.obj[j]
                }
            }
        }
    }

    /// Rebuilds `B⁻¹` and `x_B` from the current basis. Returns false if singular.
    fn refactor(&mut self) -> bool {
        let m = self.m;
        // row-major augmented [B | I]
        let mut a = vec![0.0; m * 2 * m];
        let w = 2 * m;
        for (col, &j) in self.basis.iter().enumerate() {
            match self.column(j) {
                ColumnRef::Sparse(entries) => {
                    for &(r, v) in entries {
                        a[r * w + col] = v;
                    }
                }
                ColumnRef::Unit(r) => a[r * w + col] = 1.0,
            }
        }
        for r in 0..m {
            a[r * w + m + r] = 1.0;
        }
        for col in 0..m {
            let mut piv = col;
            let mut best = a[col * w + col].abs();
            for r in col + 1..m {
                let v = a[r * w + col].abs();
                if v > best {
                    best = v;
                    piv = r;
                }
            }
            if best < 1e-11 {
                return false;
            }
            if piv != col {
                for k in 0..w {
                    a.swap(col * w + k, piv * w + k);
                }
            }
            let p = a[col * w + col];
            for k in 0..w {
                a[col * w + k] /= p;
            }
            for r in 0..m {
                if r != col {
                    let f = a[r * w + col];
                    if f != 0.0 {
                        for k in 0..w {
                            a[r * w + k] -= f * a[col * w + k];
                        }
                    }
                }
            }
        }
        // row r of B⁻¹ is a[r, m..2m]; store column-major
        self.binv = vec![0.0; m * m];
        for r in 0..m {
            for c in 0..m {
                self.binv[c * m + r] = a[r * w + m + c];
            }
        }
        self.xb = vec![0.0; m];
        for (r, &b) in self.sys.rhs.iter().enumerate() {
            if b != 0.0 {
                let col = &self.binv[r * m..(r + 1) * m];
                for (x, v) in self.xb.iter_mut().zip(col) {
                    *x += b * v;
                }
            }
        }
        self.since_refactor = 0;
        true
    }

    fn pivot(&mut self, p: usize, j: usize, alpha: &[f64]) {
        let m = self.m;
        let ap = alpha[p];
        for r in 0..m {
            let col = &mut self.binv[r * m..(r + 1) * m];
            let t = col[p] / ap;
            if t != 0.0 {
                for (i, v) in col.iter_mut().enumerate() {
                    if i != p {
                        *v -= alpha[i] * t;
                    }
                }
            }
            col[p] = t;
        }
        let step = self.xb[p] / ap;
        for (i, (x, &a)) in self.xb.iter_mut().zip(alpha).enumerate() {
            if i != p {
                *x -= a * step;
            }
        }
        self.xb[p] = step;
        self.is_basic[self.basis[p]] = false;
        self.is_basic[j] = true;
        self.basis[p] = j;
        self.since_refactor += 1;
        if self.since_refactor >= REFACTOR_EVERY {
            let ok = self.refactor();
            debug_assert!(ok, "basis became singular");
        }
    }

    fn run(&mut self, phase: Phase) -> Result<LpStatus> {
        let (n, m) = (self.n, self.m);
        let mut pi = vec![0.0; m];
        let mut alpha = vec![0.0; m];
        let mut cb = vec![0.0; m];
        let mut degenerate_run = 0usize;
        let mut bland = false;
        loop {
            for (i, &j) in self.basis.iter().enumerate() {
                cb[i] = self.cost(phase, j);
            }
            for (r, p) in pi.iter_mut().enumerate() {
                let col = &self.binv[r * m..(r + 1) * m];
                *p = cb.iter().zip(col).map(|(a, b)| a * b).sum();
            }

            let mut entering = None;
            let mut best = -OPT_TOL;
            for j in 0..n {
                if self.is_basic[j] || !self.allowed(j) {
                    continue;
                }
                let d = self.cost(phase, j)
                    - self.sys.columns[j]
                        .iter()
                        .map(|&(r, v)| pi[r] * v)
                        .sum::<f64>();
                if d < best {
                    entering = Some(j);
                    if bland {
                        break;
                    }
                    best = d;
                }
            }
            let Some(j) = entering else {
                return Ok(LpStatus::Optimal);
            };

            self.ftran(j, &mut alpha);
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..m {
                let a = alpha[i];
                let ratio = if a > PIVOT_TOL {
                    self.xb[i].max(0.0) / a
                } else if phase == Phase::Two && self.basis[i] >= n && a < -PIVOT_TOL {
                    // artificial stuck at zero on a redundant row must stay there
                    0.0
                } else {
                    continue;
                };
                leave = match leave {
                    None => Some((i, ratio)),
                    Some((k, r)) => {
                        if ratio < r - 1e-12 {
                            Some((i, ratio))
                        } else if ratio <= r + 1e-12 {
                            let better = if bland {
                                self.basis[i] < self.basis[k]
                            } else {
                                a.abs() > alpha[k].abs()
                            };
                            if better {
                                Some((i, ratio))
                            } else {
                                Some((k, r))
                            }
                        } else {
                            Some((k, r))
                        }
                    }
                };
            }
            let Some((p, step)) = leave else {
                return Ok(LpStatus::Unbounded);
            };

            if step <= 1e-12 {
                degenerate_run += 1;
                if degenerate_run > 5 * n {
                    bland = true;
                }
            } else {
                degenerate_run = 0;
            }
            self.pivot(p, j, &alpha);
            self.iterations += 1;
            if self.iterations > self.max_iter {
                return Err(Error::IterationLimit {
                    iterations: self.max_iter,
                    best_basis: self.snapshot(),
                });
            }
        }
    }

    /// Pivots zero-level artificials out of the basis where some allowed
    /// column has a usable entry in their row; the rest sit on redundant rows.
    fn drive_out_artificials(&mut self) {
        let (n, m) = (self.n, self.m);
        let mut alpha = vec![0.0; m];
        for p in 0..m {
            if self.basis[p] < n {
                continue;
            }
            let row: Vec<f64> = (0..m).map(|r| self.binv[r * m + p]).collect();
            let mut best: Option<(usize, f64)> = None;
            for j in 0..n {
                if self.is_basic[j] || !self.allowed(j) {
                    continue;
                }
                let a: f64 = self.sys.columns[j].iter().map(|&(r, v)| row[r] * v).sum();
                if a.abs() > PIVOT_TOL && best.is_none_or(|(_, b)| a.abs() > b) {
                    best = Some((j, a.abs()));
                }
            }
            if let Some((j, _)) = best {
                self.ftran(j, &mut alpha);
                self.xb[p] = 0.0;
                self.pivot(p, j, &alpha);
            }
        }
    }

    fn snapshot(&self) -> Basis {
        Basis {
            vars: self.basis.clone(),
            n_structural: self.n,
        }
    }

    fn solution(&self, status: LpStatus) -> VertexSolution {
        let mut mu = vec![0.0; self.n];
        for (i, &j) in self.basis.iter().enumerate() {
            if j < self.n {
                let v = self.xb[i];
                mu[j] = if v.abs() < 1e-12 { 0.0 } else { v };
            }
        }
        let objective = if status == LpStatus::Optimal {
            mu.iter().zip(self.obj).map(|(x, c)| x * c).sum()
        } else {
            f64::INFINITY
        };
        VertexSolution {
            mu: ScoreVector::from(mu),
            objective,
            basis: self.snapshot(),
            status,
            iterations: self.iterations,
        }
    }
}

enum ColumnRef<'a> {
    Sparse(&'a [(usize, f64)]),
    Unit(usize),
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::factor_graph::{assignment_to_mu, FactorGraph};
    use crate::polytope_lp::build_local_polytope;

    #[test]
    fn zero_objective_gives_zero_value() {
        let g = FactorGraph::binary_pairwise(3, &[(0, 1), (1, 2)]).unwrap();
        let lp = build_local_polytope(&g);
        let sol = simplex_solve(&lp, &ScoreVector::zeros(g.dim())).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        assert_eq!(sol.objective, 0.0);
        assert!(lp.is_feasible(&sol.mu, 1e-9));
    }

    #[test]
    fn single_variable_picks_best_state() {
        let g = FactorGraph::new(vec![2], vec![]).unwrap();
        let lp = build_local_polytope(&g);
        let sol = simplex_solve(&lp, &ScoreVector::from(vec![0.0, 5.0])).unwrap();
        assert_eq!(sol.mu.to_vec(), vec![0.0, 1.0]);
        assert_eq!(sol.objective, 5.0);
        assert_eq!(sol.basis.structural(), vec![1]);
    }

    #[test]
    fn generic_lp_with_unbounded_and_infeasible_cases() {
        // max x0 s.t. x0 - x1 = 0: unbounded
        let lp = LinearProgram::new(2, vec![vec![(0, 1.0), (1, -1.0)]], vec![0.0]);
        let sol = simplex_solve(&lp, &ScoreVector::from(vec![1.0, 0.0])).unwrap();
        assert_eq!(sol.status, LpStatus::Unbounded);

        // x0 + x1 = 1 and x0 + x1 = 2: inconsistent
        let lp = LinearProgram::new(
            2,
            vec![vec![(0, 1.0), (1, 1.0)], vec![(0, 1.0), (1, 1.0)]],
            vec![1.0, 2.0],
        );
        let sol = simplex_solve(&lp, &ScoreVector::from(vec![1.0, 0.0])).unwrap();
        assert_eq!(sol.status, LpStatus::Infeasible);

        // x0 = -1: infeasible with x ≥ 0
        let lp = LinearProgram::new(1, vec![vec![(0, 1.0)]], vec![-1.0]);
        let sol = simplex_solve(&lp, &ScoreVector::from(vec![1.0])).unwrap();
        assert_eq!(sol.status, LpStatus::Infeasible);
    }

    #[test]
    fn warm_start_reaches_same_value() {
        let g = FactorGraph::fully_connected_binary(5);
        let lp = build_local_polytope(&g);
        let c1: Vec<f64> = (0..g.dim()).map(|k| ((k * 37 % 11) as f64) - 5.0).collect();
        let c2: Vec<f64> = (0..g.dim()).map(|k| ((k * 17 % 7) as f64) - 3.0).collect();
        let first = simplex_solve_with(&lp, &c1, SolveOptions::default()).unwrap();
        let cold = simplex_solve_with(&lp, &c2, SolveOptions::default()).unwrap();
        let warm = simplex_solve_with(
            &lp,
            &c2,
            SolveOptions {
                warm_start: Some(&first.basis),
                ..Default::default()
            },
        )
        .unwrap();
        assert!((cold.objective - warm.objective).abs() < 1e-9);
        assert!(lp.is_feasible(&warm.mu, 1e-9));
    }

    #[test]
    fn excluded_columns_stay_at_zero() {
        let g = FactorGraph::binary_pairwise(2, &[(0, 1)]).unwrap();
        let lp = build_local_polytope(&g);
        let c = vec![0.0, 3.0, 0.0, 3.0, 0.0, 0.0, 0.0, 1.0];
        let mut ex = vec![false; g.dim()];
        ex[1] = true; // forbid y0 = 1
        let sol = simplex_solve_with(
            &lp,
            &c,
            SolveOptions {
                excluded: Some(&ex),
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(sol.mu[1], 0.0);
        assert!((sol.objective - 3.0).abs() < 1e-12);
        assert_eq!(sol.mu.to_vec(), assignment_to_mu(&g, &[0, 1]).unwrap().to_vec());
    }

    #[test]
    fn iteration_limit_is_reported() {
        let g = FactorGraph::fully_connected_binary(4);
        let lp = build_local_polytope(&g);
        let c: Vec<f64> = (0..g.dim()).map(|k| (k % 5) as f64).collect();
        let err = simplex_solve_with(
            &lp,
            &c,
            SolveOptions {
                max_iterations: Some(1),
                ..Default::default()
            },
        )
        .unwrap_err();
        assert!(matches!(err, Error::IterationLimit { iterations: 1, .. }));
    }
}
