//! The local marginal polytope as an equality-form linear program, and a
//! dense revised simplex solver returning vertex solutions.

mod simplex;

use std::fmt::Write as _;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::factor_graph::{check_len, FactorGraph, ScoreVector};

pub use simplex::{simplex_solve, simplex_solve_with, SolveOptions};

/// Pivot tolerance used by the simplex method.
pub const PIVOT_TOL: f64 = 1e-9;

/// Default tolerance for calling a coordinate integral.
pub const INTEGRALITY_TOL: f64 = 1e-6;

/// Origin of a constraint row.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum RowKind {
    /// `Σ_s μ_i(s) = 1`
    Normalization { var: usize },
    /// `Σ_{y_c : y_i = s} μ_c(y_c) = μ_i(s)` for the member at `position` of `factor`.
    Marginalization {
        factor: usize,
        position: usize,
        state: usize,
    },
}

/// `{ μ ≥ 0 : A μ = b }` over the `q` coordinates of a factor graph.
#[derive(Debug)]
pub struct LinearProgram {
    n_cols: usize,
    rows: Vec<Vec<(usize, f64)>>,
    rhs: Vec<f64>,
    kinds: Vec<RowKind>,
    reduced: OnceLock<ReducedSystem>,
}

impl Clone for LinearProgram {
    fn clone(&self) -> Self {
        LinearProgram {
            n_cols: self.n_cols,
            rows: self.rows.clone(),
            rhs: self.rhs.clone(),
            kinds: self.kinds.clone(),
            reduced: OnceLock::new(),
        }
    }
}

/// Linearly independent subset of the rows in column-major sparse form.
#[derive(Debug)]
pub(crate) struct ReducedSystem {
    pub(crate) row_ids: Vec<usize>,
    pub(crate) columns: Vec<Vec<(usize, f64)>>,
    pub(crate) rhs: Vec<f64>,
    pub(crate) consistent: bool,
}

impl LinearProgram {
    /// Generic equality-form program; rows are sparse `(column, coefficient)` lists.
    pub fn new(n_cols: usize, rows: Vec<Vec<(usize, f64)>>, rhs: Vec<f64>) -> Self {
        assert_eq!(rows.len(), rhs.len());
        assert!(rows.iter().flatten().all(|&(j, _)| j < n_cols));
        let kinds = (0..rows.len())
            .map(|var| RowKind::Normalization { var })
            .collect();
        LinearProgram {
            n_cols,
            rows,
            rhs,
            kinds,
            reduced: OnceLock::new(),
        }
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn rows(&self) -> &[Vec<(usize, f64)>] {
        &self.rows
    }

    pub fn rhs(&self) -> &[f64] {
        &self.rhs
    }

    pub fn row_kinds(&self) -> &[RowKind] {
        &self.kinds
    }

    /// Largest absolute residual `|A μ − b|` over all rows.
    pub fn max_residual(&self, mu: &[f64]) -> f64 {
        self.rows
            .iter()
            .zip(&self.rhs)
            .map(|(row, b)| (row.iter().map(|&(j, a)| a * mu[j]).sum::<f64>() - b).abs())
            .fold(0.0, f64::max)
    }

    /// True when `μ ≥ −tol` and every row holds to `tol`.
    pub fn is_feasible(&self, mu: &[f64], tol: f64) -> bool {
        mu.len() == self.n_cols && mu.iter().all(|&v| v >= -tol) && self.max_residual(mu) <= tol
    }

    pub(crate) fn reduced(&self) -> &ReducedSystem {
        self.reduced.get_or_init(|| reduce_rows(self))
    }

    /// Free-MPS text of `max c·μ` over this polytope, for cross-checking
    /// against external solvers.
    pub fn to_mps(&self, name: &str, c: &[f64]) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "NAME {name}");
        let _ = writeln!(out, "OBJSENSE\n    MAX");
        let _ = writeln!(out, "ROWS\n N obj");
        for r in 0..self.rows.len() {
            let _ = writeln!(out, " E r{r}");
        }
        let mut columns: Vec<Vec<(usize, f64)>> = vec![Vec::new(); self.n_cols];
        for (r, row) in self.rows.iter().enumerate() {
            for &(j, a) in row {
                columns[j].push((r, a));
            }
        }
        let _ = writeln!(out, "COLUMNS");
        for (j, col) in columns.iter().enumerate() {
            let cj = c.get(j).copied().unwrap_or(0.0);
            if cj != 0.0 {
                let _ = writeln!(out, "    x{j} obj {cj:e}");
            }
            for &(r, a) in col {
                let _ = writeln!(out, "    x{j} r{r} {a:e}");
            }
        }
        let _ = writeln!(out, "RHS");
        for (r, b) in self.rhs.iter().enumerate() {
            if *b != 0.0 {
                let _ = writeln!(out, "    rhs r{r} {b:e}");
            }
        }
        let _ = writeln!(out, "ENDATA");
        out
    }
}

/// Normalization rows for every variable, then one marginalization row per
/// (factor, member, member state). Redundant rows are kept.
pub fn build_local_polytope(graph: &FactorGraph) -> LinearProgram {
    let mut rows = Vec::new();
    let mut rhs = Vec::new();
    let mut kinds = Vec::new();
    for var in 0..graph.n_vars() {
        rows.push(graph.var_block(var).map(|k| (k, 1.0)).collect());
        rhs.push(1.0);
        kinds.push(RowKind::Normalization { var });
    }
    for factor in 0..graph.n_factors() {
        let scope = graph.scope(factor);
        let block = graph.factor_block(factor);
        let assignments: Vec<Vec<usize>> = (0..block.len())
            .map(|local| graph.factor_assignment(factor, local))
            .collect();
        for (position, &var) in scope.iter().enumerate() {
            for state in 0..graph.cardinality(var) {
                let mut row: Vec<(usize, f64)> = assignments
                    .iter()
                    .enumerate()
                    .filter(|(_, a)| a[position] == state)
                    .map(|(local, _)| (block.start + local, 1.0))
                    .collect();
                row.push((graph.var_coord(var, state), -1.0));
                rows.push(row);
                rhs.push(0.0);
                kinds.push(RowKind::Marginalization {
                    factor,
                    position,
                    state,
                });
            }
        }
    }
    LinearProgram {
        n_cols: graph.dim(),
        rows,
        rhs,
        kinds,
        reduced: OnceLock::new(),
    }
}

/// Drops linearly dependent rows by Gaussian elimination with partial
/// pivoting; records whether the dropped rows were consistent.
fn reduce_rows(lp: &LinearProgram) -> ReducedSystem {
    let n = lp.n_cols;
    let m = lp.rows.len();
    let mut dense: Vec<Vec<f64>> = lp
        .rows
        .iter()
        .zip(&lp.rhs)
        .map(|(row, &b)| {
            let mut v = vec![0.0; n + 1];
            for &(j, a) in row {
                v[j] += a;
            }
            v[n] = b;
            v
        })
        .collect();
    let mut ids: Vec<usize> = (0..m).collect();
    let mut rank = 0;
    for col in 0..n {
        if rank == m {
            break;
        }
        let (piv, best) = (rank..m)
            .map(|r| (r, dense[r][col].abs()))
            .fold((rank, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
        if best <= 1e-10 {
            continue;
        }
        dense.swap(rank, piv);
        ids.swap(rank, piv);
        let pivot_row = dense[rank].clone();
        for row in dense.iter_mut().skip(rank + 1) {
            let f = row[col] / pivot_row[col];
            if f != 0.0 {
                for (x, p) in row[col..].iter_mut().zip(&pivot_row[col..]) {
                    *x -= f * p;
                }
            }
        }
        rank += 1;
    }
    let consistent = dense[rank..].iter().all(|row| row[n].abs() <= 1e-9);
    let mut row_ids: Vec<usize> = ids[..rank].to_vec();
    row_ids.sort_unstable();

    let mut columns: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    let mut rhs = Vec::with_capacity(rank);
    for (r, &orig) in row_ids.iter().enumerate() {
        // rows are sign-normalized so that b ≥ 0 and artificials start feasible
        let sign = if lp.rhs[orig] < 0.0 { -1.0 } else { 1.0 };
        for &(j, a) in &lp.rows[orig] {
            columns[j].push((r, sign * a));
        }
        rhs.push(sign * lp.rhs[orig]);
    }
    for col in &mut columns {
        col.sort_by_key(|&(r, _)| r);
    }
    ReducedSystem {
        row_ids,
        columns,
        rhs,
        consistent,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LpStatus {
    Optimal,
    Unbounded,
    Infeasible,
}

/// Basic variables of a simplex basis, one per independent row. Indices at or
/// above `n_structural` denote artificial columns.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Basis {
    pub(crate) vars: Vec<usize>,
    pub(crate) n_structural: usize,
}

impl Basis {
    /// Basic structural coordinates, sorted.
    pub fn structural(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self
            .vars
            .iter()
            .copied()
            .filter(|&j| j < self.n_structural)
            .collect();
        v.sort_unstable();
        v
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }
}

/// A basic solution of the local polytope program.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VertexSolution {
    pub mu: ScoreVector,
    pub objective: f64,
    pub basis: Basis,
    pub status: LpStatus,
    pub iterations: usize,
}

/// Integrality verdict for a point of the polytope.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct IntegralityClass {
    pub integral: bool,
    /// Fraction of singleton coordinates farther than `tol` from {0, 1}.
    pub fractional_singleton_fraction: f64,
}

impl IntegralityClass {
    /// Whether at most `max_fraction` of the singleton coordinates are fractional.
    pub fn at_most_fractional(&self, max_fraction: f64) -> bool {
        self.fractional_singleton_fraction <= max_fraction + 1e-12
    }
}

pub fn classify_integrality(graph: &FactorGraph, mu: &[f64], tol: f64) -> IntegralityClass {
    let is_frac = |v: f64| v.abs() > tol && (v - 1.0).abs() > tol;
    let integral = !mu.iter().any(|&v| is_frac(v));
    let n_single = graph.n_singleton_coords();
    let frac = mu[..n_single].iter().filter(|&&v| is_frac(v)).count();
    IntegralityClass {
        integral,
        fractional_singleton_fraction: if n_single == 0 {
            0.0
        } else {
            frac as f64 / n_single as f64
        },
    }
}

pub(crate) fn check_objective(lp: &LinearProgram, c: &[f64]) -> crate::Result<()> {
    check_len("objective", lp.n_cols, c.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::factor_graph::assignment_to_mu;

    #[test]
    fn single_variable_has_one_row() {
        let g = FactorGraph::new(vec![2], vec![]).unwrap();
        let lp = build_local_polytope(&g);
        assert_eq!(lp.n_rows(), 1);
        assert_eq!(lp.rows()[0], vec![(0, 1.0), (1, 1.0)]);
        assert_eq!(lp.rhs(), &[1.0]);
    }

    #[test]
    fn edge_model_row_count() {
        let g = FactorGraph::binary_pairwise(2, &[(0, 1)]).unwrap();
        let lp = build_local_polytope(&g);
        let norm = lp
            .row_kinds()
            .iter()
            .filter(|k| matches!(k, RowKind::Normalization { .. }))
            .count();
        assert_eq!((norm, lp.n_rows() - norm), (2, 4));
        // one redundant marginalization row per edge
        assert_eq!(lp.reduced().row_ids.len(), 5);
        assert!(lp.reduced().consistent);
    }

    #[test]
    fn labelings_are_feasible_exactly() {
        let g = FactorGraph::new(vec![2, 3, 2], vec![vec![0, 1], vec![1, 2], vec![0, 1, 2]]).unwrap();
        let lp = build_local_polytope(&g);
        for a in 0..2 {
            for b in 0..3 {
                for c in 0..2 {
                    let mu = assignment_to_mu(&g, &[a, b, c]).unwrap();
                    assert_eq!(lp.max_residual(&mu), 0.0);
                }
            }
        }
    }

    #[test]
    fn integrality_classification() {
        let g = FactorGraph::binary_pairwise(3, &[(0, 1), (0, 2), (1, 2)]).unwrap();
        let mu = assignment_to_mu(&g, &[1, 0, 1]).unwrap();
        let c = classify_integrality(&g, &mu, INTEGRALITY_TOL);
        assert!(c.integral);
        assert_eq!(c.fractional_singleton_fraction, 0.0);

        let mut half = vec![0.5; 6];
        for _ in 0..3 {
            half.extend([0.0, 0.5, 0.5, 0.0]);
        }
        let c = classify_integrality(&g, &half, INTEGRALITY_TOL);
        assert!(!c.integral);
        assert_eq!(c.fractional_singleton_fraction, 1.0);

        let g10 = FactorGraph::binary_pairwise(10, &[]).unwrap();
        let mut mu = vec![];
        for i in 0..10 {
            if i == 3 {
                mu.extend([0.5, 0.5]);
            } else {
                mu.extend([1.0, 0.0]);
            }
        }
        let c = classify_integrality(&g10, &mu, INTEGRALITY_TOL);
        assert!(!c.integral);
        assert!((c.fractional_singleton_fraction - 0.1).abs() < 1e-15);
        assert!(c.at_most_fractional(0.1));
    }

    #[test]
    fn mps_dump_mentions_every_row() {
        let g = FactorGraph::binary_pairwise(2, &[(0, 1)]).unwrap();
        let lp = build_local_polytope(&g);
        let text = lp.to_mps("edge", &[0.0, 1.0, 0.0, 2.0, 0.0, 0.0, 0.0, 0.0]);
        assert!(text.starts_with("NAME edge"));
        assert!(text.contains(" E r5"));
        assert!(text.contains("x1 obj"));
        assert!(text.trim_end().ends_with("ENDATA"));
    }
}
