//! MAP inference: LP relaxation, branch-and-bound ILP, exhaustive
//! enumeration, loss-augmented variants and rounding.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factor_graph::{assignment_to_mu, check_len, FactorGraph, ScoreVector};
use crate::polytope_lp::{
    build_local_polytope, classify_integrality, simplex_solve_with, Basis, LinearProgram,
    LpStatus, SolveOptions, INTEGRALITY_TOL,
};

/// Largest state space `exhaustive_map` will enumerate.
pub const EXHAUSTIVE_LIMIT: u128 = 1 << 20;

/// Open-node count beyond which branch-and-bound goes depth-first.
const DFS_THRESHOLD: usize = 100_000;

const DEFAULT_NODE_LIMIT: usize = 1_000_000;

/// Tie tolerance for rounding singleton marginals.
const ROUND_TIE_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InferenceMode {
    Relaxed,
    Exact,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapMode {
    Relaxed,
    Exact,
    Exhaustive,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MapResult {
    pub mu: ScoreVector,
    pub value: f64,
    pub mode: MapMode,
    pub integral: bool,
    pub fractional_singleton_fraction: f64,
    /// Decoded labeling when the solution is integral.
    pub labeling: Option<Vec<usize>>,
    /// Final simplex basis (relaxed mode), usable as a warm start.
    #[serde(skip)]
    pub basis: Option<Basis>,
}

/// Loss-augmented solution, with the objective split into its parts.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LossAugmented {
    pub map: MapResult,
    /// `θ · μ`
    pub model_score: f64,
    /// `ℓ · μ`
    pub loss: f64,
}

impl LossAugmented {
    /// `θ·(μ − μ_anchor) + ℓ·μ` for an anchor of score `anchor_score = θ·μ_anchor`.
    pub fn hinge(&self, anchor_score: f64) -> f64 {
        self.model_score - anchor_score + self.loss
    }
}

/// A graph with its prebuilt local polytope. Reuse one solver across many
/// score vectors to amortize setup and to allow warm starts.
#[derive(Clone, Debug)]
pub struct MapSolver<'g> {
    graph: &'g FactorGraph,
    lp: LinearProgram,
    pub integrality_tol: f64,
    pub node_limit: usize,
}

impl<'g> MapSolver<'g> {
    pub fn new(graph: &'g FactorGraph) -> Self {
        MapSolver {
            graph,
            lp: build_local_polytope(graph),
            integrality_tol: INTEGRALITY_TOL,
            node_limit: DEFAULT_NODE_LIMIT,
        }
    }

    pub fn graph(&self) -> &'g FactorGraph {
        self.graph
    }

    pub fn polytope(&self) -> &LinearProgram {
        &self.lp
    }

    pub fn lp_map(&self, theta: &[f64]) -> Result<MapResult> {
        self.lp_map_warm(theta, None)
    }

    /// Optimal vertex of the local polytope, optionally starting from a
    /// previously returned basis.
    pub fn lp_map_warm(&self, theta: &[f64], warm: Option<&Basis>) -> Result<MapResult> {
        check_len("score vector", self.graph.dim(), theta.len())?;
        let sol = self.solve(theta, None, warm)?;
        match sol {
            Some(r) => Ok(r),
            None => Err(Error::NotOptimal("infeasible")),
        }
    }

    fn solve(
        &self,
        theta: &[f64],
        excluded: Option<&[bool]>,
        warm: Option<&Basis>,
    ) -> Result<Option<MapResult>> {
        let sol = simplex_solve_with(
            &self.lp,
            theta,
            SolveOptions {
                excluded,
                warm_start: warm,
                max_iterations: None,
            },
        )?;
        match sol.status {
            LpStatus::Optimal => {}
            LpStatus::Infeasible => return Ok(None),
            LpStatus::Unbounded => return Err(Error::NotOptimal("unbounded")),
        }
        let class = classify_integrality(self.graph, &sol.mu, self.integrality_tol);
        let labeling = class
            .integral
            .then(|| self.graph.decode_singletons(&sol.mu, ROUND_TIE_TOL));
        Ok(Some(MapResult {
            value: sol.objective,
            mu: sol.mu,
            mode: MapMode::Relaxed,
            integral: class.integral,
            fractional_singleton_fraction: class.fractional_singleton_fraction,
            labeling,
            basis: Some(sol.basis),
        }))
    }

    pub fn ilp_map(&self, theta: &[f64]) -> Result<MapResult> {
        let root = self.lp_map(theta)?;
        self.ilp_map_from_root(theta, &root)
    }

    /// Branch-and-bound seeded with an already solved root relaxation.
    pub fn ilp_map_from_root(&self, theta: &[f64], root: &MapResult) -> Result<MapResult> {
        let excluded = vec![false; self.graph.dim()];
        self.branch_and_bound(theta, excluded, Some(root))?
            .ok_or(Error::NotOptimal("infeasible"))
    }

    /// Exact MAP restricted to labelings that avoid every excluded singleton
    /// coordinate. `None` when no labeling qualifies.
    pub fn ilp_map_excluding(&self, theta: &[f64], excluded: &[bool]) -> Result<Option<MapResult>> {
        check_len("score vector", self.graph.dim(), theta.len())?;
        check_len("excluded mask", self.graph.dim(), excluded.len())?;
        self.branch_and_bound(theta, excluded.to_vec(), None)
    }

    fn branch_and_bound(
        &self,
        theta: &[f64],
        root_excluded: Vec<bool>,
        root: Option<&MapResult>,
    ) -> Result<Option<MapResult>> {
        let g = self.graph;
        let tol = self.integrality_tol;
        let n_single = g.n_singleton_coords();
        let mut incumbent: Option<(f64, Vec<usize>)> = None;
        let mut seq = 0u64;
        let mut heap = BinaryHeap::new();
        let mut stack: Vec<Node> = Vec::new();
        heap.push(Node {
            bound: f64::INFINITY,
            seq,
            excluded: root_excluded,
            warm: None,
        });
        let mut processed = 0usize;
        let mut first = true;

        while let Some(node) = stack.pop().or_else(|| heap.pop()) {
            let prune_at = |inc: &Option<(f64, Vec<usize>)>| {
                inc.as_ref()
                    .map(|(v, _)| v + 1e-9 * (1.0 + v.abs()))
                    .unwrap_or(f64::NEG_INFINITY)
            };
            if node.bound <= prune_at(&incumbent) {
                continue;
            }
            processed += 1;
            if processed > self.node_limit {
                return Err(Error::NodeLimit(self.node_limit));
            }

            let relaxed = match (first, root) {
                (true, Some(r)) => Some(r.clone()),
                _ => self.solve(theta, Some(&node.excluded), node.warm.as_ref())?,
            };
            first = false;
            let Some(relaxed) = relaxed else { continue };

            if incumbent.is_none() {
                // rounding gives a cheap first incumbent
                let y = self.round_respecting(&relaxed.mu, &node.excluded);
                if let Some(y) = y {
                    incumbent = Some((g.labeling_score(theta, &y), y));
                }
            }
            if relaxed.value <= prune_at(&incumbent) {
                continue;
            }

            let branch = (0..n_single)
                .filter(|&k| {
                    let v = relaxed.mu[k];
                    v > tol && v < 1.0 - tol
                })
                .min_by(|&a, &b| {
                    let da = (relaxed.mu[a] - 0.5).abs();
                    let db = (relaxed.mu[b] - 0.5).abs();
                    da.total_cmp(&db).then(a.cmp(&b))
                });
            let Some(k) = branch else {
                let y = g.decode_singletons(&relaxed.mu, ROUND_TIE_TOL);
                let v = g.labeling_score(theta, &y);
                if incumbent.as_ref().is_none_or(|(best, _)| v > *best) {
                    incumbent = Some((v, y));
                }
                continue;
            };

            let var = match g.coord(k) {
                crate::factor_graph::Coord::Var { var, .. } => var,
                _ => unreachable!("branching only on singleton coordinates"),
            };
            let mut up = node.excluded.clone();
            for other in g.var_block(var) {
                if other != k {
                    up[other] = true;
                }
            }
            let mut down = node.excluded;
            down[k] = true;
            for excluded in [up, down] {
                seq += 1;
                let child = Node {
                    bound: relaxed.value,
                    seq,
                    excluded,
                    warm: relaxed.basis.clone(),
                };
                if heap.len() + stack.len() >= DFS_THRESHOLD {
                    stack.push(child);
                } else {
                    heap.push(child);
                }
            }
        }

        Ok(incumbent.map(|(value, y)| {
            let mu = assignment_to_mu(g, &y).expect("decoded labeling is valid");
            MapResult {
                mu,
                value,
                mode: MapMode::Exact,
                integral: true,
                fractional_singleton_fraction: 0.0,
                labeling: Some(y),
                basis: None,
            }
        }))
    }

    /// Singleton-argmax rounding among non-excluded states.
    fn round_respecting(&self, mu: &[f64], excluded: &[bool]) -> Option<Vec<usize>> {
        (0..self.graph.n_vars())
            .map(|var| {
                let block = self.graph.var_block(var);
                let mut best: Option<usize> = None;
                for (s, k) in block.enumerate() {
                    if excluded[k] {
                        continue;
                    }
                    if best.is_none_or(|b| mu[k] > mu[self.graph.var_coord(var, b)] + ROUND_TIE_TOL) {
                        best = Some(s);
                    }
                }
                best
            })
            .collect()
    }

    pub fn loss_augmented(
        &self,
        theta: &[f64],
        loss: &[f64],
        mode: InferenceMode,
        warm: Option<&Basis>,
    ) -> Result<LossAugmented> {
        check_len("loss vector", theta.len(), loss.len())?;
        let combined: Vec<f64> = theta.iter().zip(loss).map(|(a, b)| a + b).collect();
        let map = match mode {
            InferenceMode::Relaxed => self.lp_map_warm(&combined, warm)?,
            InferenceMode::Exact => {
                let root = self.lp_map_warm(&combined, warm)?;
                let basis = root.basis.clone();
                let mut r = self.ilp_map_from_root(&combined, &root)?;
                r.basis = basis;
                r
            }
        };
        let model_score = crate::factor_graph::dot(theta, &map.mu);
        let loss_part = crate::factor_graph::dot(loss, &map.mu);
        Ok(LossAugmented {
            map,
            model_score,
            loss: loss_part,
        })
    }
}

struct Node {
    bound: f64,
    seq: u64,
    excluded: Vec<bool>,
    warm: Option<Basis>,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Node {}

impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Node {
    // max-heap: larger bound first, then older node
    fn cmp(&self, other: &Self) -> Ordering {
        self.bound
            .total_cmp(&other.bound)
            .then(other.seq.cmp(&self.seq))
    }
}

pub fn lp_map(graph: &FactorGraph, theta: &ScoreVector) -> Result<MapResult> {
    MapSolver::new(graph).lp_map(theta)
}

pub fn ilp_map(graph: &FactorGraph, theta: &ScoreVector) -> Result<MapResult> {
    MapSolver::new(graph).ilp_map(theta)
}

pub fn loss_augmented_map(
    graph: &FactorGraph,
    theta: &ScoreVector,
    loss: &ScoreVector,
    mode: InferenceMode,
) -> Result<LossAugmented> {
    MapSolver::new(graph).loss_augmented(theta, loss, mode, None)
}

/// Calls `f` on every labeling in lexicographic order (first variable most
/// significant).
pub fn for_each_labeling(graph: &FactorGraph, mut f: impl FnMut(&[usize])) -> Result<()> {
    let size = graph.state_space_size();
    if size > EXHAUSTIVE_LIMIT {
        return Err(Error::StateSpaceTooLarge {
            size,
            limit: EXHAUSTIVE_LIMIT,
        });
    }
    let n = graph.n_vars();
    let mut y = vec![0usize; n];
    loop {
        f(&y);
        let mut pos = n;
        loop {
            if pos == 0 {
                return Ok(());
            }
            pos -= 1;
            y[pos] += 1;
            if y[pos] < graph.cardinality(pos) {
                break;
            }
            y[pos] = 0;
        }
    }
}

/// Exact MAP by enumeration; ties go to the lexicographically smallest labeling.
pub fn exhaustive_map(graph: &FactorGraph, theta: &ScoreVector) -> Result<MapResult> {
    check_len("score vector", graph.dim(), theta.len())?;
    let mut best: Option<(f64, Vec<usize>)> = None;
    for_each_labeling(graph, |y| {
        let v = graph.labeling_score(theta, y);
        if best.as_ref().is_none_or(|(b, _)| v > *b) {
            best = Some((v, y.to_vec()));
        }
    })?;
    let (value, y) = best.expect("state space is nonempty");
    Ok(MapResult {
        mu: assignment_to_mu(graph, &y)?,
        value,
        mode: MapMode::Exhaustive,
        integral: true,
        fractional_singleton_fraction: 0.0,
        labeling: Some(y),
        basis: None,
    })
}

/// Per-variable argmax of the singleton marginals, ties to the lower state.
pub fn round_solution(graph: &FactorGraph, mu: &ScoreVector) -> Result<Vec<usize>> {
    check_len("marginal vector", graph.dim(), mu.len())?;
    Ok(graph.decode_singletons(mu, ROUND_TIE_TOL))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn triangle() -> FactorGraph {
        FactorGraph::binary_pairwise(3, &[(0, 1), (0, 2), (1, 2)]).unwrap()
    }

    /// Second counterexample instance at unit weight: zero singleton scores,
    /// score 1 on every disagreeing edge assignment.
    fn frustrated_triangle() -> ScoreVector {
        let mut theta = vec![0.0; 6];
        for _ in 0..3 {
            theta.extend([0.0, 1.0, 1.0, 0.0]);
        }
        ScoreVector::from(theta)
    }

    #[test]
    fn attractive_chain_is_integral() {
        let g = FactorGraph::binary_pairwise(2, &[(0, 1)]).unwrap();
        let theta = ScoreVector::from(vec![0.0, 0.5, 0.0, 0.2, 1.0, 0.0, 0.0, 1.0]);
        let r = lp_map(&g, &theta).unwrap();
        assert!(r.integral);
        assert_eq!(r.labeling, Some(vec![1, 1]));
        assert!((r.value - 1.7).abs() < 1e-12);
    }

    #[test]
    fn frustrated_triangle_relaxation_is_loose() {
        let g = triangle();
        let theta = frustrated_triangle();
        let lp = lp_map(&g, &theta).unwrap();
        assert!(!lp.integral);
        assert!((lp.value - 3.0).abs() < 1e-9);
        assert!(lp.mu[..6].iter().all(|&v| (v - 0.5).abs() < 1e-9));
        let ilp = ilp_map(&g, &theta).unwrap();
        assert!((ilp.value - 2.0).abs() < 1e-12);
        assert!(ilp.integral);
        assert_eq!(round_solution(&g, &lp.mu).unwrap(), vec![0, 0, 0]);
    }

    #[test]
    fn zero_scores() {
        let g = triangle();
        let theta = ScoreVector::zeros(g.dim());
        assert_eq!(lp_map(&g, &theta).unwrap().value, 0.0);
        let ex = exhaustive_map(&g, &theta).unwrap();
        assert_eq!(ex.labeling, Some(vec![0, 0, 0]));
        assert_eq!(ex.value, 0.0);
    }

    #[test]
    fn exhaustive_single_variable() {
        let g = FactorGraph::new(vec![2], vec![]).unwrap();
        let r = exhaustive_map(&g, &ScoreVector::from(vec![3.0, 7.0])).unwrap();
        assert_eq!(r.labeling, Some(vec![1]));
        assert_eq!(r.value, 7.0);
    }

    #[test]
    fn exhaustive_refuses_huge_spaces() {
        let g = FactorGraph::binary_pairwise(21, &[]).unwrap();
        let err = exhaustive_map(&g, &ScoreVector::zeros(g.dim())).unwrap_err();
        assert!(matches!(err, Error::StateSpaceTooLarge { .. }));
    }

    #[test]
    fn zero_loss_matches_plain_inference() {
        let g = triangle();
        let theta = frustrated_triangle();
        let zero = ScoreVector::zeros(g.dim());
        let a = loss_augmented_map(&g, &theta, &zero, InferenceMode::Relaxed).unwrap();
        assert!((a.map.value - lp_map(&g, &theta).unwrap().value).abs() < 1e-12);
        assert_eq!(a.loss, 0.0);
        let e = loss_augmented_map(&g, &theta, &zero, InferenceMode::Exact).unwrap();
        assert!((e.map.value - 2.0).abs() < 1e-12);
    }

    #[test]
    fn hamming_loss_with_zero_scores_flips_everything() {
        let g = FactorGraph::binary_pairwise(2, &[(0, 1)]).unwrap();
        // ground truth (1, 0): loss 1/2 for each disagreeing variable
        let loss = ScoreVector::from(vec![0.5, 0.0, 0.0, 0.5, 0.0, 0.0, 0.0, 0.0]);
        let theta = ScoreVector::zeros(g.dim());
        for mode in [InferenceMode::Relaxed, InferenceMode::Exact] {
            let r = loss_augmented_map(&g, &theta, &loss, mode).unwrap();
            assert_eq!(round_solution(&g, &r.map.mu).unwrap(), vec![0, 1]);
            assert!((r.loss - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rounding_prefers_strictly_larger_marginal() {
        let g = FactorGraph::new(vec![2], vec![]).unwrap();
        let mu = ScoreVector::from(vec![0.5 - 1e-6, 0.5 + 1e-6]);
        assert_eq!(round_solution(&g, &mu).unwrap(), vec![1]);
        let mu = ScoreVector::from(vec![1.0, 0.0]);
        assert_eq!(round_solution(&g, &mu).unwrap(), vec![0]);
    }

    #[test]
    fn excluding_the_optimum_state_finds_runner_up() {
        let g = FactorGraph::new(vec![2], vec![]).unwrap();
        let solver = MapSolver::new(&g);
        let theta = [0.0, 5.0];
        let r = solver.ilp_map_excluding(&theta, &[false, true]).unwrap().unwrap();
        assert_eq!(r.value, 0.0);
        assert!(solver.ilp_map_excluding(&theta, &[true, true]).unwrap().is_none());
    }

    #[test]
    fn labelings_enumerate_lexicographically() {
        let g = FactorGraph::new(vec![2, 3], vec![]).unwrap();
        let mut seen = Vec::new();
        for_each_labeling(&g, |y| seen.push(y.to_vec())).unwrap();
        assert_eq!(seen.len(), 6);
        assert_eq!(seen[0], vec![0, 0]);
        assert_eq!(seen[1], vec![0, 1]);
        assert_eq!(seen[5], vec![1, 2]);
    }
}
