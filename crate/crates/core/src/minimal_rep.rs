//! Minimal `(η, θ̄)` representation of binary pairwise models, optimal edge
//! settlement, balance detection, γ-tightness certificates and the
//! half-integral oracle for the best fractional score.
//!
//! For a binary pairwise model the overcomplete score of a labeling equals
//! `Σ_i θ̄_i y_i + Σ_ij θ̄_ij y_i y_j + offset`, and the local polytope maps onto
//! `{ 0 ≤ η_i ≤ 1, max(0, η_i + η_j − 1) ≤ η_ij ≤ min(η_i, η_j) }`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factor_graph::{check_len, FactorGraph, ScoreVector};
use crate::inference::MapSolver;

/// Oracle size cap: `3^16` half-integral node patterns before pruning.
pub const ORACLE_MAX_VARS: usize = 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinimalScores {
    pub n_vars: usize,
    /// Edge endpoints in factor order, as `(scope[0], scope[1])`.
    pub edges: Vec<(usize, usize)>,
    pub theta_bar_node: Vec<f64>,
    pub theta_bar_edge: Vec<f64>,
    pub offset: f64,
}

fn require_binary_pairwise(graph: &FactorGraph) -> Result<()> {
    if graph.is_binary_pairwise() {
        Ok(())
    } else {
        Err(Error::UnsupportedClass(
            "minimal representation needs binary variables and pairwise factors".into(),
        ))
    }
}

pub fn to_minimal(graph: &FactorGraph, theta: &[f64]) -> Result<MinimalScores> {
    require_binary_pairwise(graph)?;
    check_len("score vector", graph.dim(), theta.len())?;
    let n = graph.n_vars();
    let mut node = vec![0.0; n];
    let mut offset = 0.0;
    for (i, t) in node.iter_mut().enumerate() {
        let b = graph.var_block(i);
        *t = theta[b.start + 1] - theta[b.start];
        offset += theta[b.start];
    }
    let mut edges = Vec::with_capacity(graph.n_factors());
    let mut edge = Vec::with_capacity(graph.n_factors());
    for c in 0..graph.n_factors() {
        let (i, j) = (graph.scope(c)[0], graph.scope(c)[1]);
        let b = graph.factor_block(c).start;
        let (t00, t01, t10, t11) = (theta[b], theta[b + 1], theta[b + 2], theta[b + 3]);
        node[i] += t10 - t00;
        node[j] += t01 - t00;
        edge.push(t11 + t00 - t01 - t10);
        offset += t00;
        edges.push((i, j));
    }
    Ok(MinimalScores {
        n_vars: n,
        edges,
        theta_bar_node: node,
        theta_bar_edge: edge,
        offset,
    })
}

/// Overcomplete scores realizing the given minimal parameters: `θ_i(1) = θ̄_i`,
/// `θ_ij(1,1) = θ̄_ij`, the offset on both states of variable 0.
pub fn from_minimal(ms: &MinimalScores) -> Result<(FactorGraph, ScoreVector)> {
    let graph = FactorGraph::binary_pairwise(ms.n_vars, &ms.edges)?;
    let mut theta = vec![0.0; graph.dim()];
    for (i, &t) in ms.theta_bar_node.iter().enumerate() {
        theta[graph.var_coord(i, 1)] = t;
    }
    if ms.n_vars > 0 {
        theta[0] += ms.offset;
        theta[1] += ms.offset;
    }
    for (c, &t) in ms.theta_bar_edge.iter().enumerate() {
        theta[graph.factor_block(c).start + 3] = t;
    }
    Ok((graph, ScoreVector::from(theta)))
}

impl MinimalScores {
    /// `f(η)` without the offset.
    pub fn objective(&self, eta: &EtaPoint) -> f64 {
        let nodes: f64 = self
            .theta_bar_node
            .iter()
            .zip(&eta.eta_node)
            .map(|(a, b)| a * b)
            .sum();
        let edges: f64 = self
            .theta_bar_edge
            .iter()
            .zip(&eta.eta_edge)
            .map(|(a, b)| a * b)
            .sum();
        nodes + edges
    }

    /// Score of a full labeling, offset included.
    pub fn labeling_score(&self, y: &[usize]) -> f64 {
        let eta = EtaPoint::from_labeling(self, y);
        self.objective(&eta) + self.offset
    }

    fn is_attractive(&self, e: usize) -> bool {
        self.theta_bar_edge[e] >= 0.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EtaPoint {
    pub eta_node: Vec<f64>,
    pub eta_edge: Vec<f64>,
}

impl EtaPoint {
    pub fn from_labeling(ms: &MinimalScores, y: &[usize]) -> Self {
        let eta_node: Vec<f64> = y.iter().map(|&s| s as f64).collect();
        let eta_edge = ms
            .edges
            .iter()
            .map(|&(i, j)| (y[i] * y[j]) as f64)
            .collect();
        EtaPoint { eta_node, eta_edge }
    }

    pub fn is_feasible(&self, ms: &MinimalScores, tol: f64) -> bool {
        self.eta_node.iter().all(|&v| (-tol..=1.0 + tol).contains(&v))
            && ms.edges.iter().zip(&self.eta_edge).all(|(&(i, j), &e)| {
                let (a, b) = (self.eta_node[i], self.eta_node[j]);
                e >= (a + b - 1.0).max(0.0) - tol && e <= a.min(b) + tol
            })
    }

    /// Overcomplete marginal vector on the graph produced by `from_minimal`.
    pub fn to_mu(&self, graph: &FactorGraph) -> ScoreVector {
        let mut mu = vec![0.0; graph.dim()];
        for (i, &e) in self.eta_node.iter().enumerate() {
            mu[graph.var_coord(i, 0)] = 1.0 - e;
            mu[graph.var_coord(i, 1)] = e;
        }
        for (c, &e) in self.eta_edge.iter().enumerate() {
            let (i, j) = (graph.scope(c)[0], graph.scope(c)[1]);
            let (a, b) = (self.eta_node[i], self.eta_node[j]);
            let s = graph.factor_block(c).start;
            mu[s] = 1.0 + e - a - b;
            mu[s + 1] = b - e;
            mu[s + 2] = a - e;
            mu[s + 3] = e;
        }
        ScoreVector::from(mu)
    }
}

/// Optimal edge values for fixed node values: `min(η_i, η_j)` on attractive
/// edges, `max(0, η_i + η_j − 1)` on repulsive ones (`θ̄_ij = 0` counts as attractive).
pub fn settle_edges(ms: &MinimalScores, eta_nodes: &[f64]) -> EtaPoint {
    let eta_edge = ms
        .edges
        .iter()
        .enumerate()
        .map(|(e, &(i, j))| {
            let (a, b) = (eta_nodes[i], eta_nodes[j]);
            if ms.is_attractive(e) {
                a.min(b)
            } else {
                (a + b - 1.0).max(0.0)
            }
        })
        .collect();
    EtaPoint {
        eta_node: eta_nodes.to_vec(),
        eta_edge,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeKind {
    Attractive,
    Repulsive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Balance {
    pub edge_kinds: Vec<EdgeKind>,
    pub balanced: bool,
    /// Variables to flip so that every edge becomes attractive.
    pub flip_set: Option<Vec<usize>>,
}

/// Two-colors the graph by repulsive-edge parity. The lowest-index variable of
/// each connected component stays unflipped.
pub fn classify_and_balance(ms: &MinimalScores) -> Balance {
    let n = ms.n_vars;
    let edge_kinds: Vec<EdgeKind> = (0..ms.edges.len())
        .map(|e| {
            if ms.is_attractive(e) {
                EdgeKind::Attractive
            } else {
                EdgeKind::Repulsive
            }
        })
        .collect();
    let mut adj: Vec<Vec<(usize, bool)>> = vec![Vec::new(); n];
    for (&(i, j), kind) in ms.edges.iter().zip(&edge_kinds) {
        let rep = *kind == EdgeKind::Repulsive;
        adj[i].push((j, rep));
        adj[j].push((i, rep));
    }
    let mut parity: Vec<Option<bool>> = vec![None; n];
    let mut balanced = true;
    for root in 0..n {
        if parity[root].is_some() {
            continue;
        }
        parity[root] = Some(false);
        let mut queue = std::collections::VecDeque::from([root]);
        while let Some(u) = queue.pop_front() {
            let pu = parity[u].expect("visited");
            for &(v, rep) in &adj[u] {
                let want = pu ^ rep;
                match parity[v] {
                    None => {
                        parity[v] = Some(want);
                        queue.push_back(v);
                    }
                    Some(pv) if pv != want => balanced = false,
                    _ => {}
                }
            }
        }
    }
    let flip_set = balanced.then(|| {
        (0..n)
            .filter(|&i| parity[i] == Some(true))
            .collect::<Vec<_>>()
    });
    Balance {
        edge_kinds,
        balanced,
        flip_set,
    }
}

/// Scores of the model with the listed variables relabeled `y_i ← 1 − y_i`,
/// so that `flipped(y') = θ(y)` for the corresponding labelings.
pub fn flip_variables(graph: &FactorGraph, theta: &[f64], flip: &[usize]) -> Result<ScoreVector> {
    require_binary_pairwise(graph)?;
    check_len("score vector", graph.dim(), theta.len())?;
    let mut flipped = vec![false; graph.n_vars()];
    for &i in flip {
        if i >= graph.n_vars() {
            return Err(Error::InvalidModel(format!("flip variable {i} out of range")));
        }
        flipped[i] = true;
    }
    let mut out = theta.to_vec();
    for (i, &f) in flipped.iter().enumerate() {
        if f {
            out.swap(graph.var_coord(i, 0), graph.var_coord(i, 1));
        }
    }
    for c in 0..graph.n_factors() {
        let (i, j) = (graph.scope(c)[0], graph.scope(c)[1]);
        let s = graph.factor_block(c).start;
        for a in 0..2 {
            for b in 0..2 {
                let src = (a ^ flipped[i] as usize) * 2 + (b ^ flipped[j] as usize);
                out[s + a * 2 + b] = theta[s + src];
            }
        }
    }
    Ok(ScoreVector::from(out))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SecondBest {
    pub best: f64,
    pub best_labeling: Vec<usize>,
    /// Best score among labelings other than `best_labeling`; `−∞` if none exist.
    pub second_best: f64,
}

/// Forces each variable in turn off its optimal state and re-solves exactly;
/// the second best is the maximum over those trials.
pub fn second_best(graph: &FactorGraph, theta: &[f64]) -> Result<SecondBest> {
    let solver = MapSolver::new(graph);
    let best = solver.ilp_map(theta)?;
    let y = best.labeling.clone().expect("exact result carries a labeling");
    let mut second = f64::NEG_INFINITY;
    let mut excluded = vec![false; graph.dim()];
    for (i, &s) in y.iter().enumerate() {
        let k = graph.var_coord(i, s);
        excluded[k] = true;
        if let Some(r) = solver.ilp_map_excluding(theta, &excluded)? {
            second = second.max(r.value);
        }
        excluded[k] = false;
    }
    Ok(SecondBest {
        best: best.value,
        best_labeling: y,
        second_best: second,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CertificateKind {
    BalancedUnique,
    StrongSingleton,
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Witness {
    FlipSet {
        flip_set: Vec<usize>,
        best: f64,
        second_best: f64,
        alpha: f64,
    },
    Unbalanced,
    NonUniqueOptimum {
        best: f64,
        second_best: f64,
    },
    SingletonStrength {
        beta: f64,
        /// Largest β each variable satisfies on its own.
        per_variable_beta: Vec<f64>,
        satisfied_fraction: f64,
    },
    Unsupported {
        reason: String,
    },
}

/// A claim that `I* ≥ F* + gamma`, with the data that justifies it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub kind: CertificateKind,
    pub gamma: f64,
    pub witness: Witness,
}

impl Certificate {
    fn none(witness: Witness) -> Self {
        Certificate {
            kind: CertificateKind::None,
            gamma: 0.0,
            witness,
        }
    }

    pub fn is_some(&self) -> bool {
        self.kind != CertificateKind::None
    }
}

const UNIQUENESS_TOL: f64 = 1e-9;

/// Balanced model with a unique optimum: `γ = (I* − second best) / 2`.
pub fn balanced_certificate(graph: &FactorGraph, theta: &[f64]) -> Result<Certificate> {
    let ms = match to_minimal(graph, theta) {
        Ok(ms) => ms,
        Err(Error::UnsupportedClass(reason)) => {
            return Ok(Certificate::none(Witness::Unsupported { reason }))
        }
        Err(e) => return Err(e),
    };
    let balance = classify_and_balance(&ms);
    let Some(flip_set) = balance.flip_set else {
        return Ok(Certificate::none(Witness::Unbalanced));
    };
    let sb = second_best(graph, theta)?;
    let alpha = sb.best - sb.second_best;
    if alpha.is_nan() || sb.second_best >= sb.best - UNIQUENESS_TOL {
        return Ok(Certificate::none(Witness::NonUniqueOptimum {
            best: sb.best,
            second_best: sb.second_best,
        }));
    }
    Ok(Certificate {
        kind: CertificateKind::BalancedUnique,
        gamma: alpha / 2.0,
        witness: Witness::FlipSet {
            flip_set,
            best: sb.best,
            second_best: sb.second_best,
            alpha,
        },
    })
}

/// Per-variable strength `β_i = max(θ̄_i + Σ_{N⁻} θ̄_ij, −θ̄_i − Σ_{N⁺} θ̄_ij)`.
pub fn singleton_strengths(ms: &MinimalScores) -> Vec<f64> {
    let mut rep_sum = vec![0.0; ms.n_vars];
    let mut att_sum = vec![0.0; ms.n_vars];
    for (&(i, j), &t) in ms.edges.iter().zip(&ms.theta_bar_edge) {
        if t > 0.0 {
            att_sum[i] += t;
            att_sum[j] += t;
        } else if t < 0.0 {
            rep_sum[i] += t;
            rep_sum[j] += t;
        }
    }
    ms.theta_bar_node
        .iter()
        .enumerate()
        .map(|(i, &t)| (t + rep_sum[i]).max(-t - att_sum[i]))
        .collect()
}

/// Strong singletons: every variable clears its condition by `β ≥ beta_min`,
/// `β > 0`, giving `γ = β / 2`.
pub fn singleton_certificate(graph: &FactorGraph, theta: &[f64], beta_min: f64) -> Result<Certificate> {
    let ms = match to_minimal(graph, theta) {
        Ok(ms) => ms,
        Err(Error::UnsupportedClass(reason)) => {
            return Ok(Certificate::none(Witness::Unsupported { reason }))
        }
        Err(e) => return Err(e),
    };
    let per_variable_beta = singleton_strengths(&ms);
    let beta = per_variable_beta
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    let satisfied = per_variable_beta
        .iter()
        .filter(|&&b| b > 0.0 && b >= beta_min)
        .count();
    let satisfied_fraction = if ms.n_vars == 0 {
        0.0
    } else {
        satisfied as f64 / ms.n_vars as f64
    };
    let witness = Witness::SingletonStrength {
        beta,
        per_variable_beta,
        satisfied_fraction,
    };
    if ms.n_vars > 0 && beta > 0.0 && beta >= beta_min {
        Ok(Certificate {
            kind: CertificateKind::StrongSingleton,
            gamma: beta / 2.0,
            witness,
        })
    } else {
        Ok(Certificate::none(witness))
    }
}

/// Best settled half-integral point with at least one node at ½.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FractionalPoint {
    /// `f(η)` without the offset.
    pub value: f64,
    pub eta_node: Vec<f64>,
}

/// Enumerates `η_node ∈ {0, ½, 1}^n` with at least one ½, settles the edges
/// and returns the best. Branches are pruned against an optimistic bound on
/// the not-yet-assigned variables. `None` when `n = 0`.
pub fn best_fractional_point(ms: &MinimalScores) -> Result<Option<FractionalPoint>> {
    let n = ms.n_vars;
    if n > ORACLE_MAX_VARS {
        return Err(Error::UnsupportedClass(format!(
            "fractional oracle is limited to {ORACLE_MAX_VARS} variables, model has {n}"
        )));
    }
    if n == 0 {
        return Ok(None);
    }
    let mut earlier: Vec<Vec<(usize, f64, bool)>> = vec![Vec::new(); n];
    let mut rem = vec![0.0; n + 1];
    for (e, &(i, j)) in ms.edges.iter().enumerate() {
        let (lo, hi) = if i < j { (i, j) } else { (j, i) };
        let t = ms.theta_bar_edge[e];
        earlier[hi].push((lo, t, ms.is_attractive(e)));
        rem[hi] += t.max(0.0);
    }
    for (r, &t) in rem.iter_mut().zip(&ms.theta_bar_node) {
        *r += t.max(0.0);
    }
    for k in (0..n).rev() {
        rem[k] += rem[k + 1];
    }
    let search = Search {
        node: &ms.theta_bar_node,
        earlier: &earlier,
        rem: &rem,
    };

    // split over the first two variables' 9 prefixes
    let depth = n.min(2);
    let prefixes: Vec<Vec<u8>> = (0..3usize.pow(depth as u32))
        .map(|code| (0..depth).map(|d| ((code / 3usize.pow(d as u32)) % 3) as u8).collect())
        .collect();
    let results: Vec<Option<(f64, Vec<u8>)>> = prefixes
        .into_par_iter()
        .map(|prefix| {
            let mut halves = vec![0u8; n];
            let mut value = 0.0;
            let mut frac = false;
            for (k, &h) in prefix.iter().enumerate() {
                halves[k] = h;
                value += search.gain(k, h, &halves);
                frac |= h == 1;
            }
            let mut best = None;
            search.dfs(depth, value, frac, &mut halves, &mut best);
            best
        })
        .collect();
    let best = results
        .into_iter()
        .flatten()
        .fold(None::<(f64, Vec<u8>)>, |acc, cand| match acc {
            Some(a) if a.0 >= cand.0 => Some(a),
            _ => Some(cand),
        });
    Ok(best.map(|(value, halves)| FractionalPoint {
        value,
        eta_node: halves.iter().map(|&h| h as f64 / 2.0).collect(),
    }))
}

struct Search<'a> {
    node: &'a [f64],
    earlier: &'a [Vec<(usize, f64, bool)>],
    rem: &'a [f64],
}

impl Search<'_> {
    /// Objective contribution of setting variable `k` to `h` halves, given earlier ones.
    fn gain(&self, k: usize, h: u8, halves: &[u8]) -> f64 {
        let mut g = self.node[k] * h as f64;
        for &(j, t, attractive) in &self.earlier[k] {
            let hj = halves[j];
            let settled = if attractive {
                hj.min(h)
            } else {
                (hj + h).saturating_sub(2)
            };
            g += t * settled as f64;
        }
        g / 2.0
    }

    fn dfs(
        &self,
        k: usize,
        value: f64,
        frac: bool,
        halves: &mut [u8],
        best: &mut Option<(f64, Vec<u8>)>,
    ) {
        if let Some((b, _)) = best {
            if value + self.rem[k] <= *b {
                return;
            }
        }
        if k == halves.len() {
            if frac {
                *best = Some((value, halves.to_vec()));
            }
            return;
        }
        for h in [1u8, 2, 0] {
            halves[k] = h;
            let v = value + self.gain(k, h, halves);
            self.dfs(k + 1, v, frac || h == 1, halves, best);
        }
        halves[k] = 0;
    }
}

/// Best score over fractional points of the local polytope, in overcomplete
/// units. `−∞` for edgeless models, whose local polytope has only integral
/// vertices.
pub fn brute_force_f_star(graph: &FactorGraph, theta: &[f64]) -> Result<f64> {
    let ms = to_minimal(graph, theta)?;
    if ms.n_vars > ORACLE_MAX_VARS {
        return Err(Error::UnsupportedClass(format!(
            "fractional oracle is limited to {ORACLE_MAX_VARS} variables, model has {}",
            ms.n_vars
        )));
    }
    if ms.edges.is_empty() {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(best_fractional_point(&ms)?
        .map(|p| p.value + ms.offset)
        .unwrap_or(f64::NEG_INFINITY))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::{exhaustive_map, for_each_labeling};

    fn frustrated_triangle() -> (FactorGraph, Vec<f64>) {
        let g = FactorGraph::binary_pairwise(3, &[(0, 1), (0, 2), (1, 2)]).unwrap();
        let mut theta = vec![0.0; 6];
        for _ in 0..3 {
            theta.extend([0.0, 1.0, 1.0, 0.0]);
        }
        (g, theta)
    }

    #[test]
    fn disagreement_edge_maps_to_minus_two_w() {
        let (g, theta) = frustrated_triangle();
        let ms = to_minimal(&g, &theta).unwrap();
        assert_eq!(ms.theta_bar_edge, vec![-2.0; 3]);
        assert_eq!(ms.theta_bar_node, vec![2.0; 3]);
        assert_eq!(ms.offset, 0.0);
    }

    #[test]
    fn zero_scores_give_zero_minimal() {
        let g = FactorGraph::fully_connected_binary(4);
        let ms = to_minimal(&g, &vec![0.0; g.dim()]).unwrap();
        assert!(ms.theta_bar_node.iter().chain(&ms.theta_bar_edge).all(|&v| v == 0.0));
        assert_eq!(ms.offset, 0.0);
    }

    #[test]
    fn minimal_preserves_labeling_scores() {
        let g = FactorGraph::binary_pairwise(4, &[(0, 1), (2, 1), (3, 0), (2, 3)]).unwrap();
        let theta: Vec<f64> = (0..g.dim()).map(|k| ((k * 7919) % 13) as f64 - 6.0).collect();
        let ms = to_minimal(&g, &theta).unwrap();
        let (g2, theta2) = from_minimal(&ms).unwrap();
        for_each_labeling(&g, |y| {
            let s = g.labeling_score(&theta, y);
            assert!((ms.labeling_score(y) - s).abs() < 1e-9);
            assert!((g2.labeling_score(&theta2, y) - s).abs() < 1e-9);
        })
        .unwrap();
    }

    #[test]
    fn non_binary_is_unsupported() {
        let g = FactorGraph::new(vec![3, 2], vec![vec![0, 1]]).unwrap();
        assert!(matches!(
            to_minimal(&g, &vec![0.0; g.dim()]),
            Err(Error::UnsupportedClass(_))
        ));
        let g = FactorGraph::new(vec![2, 2, 2], vec![vec![0, 1, 2]]).unwrap();
        assert!(to_minimal(&g, &vec![0.0; g.dim()]).is_err());
    }

    fn single_edge(t: f64) -> MinimalScores {
        MinimalScores {
            n_vars: 2,
            edges: vec![(0, 1)],
            theta_bar_node: vec![0.0, 0.0],
            theta_bar_edge: vec![t],
            offset: 0.0,
        }
    }

    #[test]
    fn settlement_rules() {
        assert_eq!(settle_edges(&single_edge(1.0), &[0.5, 0.5]).eta_edge, vec![0.5]);
        assert_eq!(settle_edges(&single_edge(-1.0), &[0.5, 0.5]).eta_edge, vec![0.0]);
        for (a, b) in [(0.0, 0.0), (0.0, 1.0), (1.0, 0.0), (1.0, 1.0)] {
            for t in [-1.0, 1.0] {
                assert_eq!(settle_edges(&single_edge(t), &[a, b]).eta_edge, vec![a * b]);
            }
        }
    }

    #[test]
    fn balance_detection() {
        let att = single_edge(1.0);
        let b = classify_and_balance(&att);
        assert!(b.balanced);
        assert_eq!(b.flip_set, Some(vec![]));

        let rep = single_edge(-1.0);
        let b = classify_and_balance(&rep);
        assert!(b.balanced);
        assert_eq!(b.flip_set, Some(vec![1]));

        let (g, theta) = frustrated_triangle();
        let b = classify_and_balance(&to_minimal(&g, &theta).unwrap());
        assert!(!b.balanced);
        assert!(b.flip_set.is_none());
    }

    #[test]
    fn flipping_makes_balanced_model_attractive() {
        let g = FactorGraph::binary_pairwise(3, &[(0, 1), (1, 2)]).unwrap();
        let ms = MinimalScores {
            n_vars: 3,
            edges: vec![(0, 1), (1, 2)],
            theta_bar_node: vec![0.3, -0.2, 0.1],
            theta_bar_edge: vec![-1.0, 2.0],
            offset: 0.5,
        };
        let (_, theta) = from_minimal(&ms).unwrap();
        let flip = classify_and_balance(&ms).flip_set.unwrap();
        assert_eq!(flip, vec![1, 2]);
        let flipped = flip_variables(&g, &theta, &flip).unwrap();
        let fms = to_minimal(&g, &flipped).unwrap();
        assert!(fms.theta_bar_edge.iter().all(|&t| t > 0.0));
        for_each_labeling(&g, |y| {
            let y2: Vec<usize> = y
                .iter()
                .enumerate()
                .map(|(i, &s)| if flip.contains(&i) { 1 - s } else { s })
                .collect();
            assert!((g.labeling_score(&theta, y) - g.labeling_score(&flipped, &y2)).abs() < 1e-9);
        })
        .unwrap();
    }

    #[test]
    fn second_best_cases() {
        let g = FactorGraph::new(vec![2], vec![]).unwrap();
        let sb = second_best(&g, &[0.0, 5.0]).unwrap();
        assert_eq!((sb.best, sb.second_best), (5.0, 0.0));

        // two optima (0,1) and (1,0)
        let g = FactorGraph::binary_pairwise(2, &[(0, 1)]).unwrap();
        let theta = [0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0];
        let sb = second_best(&g, &theta).unwrap();
        assert_eq!(sb.best, 1.0);
        assert_eq!(sb.second_best, 1.0);
    }

    #[test]
    fn balanced_certificate_requires_balance_and_uniqueness() {
        let (g, theta) = frustrated_triangle();
        assert_eq!(balanced_certificate(&g, &theta).unwrap().kind, CertificateKind::None);

        let g = FactorGraph::binary_pairwise(2, &[(0, 1)]).unwrap();
        let tie = [0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0];
        let c = balanced_certificate(&g, &tie).unwrap();
        assert!(matches!(c.witness, Witness::NonUniqueOptimum { .. }));

        let unique = [0.0, 0.5, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0];
        let c = balanced_certificate(&g, &unique).unwrap();
        assert_eq!(c.kind, CertificateKind::BalancedUnique);
        assert!((c.gamma - 0.25).abs() < 1e-12);
    }

    #[test]
    fn singleton_certificate_isolated_variable_margin_is_half_beta() {
        let beta = 0.8;
        let ms = MinimalScores {
            n_vars: 1,
            edges: vec![],
            theta_bar_node: vec![beta],
            theta_bar_edge: vec![],
            offset: 0.0,
        };
        let (g, theta) = from_minimal(&ms).unwrap();
        let c = singleton_certificate(&g, &theta, 0.0).unwrap();
        assert_eq!(c.kind, CertificateKind::StrongSingleton);
        assert!((c.gamma - beta / 2.0).abs() < 1e-12);
        let i_star = exhaustive_map(&g, &theta.clone()).unwrap().value;
        let frac = best_fractional_point(&ms).unwrap().unwrap();
        assert!((i_star - (frac.value + ms.offset) - beta / 2.0).abs() < 1e-12);
        // no fractional vertex exists without edges
        assert_eq!(brute_force_f_star(&g, &theta).unwrap(), f64::NEG_INFINITY);
    }

    #[test]
    fn singleton_certificate_fails_on_frustrated_triangle() {
        let (g, theta) = frustrated_triangle();
        let c = singleton_certificate(&g, &theta, 0.0).unwrap();
        assert_eq!(c.kind, CertificateKind::None);
        match c.witness {
            Witness::SingletonStrength {
                beta,
                satisfied_fraction,
                ..
            } => {
                assert_eq!(beta, -2.0);
                assert_eq!(satisfied_fraction, 0.0);
            }
            other => panic!("unexpected witness {other:?}"),
        }
    }

    #[test]
    fn frustrated_triangle_best_fractional_is_all_half() {
        let (g, theta) = frustrated_triangle();
        assert_eq!(brute_force_f_star(&g, &theta).unwrap(), 3.0);
        let p = best_fractional_point(&to_minimal(&g, &theta).unwrap()).unwrap().unwrap();
        assert_eq!(p.eta_node, vec![0.5; 3]);
    }

    #[test]
    fn oracle_size_guard() {
        let g = FactorGraph::binary_pairwise(17, &[(0, 1)]).unwrap();
        assert!(brute_force_f_star(&g, &vec![0.0; g.dim()]).is_err());
    }

    #[test]
    fn settled_point_is_feasible_and_matches_overcomplete_score() {
        let (g, theta) = frustrated_triangle();
        let ms = to_minimal(&g, &theta).unwrap();
        let eta = settle_edges(&ms, &[0.5, 1.0, 0.5]);
        assert!(eta.is_feasible(&ms, 1e-12));
        let mu = eta.to_mu(&g);
        let lp = crate::polytope_lp::build_local_polytope(&g);
        assert!(lp.is_feasible(&mu, 1e-12));
        let s: f64 = theta.iter().zip(mu.iter()).map(|(a, b)| a * b).sum();
        assert!((ms.objective(&eta) + ms.offset - s).abs() < 1e-12);
    }
}
