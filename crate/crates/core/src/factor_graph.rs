//! Discrete factor graphs, overcomplete score vectors and joint feature maps.
//!
//! Coordinates of a score vector are laid out as all variable blocks (in
//! variable order) followed by all factor blocks (in factor order). Inside a
//! block, local assignments are enumerated lexicographically with the first
//! scope variable most significant, so the edge block of `(i, j)` reads
//! `(0,0), (0,1), (1,0), (1,1)` for binary variables.

use std::ops::{Deref, Range};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Topology of a discrete model: variable cardinalities plus factor scopes.
///
/// Every variable carries an implicit singleton block, so the dimension `q`
/// is the sum of the variable cardinalities plus the sum over factors of the
/// product of member cardinalities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GraphSpec", into = "GraphSpec")]
pub struct FactorGraph {
    cardinalities: Vec<usize>,
    factors: Vec<Vec<usize>>,
    var_offsets: Vec<usize>,
    factor_offsets: Vec<usize>,
    factor_strides: Vec<Vec<usize>>,
    dim: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct GraphSpec {
    cardinalities: Vec<usize>,
    factors: Vec<Vec<usize>>,
}

impl TryFrom<GraphSpec> for FactorGraph {
    type Error = Error;

    fn try_from(spec: GraphSpec) -> Result<Self> {
        FactorGraph::new(spec.cardinalities, spec.factors)
    }
}

impl From<FactorGraph> for GraphSpec {
    fn from(g: FactorGraph) -> Self {
        GraphSpec {
            cardinalities: g.cardinalities,
            factors: g.factors,
        }
    }
}

/// What a single coordinate of a score vector refers to.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Coord {
    Var { var: usize, state: usize },
    Factor { factor: usize, assignment: Vec<usize> },
}

impl FactorGraph {
    pub fn new(cardinalities: Vec<usize>, factors: Vec<Vec<usize>>) -> Result<Self> {
        let n = cardinalities.len();
        if let Some((i, &k)) = cardinalities.iter().enumerate().find(|(_, &k)| k < 2) {
            return Err(Error::InvalidModel(format!(
                "variable {i} has cardinality {k}, need at least 2"
            )));
        }
        for (c, scope) in factors.iter().enumerate() {
            if scope.is_empty() {
                return Err(Error::InvalidModel(format!("factor {c} has an empty scope")));
            }
            for (pos, &v) in scope.iter().enumerate() {
                if v >= n {
                    return Err(Error::InvalidModel(format!(
                        "factor {c} references variable {v} but the model has {n}"
                    )));
                }
                if scope[..pos].contains(&v) {
                    return Err(Error::InvalidModel(format!(
                        "factor {c} repeats variable {v}"
                    )));
                }
            }
        }

        let mut var_offsets = Vec::with_capacity(n);
        let mut dim = 0usize;
        for &k in &cardinalities {
            var_offsets.push(dim);
            dim += k;
        }
        let mut factor_offsets = Vec::with_capacity(factors.len());
        let mut factor_strides = Vec::with_capacity(factors.len());
        for scope in &factors {
            let mut strides = vec![0; scope.len()];
            let mut size = 1usize;
            for (pos, &v) in scope.iter().enumerate().rev() {
                strides[pos] = size;
                size = size
                    .checked_mul(cardinalities[v])
                    .ok_or_else(|| Error::InvalidModel("factor table too large".into()))?;
            }
            factor_offsets.push(dim);
            factor_strides.push(strides);
            dim += size;
        }

        Ok(FactorGraph {
            cardinalities,
            factors,
            var_offsets,
            factor_offsets,
            factor_strides,
            dim,
        })
    }

    /// Binary variables with one pairwise factor per listed edge.
    pub fn binary_pairwise(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        FactorGraph::new(
            vec![2; n],
            edges.iter().map(|&(i, j)| vec![i, j]).collect(),
        )
    }

    /// Binary pairwise model over all `n(n-1)/2` pairs, edges in lexicographic order.
    pub fn fully_connected_binary(n: usize) -> Self {
        let edges: Vec<_> = (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .collect();
        FactorGraph::binary_pairwise(n, &edges).expect("valid by construction")
    }

    pub fn n_vars(&self) -> usize {
        self.cardinalities.len()
    }

    pub fn n_factors(&self) -> usize {
        self.factors.len()
    }

    /// Total number of coordinates `q`.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cardinalities(&self) -> &[usize] {
        &self.cardinalities
    }

    pub fn cardinality(&self, var: usize) -> usize {
        self.cardinalities[var]
    }

    pub fn factors(&self) -> &[Vec<usize>] {
        &self.factors
    }

    pub fn scope(&self, factor: usize) -> &[usize] {
        &self.factors[factor]
    }

    pub fn var_block(&self, var: usize) -> Range<usize> {
        let start = self.var_offsets[var];
        start..start + self.cardinalities[var]
    }

    pub fn factor_block(&self, factor: usize) -> Range<usize> {
        let start = self.factor_offsets[factor];
        let end = if factor + 1 < self.factors.len() {
            self.factor_offsets[factor + 1]
        } else {
            self.dim
        };
        start..end
    }

    /// Coordinates `0..n_singleton_coords()` are the variable blocks.
    pub fn n_singleton_coords(&self) -> usize {
        self.factor_offsets.first().copied().unwrap_or(self.dim)
    }

    pub fn var_coord(&self, var: usize, state: usize) -> usize {
        debug_assert!(state < self.cardinalities[var]);
        self.var_offsets[var] + state
    }

    pub fn factor_coord(&self, factor: usize, assignment: &[usize]) -> usize {
        let local: usize = assignment
            .iter()
            .zip(&self.factor_strides[factor])
            .map(|(s, stride)| s * stride)
            .sum();
        self.factor_offsets[factor] + local
    }

    /// Coordinate of the factor entry selected by a full labeling `y`.
    pub fn factor_coord_of_labeling(&self, factor: usize, y: &[usize]) -> usize {
        let local: usize = self.factors[factor]
            .iter()
            .zip(&self.factor_strides[factor])
            .map(|(&v, stride)| y[v] * stride)
            .sum();
        self.factor_offsets[factor] + local
    }

    /// Decodes a local index within a factor block into per-member states.
    pub fn factor_assignment(&self, factor: usize, local: usize) -> Vec<usize> {
        self.factors[factor]
            .iter()
            .zip(&self.factor_strides[factor])
            .map(|(&v, stride)| (local / stride) % self.cardinalities[v])
            .collect()
    }

    /// Inverse of the coordinate layout.
    pub fn coord(&self, k: usize) -> Coord {
        assert!(k < self.dim, "coordinate {k} out of range");
        let n_single = self.n_singleton_coords();
        if k < n_single {
            let var = self.var_offsets.partition_point(|&o| o <= k) - 1;
            Coord::Var {
                var,
                state: k - self.var_offsets[var],
            }
        } else {
            let factor = self.factor_offsets.partition_point(|&o| o <= k) - 1;
            Coord::Factor {
                factor,
                assignment: self.factor_assignment(factor, k - self.factor_offsets[factor]),
            }
        }
    }

    /// All variables binary and all factors of arity two.
    pub fn is_binary_pairwise(&self) -> bool {
        self.cardinalities.iter().all(|&k| k == 2) && self.factors.iter().all(|s| s.len() == 2)
    }

    /// Number of full labelings, saturating at `u128::MAX`.
    pub fn state_space_size(&self) -> u128 {
        self.cardinalities
            .iter()
            .fold(1u128, |acc, &k| acc.saturating_mul(k as u128))
    }

    pub fn check_labeling(&self, y: &[usize]) -> Result<()> {
        if y.len() != self.n_vars() {
            return Err(Error::DimensionMismatch {
                what: "labeling",
                expected: self.n_vars(),
                found: y.len(),
            });
        }
        for (var, (&state, &k)) in y.iter().zip(&self.cardinalities).enumerate() {
            if state >= k {
                return Err(Error::InvalidState {
                    var,
                    state,
                    cardinality: k,
                });
            }
        }
        Ok(())
    }

    /// Score of a labeling without materializing its indicator vector.
    /// The labeling must be valid.
    pub fn labeling_score(&self, theta: &[f64], y: &[usize]) -> f64 {
        let mut total = 0.0;
        for (var, &s) in y.iter().enumerate() {
            total += theta[self.var_offsets[var] + s];
        }
        for c in 0..self.factors.len() {
            total += theta[self.factor_coord_of_labeling(c, y)];
        }
        total
    }

    /// Per-variable argmax of the singleton blocks; ties go to the lower state.
    pub fn decode_singletons(&self, mu: &[f64], tie_tol: f64) -> Vec<usize> {
        (0..self.n_vars())
            .map(|var| {
                let block = &mu[self.var_block(var)];
                let mut best = 0;
                for s in 1..block.len() {
                    if block[s] > block[best] + tie_tol {
                        best = s;
                    }
                }
                best
            })
            .collect()
    }
}

/// Real vector laid out in a graph's coordinate order. Used for scores `θ`,
/// loss vectors `ℓ` and pseudo-marginals `μ` alike.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ScoreVector(Vec<f64>);

impl ScoreVector {
    pub fn zeros(len: usize) -> Self {
        ScoreVector(vec![0.0; len])
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn dot(&self, other: &ScoreVector) -> Result<f64> {
        check_len("score vector", self.len(), other.len())?;
        Ok(dot(&self.0, &other.0))
    }

    pub fn add(&self, other: &ScoreVector) -> Result<ScoreVector> {
        check_len("score vector", self.len(), other.len())?;
        Ok(ScoreVector(
            self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect(),
        ))
    }

    pub fn sub(&self, other: &ScoreVector) -> Result<ScoreVector> {
        check_len("score vector", self.len(), other.len())?;
        Ok(ScoreVector(
            self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect(),
        ))
    }

    pub fn scaled(&self, t: f64) -> ScoreVector {
        ScoreVector(self.0.iter().map(|v| v * t).collect())
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl From<Vec<f64>> for ScoreVector {
    fn from(v: Vec<f64>) -> Self {
        ScoreVector(v)
    }
}

impl Deref for ScoreVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Sparse feature vector: `(index, value)` pairs with indices below the
/// feature dimension.
pub type SparseFeature = Vec<(usize, f64)>;

/// One input: pre-evaluated features for every coordinate of the graph, plus
/// an optional ground-truth labeling.
#[derive(Clone, Debug, PartialEq)]
pub struct Instance {
    feature_dim: usize,
    features: Vec<SparseFeature>,
    label: Option<Vec<usize>>,
}

impl Instance {
    pub fn new(
        graph: &FactorGraph,
        feature_dim: usize,
        features: Vec<SparseFeature>,
        label: Option<Vec<usize>>,
    ) -> Result<Self> {
        check_len("instance features", graph.dim(), features.len())?;
        for (k, f) in features.iter().enumerate() {
            for &(idx, v) in f {
                if idx >= feature_dim {
                    return Err(Error::DimensionMismatch {
                        what: "feature index",
                        expected: feature_dim,
                        found: idx,
                    });
                }
                if !v.is_finite() {
                    return Err(Error::InvalidModel(format!(
                        "non-finite feature value at coordinate {k}"
                    )));
                }
            }
        }
        if let Some(y) = &label {
            graph.check_labeling(y)?;
        }
        Ok(Instance {
            feature_dim,
            features,
            label,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn features(&self) -> &[SparseFeature] {
        &self.features
    }

    pub fn features_mut(&mut self) -> &mut [SparseFeature] {
        &mut self.features
    }

    pub fn label(&self) -> Option<&[usize]> {
        self.label.as_deref()
    }

    pub fn set_label(&mut self, label: Option<Vec<usize>>) {
        self.label = label;
    }

    /// Largest Euclidean norm of any per-coordinate feature vector.
    pub fn max_feature_norm(&self) -> f64 {
        self.features
            .iter()
            .map(|f| f.iter().map(|(_, v)| v * v).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }
}

/// Linear model weights `w ∈ R^d`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Weights(Vec<f64>);

impl Weights {
    pub fn zeros(d: usize) -> Self {
        Weights(vec![0.0; d])
    }

    pub fn norm(&self) -> f64 {
        dot(&self.0, &self.0).sqrt()
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl From<Vec<f64>> for Weights {
    fn from(v: Vec<f64>) -> Self {
        Weights(v)
    }
}

impl Deref for Weights {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// `θ_k = w · φ_k` for every coordinate `k`.
pub fn build_score_vector(w: &Weights, inst: &Instance) -> Result<ScoreVector> {
    check_len("weights", inst.feature_dim, w.len())?;
    Ok(ScoreVector(
        inst.features
            .iter()
            .map(|f| f.iter().map(|&(i, v)| w[i] * v).sum())
            .collect(),
    ))
}

/// Indicator vector of a full labeling.
pub fn assignment_to_mu(graph: &FactorGraph, y: &[usize]) -> Result<ScoreVector> {
    graph.check_labeling(y)?;
    let mut mu = vec![0.0; graph.dim()];
    for (var, &s) in y.iter().enumerate() {
        mu[graph.var_coord(var, s)] = 1.0;
    }
    for c in 0..graph.n_factors() {
        mu[graph.factor_coord_of_labeling(c, y)] = 1.0;
    }
    Ok(ScoreVector(mu))
}

/// `θ · μ`.
pub fn score_of(theta: &ScoreVector, mu: &ScoreVector) -> Result<f64> {
    theta.dot(mu)
}

/// `Σ_k μ_k φ_k`: the joint feature map extended linearly to pseudo-marginals.
pub fn feature_map(inst: &Instance, mu: &[f64]) -> Result<Vec<f64>> {
    check_len("marginal vector", inst.features.len(), mu.len())?;
    let mut out = vec![0.0; inst.feature_dim];
    for (f, &m) in inst.features.iter().zip(mu) {
        if m != 0.0 {
            for &(i, v) in f {
                out[i] += m * v;
            }
        }
    }
    Ok(out)
}

/// Joint feature vector `φ(x, y)`.
pub fn joint_feature(graph: &FactorGraph, inst: &Instance, y: &[usize]) -> Result<Vec<f64>> {
    check_len("instance features", graph.dim(), inst.features.len())?;
    let mu = assignment_to_mu(graph, y)?;
    feature_map(inst, &mu)
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn check_len(what: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            what,
            expected,
            found,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn edge_model() -> FactorGraph {
        FactorGraph::binary_pairwise(2, &[(0, 1)]).unwrap()
    }

    #[test]
    fn dimension_counts_singletons_and_factors() {
        let g = FactorGraph::new(vec![2, 3, 2], vec![vec![0, 1], vec![0, 1, 2]]).unwrap();
        assert_eq!(g.dim(), 7 + 6 + 12);
        assert_eq!(g.n_singleton_coords(), 7);
        assert_eq!(g.factor_block(1), 13..25);
    }

    #[test]
    fn coordinate_layout_is_a_bijection() {
        let g = FactorGraph::new(vec![2, 3, 2], vec![vec![2, 0], vec![0, 1, 2]]).unwrap();
        for k in 0..g.dim() {
            let back = match g.coord(k) {
                Coord::Var { var, state } => g.var_coord(var, state),
                Coord::Factor { factor, assignment } => g.factor_coord(factor, &assignment),
            };
            assert_eq!(back, k);
        }
    }

    #[test]
    fn edge_block_is_lexicographic() {
        let g = edge_model();
        assert_eq!(g.factor_coord(0, &[0, 0]), 4);
        assert_eq!(g.factor_coord(0, &[0, 1]), 5);
        assert_eq!(g.factor_coord(0, &[1, 0]), 6);
        assert_eq!(g.factor_coord(0, &[1, 1]), 7);
    }

    #[test]
    fn rejects_bad_topology() {
        assert!(FactorGraph::new(vec![1], vec![]).is_err());
        assert!(FactorGraph::new(vec![2, 2], vec![vec![0, 2]]).is_err());
        assert!(FactorGraph::new(vec![2, 2], vec![vec![1, 1]]).is_err());
        assert!(FactorGraph::new(vec![2], vec![vec![]]).is_err());
    }

    #[test]
    fn single_variable_indicator() {
        let g = FactorGraph::new(vec![2], vec![]).unwrap();
        assert_eq!(assignment_to_mu(&g, &[1]).unwrap().to_vec(), vec![0.0, 1.0]);
    }

    #[test]
    fn edge_indicator_selects_assignment() {
        let g = edge_model();
        let mu = assignment_to_mu(&g, &[1, 0]).unwrap();
        assert_eq!(mu.to_vec(), vec![0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn out_of_range_state_is_rejected() {
        let g = edge_model();
        assert!(matches!(
            assignment_to_mu(&g, &[0, 2]),
            Err(Error::InvalidState { var: 1, state: 2, .. })
        ));
        assert!(assignment_to_mu(&g, &[0]).is_err());
    }

    #[test]
    fn zero_weights_give_zero_scores() {
        let g = edge_model();
        let feats = (0..g.dim()).map(|k| vec![(k % 3, 1.5)]).collect();
        let inst = Instance::new(&g, 3, feats, None).unwrap();
        let theta = build_score_vector(&Weights::zeros(3), &inst).unwrap();
        assert!(theta.iter().all(|&v| v == 0.0));
        assert!(build_score_vector(&Weights::zeros(2), &inst).is_err());
    }

    #[test]
    fn one_hot_features_give_one_hot_joint_feature() {
        let g = FactorGraph::new(vec![2, 2], vec![vec![0, 1]]).unwrap();
        let feats = (0..g.dim())
            .map(|k| if k >= 4 { vec![(k - 4, 1.0)] } else { vec![] })
            .collect();
        let inst = Instance::new(&g, 4, feats, None).unwrap();
        assert_eq!(
            joint_feature(&g, &inst, &[1, 0]).unwrap(),
            vec![0.0, 0.0, 1.0, 0.0]
        );
        let empty = Instance::new(&g, 4, vec![vec![]; g.dim()], None).unwrap();
        assert_eq!(joint_feature(&g, &empty, &[1, 1]).unwrap(), vec![0.0; 4]);
    }

    #[test]
    fn score_of_zero_marginals_is_zero() {
        let theta = ScoreVector::from(vec![1.0, -2.0, 3.5]);
        assert_eq!(score_of(&theta, &ScoreVector::zeros(3)).unwrap(), 0.0);
        assert!(score_of(&theta, &ScoreVector::zeros(2)).is_err());
    }

    #[test]
    fn graph_serializes_as_topology_only() {
        let g = FactorGraph::new(vec![2, 3], vec![vec![1, 0]]).unwrap();
        let s = serde_json::to_string(&g).unwrap();
        assert_eq!(s, r#"{"cardinalities":[2,3],"factors":[[1,0]]}"#);
        let back: FactorGraph = serde_json::from_str(&s).unwrap();
        assert_eq!(back, g);
        assert!(serde_json::from_str::<FactorGraph>(r#"{"cardinalities":[2],"factors":[[3]]}"#).is_err());
    }
}
