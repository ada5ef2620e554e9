//! Structured SVM training by block-coordinate Frank-Wolfe, with relaxed
//! (LP) or exact (ILP) loss-augmented inference and per-pass metrics.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factor_graph::{
    assignment_to_mu, build_score_vector, dot, feature_map, FactorGraph, Instance, ScoreVector,
    Weights,
};
use crate::float_serde;
use crate::inference::{round_solution, InferenceMode, LossAugmented, MapResult, MapSolver};
use crate::polytope_lp::Basis;
use crate::tightness::InstanceTightness;

/// Per-coordinate task loss added during loss-augmented inference.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskLoss {
    /// Normalized Hamming distance.
    #[default]
    Hamming,
    /// `Δ ≡ 0`: plain structured hinge.
    Zero,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskMetric {
    /// Example-based F1 over variables in a nonzero state, averaged over instances.
    #[default]
    F1,
    /// Fraction of correctly labeled variables.
    NodeAccuracy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lambda: f64,
    pub passes: usize,
    pub inference_mode: InferenceMode,
    pub seed: u64,
    #[serde(default)]
    pub averaging: bool,
    #[serde(default)]
    pub task_loss: TaskLoss,
    #[serde(default)]
    pub task_metric: TaskMetric,
    /// Weight coordinates held at fixed values; training runs over the rest.
    #[serde(default)]
    pub fixed_weights: Vec<(usize, f64)>,
    /// Compute the exact (ILP) training objective every pass.
    #[serde(default = "default_true")]
    pub exact_metrics: bool,
}

fn default_true() -> bool {
    true
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda: 0.01,
            passes: 50,
            inference_mode: InferenceMode::Relaxed,
            seed: 0,
            averaging: false,
            task_loss: TaskLoss::Hamming,
            task_metric: TaskMetric::F1,
            fixed_weights: Vec::new(),
            exact_metrics: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, feature_dim: usize) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::Domain(format!(
                "regularization must be positive and finite, got {}",
                self.lambda
            )));
        }
        if self.passes == 0 {
            return Err(Error::Domain("passes must be at least 1".into()));
        }
        let mut seen = vec![false; feature_dim];
        for &(k, v) in &self.fixed_weights {
            if k >= feature_dim {
                return Err(Error::Domain(format!(
                    "fixed weight index {k} out of range for dimension {feature_dim}"
                )));
            }
            if std::mem::replace(&mut seen[k], true) {
                return Err(Error::Domain(format!("weight {k} fixed twice")));
            }
            if !v.is_finite() {
                return Err(Error::Domain(format!("fixed weight {k} is not finite")));
            }
        }
        Ok(())
    }
}

/// One record per training pass. Objectives and hinges are means over the
/// training instances, without the regularizer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub iteration: usize,
    pub relaxed_objective: f64,
    /// `None` when exact metrics are disabled.
    #[serde(with = "float_serde::option")]
    pub exact_objective: Option<f64>,
    pub relaxed_hinge: f64,
    pub exact_hinge: f64,
    pub integrality_gap: f64,
    pub train_tight_fraction: f64,
    /// `None` without a test split.
    #[serde(with = "float_serde::option")]
    pub test_tight_fraction: Option<f64>,
    /// Measured on the test split when present, otherwise on training data.
    pub task_accuracy: f64,
    pub duality_gap: f64,
    pub weight_norm: f64,
}

impl MetricsRecord {
    pub const CSV_HEADER: [&'static str; 11] = [
        "iteration",
        "relaxed_objective",
        "exact_objective",
        "relaxed_hinge",
        "exact_hinge",
        "integrality_gap",
        "train_tight_fraction",
        "test_tight_fraction",
        "task_accuracy",
        "duality_gap",
        "weight_norm",
    ];

    pub fn csv_row(&self) -> Vec<String> {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        vec![
            self.iteration.to_string(),
            self.relaxed_objective.to_string(),
            opt(self.exact_objective),
            self.relaxed_hinge.to_string(),
            self.exact_hinge.to_string(),
            self.integrality_gap.to_string(),
            self.train_tight_fraction.to_string(),
            opt(self.test_tight_fraction),
            self.task_accuracy.to_string(),
            self.duality_gap.to_string(),
            self.weight_norm.to_string(),
        ]
    }
}

/// Loss vector for normalized Hamming distance: `1/n` on every singleton
/// coordinate that disagrees with `y_true`, 0 elsewhere.
pub fn hamming_loss_vector(graph: &FactorGraph, y_true: &[usize]) -> Result<ScoreVector> {
    graph.check_labeling(y_true)?;
    let n = graph.n_vars();
    let mut l = vec![0.0; graph.dim()];
    for (i, &yi) in y_true.iter().enumerate() {
        for s in 0..graph.cardinality(i) {
            if s != yi {
                l[graph.var_coord(i, s)] = 1.0 / n as f64;
            }
        }
    }
    Ok(ScoreVector::from(l))
}

pub fn task_loss_vector(graph: &FactorGraph, y_true: &[usize], kind: TaskLoss) -> Result<ScoreVector> {
    match kind {
        TaskLoss::Hamming => hamming_loss_vector(graph, y_true),
        TaskLoss::Zero => {
            graph.check_labeling(y_true)?;
            Ok(ScoreVector::zeros(graph.dim()))
        }
    }
}

fn require_label(inst: &Instance, idx: usize) -> Result<&[usize]> {
    inst.label()
        .ok_or_else(|| Error::Domain(format!("training instance {idx} has no label")))
}

/// Mean over instances of `max_μ θ·(μ − μ_y) + ℓ·μ`, with `μ` over the local
/// polytope (relaxed) or over labelings (exact).
pub fn training_objective(
    graph: &FactorGraph,
    w: &Weights,
    data: &[Instance],
    mode: InferenceMode,
    loss: TaskLoss,
) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyDataset(" to evaluate"));
    }
    let solver = MapSolver::new(graph);
    let terms = data
        .par_iter()
        .enumerate()
        .map(|(m, inst)| {
            let y = require_label(inst, m)?;
            let theta = build_score_vector(w, inst)?;
            let l = task_loss_vector(graph, y, loss)?;
            let aug = solver.loss_augmented(&theta, &l, mode, None)?;
            Ok(aug.hinge(graph.labeling_score(&theta, y)))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(terms.iter().sum::<f64>() / data.len() as f64)
}

pub fn relaxed_objective(graph: &FactorGraph, w: &Weights, data: &[Instance], loss: TaskLoss) -> Result<f64> {
    training_objective(graph, w, data, InferenceMode::Relaxed, loss)
}

pub fn exact_objective(graph: &FactorGraph, w: &Weights, data: &[Instance], loss: TaskLoss) -> Result<f64> {
    training_objective(graph, w, data, InferenceMode::Exact, loss)
}

/// F1 of the nonzero-state sets; 1 when both are empty.
pub fn example_f1(pred: &[usize], truth: &[usize]) -> f64 {
    let tp = pred.iter().zip(truth).filter(|&(&p, &t)| p != 0 && p == t).count();
    let np = pred.iter().filter(|&&p| p != 0).count();
    let nt = truth.iter().filter(|&&t| t != 0).count();
    if np + nt == 0 {
        1.0
    } else {
        2.0 * tp as f64 / (np + nt) as f64
    }
}

pub fn node_accuracy(pred: &[usize], truth: &[usize]) -> f64 {
    if truth.is_empty() {
        return 1.0;
    }
    pred.iter().zip(truth).filter(|(p, t)| p == t).count() as f64 / truth.len() as f64
}

pub fn task_score(metric: TaskMetric, pred: &[usize], truth: &[usize]) -> f64 {
    match metric {
        TaskMetric::F1 => example_f1(pred, truth),
        TaskMetric::NodeAccuracy => node_accuracy(pred, truth),
    }
}

/// Prediction rule of a training mode: rounded LP vertex (relaxed) or exact
/// MAP (exact).
pub fn predict(graph: &FactorGraph, w: &Weights, inst: &Instance, mode: InferenceMode) -> Result<Vec<usize>> {
    let theta = build_score_vector(w, inst)?;
    let solver = MapSolver::new(graph);
    match mode {
        InferenceMode::Relaxed => round_solution(graph, &solver.lp_map(&theta)?.mu),
        InferenceMode::Exact => Ok(solver.ilp_map(&theta)?.labeling.expect("exact labeling")),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    /// Current iterate, fixed coordinates included.
    pub w: Weights,
    /// Weighted average of iterates, when averaging is on.
    pub w_avg: Option<Weights>,
    /// Per-instance dual point: a convex combination of polytope points.
    pub dual_points: Vec<ScoreVector>,
    /// Per-instance share of `w` (free coordinates only).
    pub block_weights: Vec<Vec<f64>>,
    /// Per-instance share of the dual loss term.
    pub block_losses: Vec<f64>,
    /// Block updates performed.
    pub steps: usize,
}

impl TrainState {
    /// The weights training returns: the average when enabled, else the iterate.
    pub fn output_weights(&self) -> &Weights {
        self.w_avg.as_ref().unwrap_or(&self.w)
    }
}

struct Block {
    mu_gt: ScoreVector,
    phi_gt: Vec<f64>,
    loss: ScoreVector,
    label: Vec<usize>,
}

#[derive(Default, Clone)]
struct WarmCache {
    train_step: Option<Basis>,
    aug: Option<Basis>,
    plain: Option<Basis>,
}

/// What one training instance contributes to a metrics record.
struct TrainEval {
    relaxed_term: f64,
    exact_term: Option<f64>,
    lp_value: f64,
    ilp_value: f64,
    anchor: f64,
    tight: bool,
    accuracy: f64,
    /// Corner for the duality gap in the training mode.
    gap_corner: Option<ScoreVector>,
}

struct TestEval {
    tight: bool,
    accuracy: f64,
}

struct Trainer<'a> {
    graph: &'a FactorGraph,
    solver: MapSolver<'a>,
    train: &'a [Instance],
    test: &'a [Instance],
    cfg: &'a TrainConfig,
    blocks: Vec<Block>,
    free: Vec<bool>,
    fixed: Vec<f64>,
    d: usize,
}

impl<'a> Trainer<'a> {
    fn new(graph: &'a FactorGraph, train: &'a [Instance], test: &'a [Instance], cfg: &'a TrainConfig) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::EmptyDataset(" to train on"));
        }
        let d = train[0].feature_dim();
        cfg.validate(d)?;
        let mut free = vec![true; d];
        let mut fixed = vec![0.0; d];
        for &(k, v) in &cfg.fixed_weights {
            free[k] = false;
            fixed[k] = v;
        }
        let blocks = train
            .iter()
            .enumerate()
            .map(|(m, inst)| {
                if inst.feature_dim() != d {
                    return Err(Error::DimensionMismatch {
                        what: "instance feature dimension",
                        expected: d,
                        found: inst.feature_dim(),
                    });
                }
                let label = require_label(inst, m)?.to_vec();
                let mu_gt = assignment_to_mu(graph, &label)?;
                let phi_gt = feature_map(inst, &mu_gt)?;
                let loss = task_loss_vector(graph, &label, cfg.task_loss)?;
                Ok(Block {
                    mu_gt,
                    phi_gt,
                    loss,
                    label,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Trainer {
            graph,
            solver: MapSolver::new(graph),
            train,
            test,
            cfg,
            blocks,
            free,
            fixed,
            d,
        })
    }

    fn n(&self) -> f64 {
        self.blocks.len() as f64
    }

    /// `(w_s, ℓ_s)` for the corner `μ_s` of block `m`.
    fn corner(&self, m: usize, mu: &[f64]) -> Result<(Vec<f64>, f64)> {
        let b = &self.blocks[m];
        let phi = feature_map(&self.train[m], mu)?;
        let scale = 1.0 / (self.cfg.lambda * self.n());
        let w_s = (0..self.d)
            .map(|k| if self.free[k] { (b.phi_gt[k] - phi[k]) * scale } else { 0.0 })
            .collect();
        let fixed_part: f64 = (0..self.d)
            .filter(|&k| !self.free[k])
            .map(|k| self.fixed[k] * (phi[k] - b.phi_gt[k]))
            .sum();
        let ell = (dot(&b.loss, mu) + fixed_part) / self.n();
        Ok((w_s, ell))
    }

    /// `λ (w_i − w_s)·w − ℓ_i + ℓ_s` for the current iterate.
    fn block_gap(&self, state: &TrainState, m: usize, w_s: &[f64], ell_s: f64) -> f64 {
        let lin: f64 = (0..self.d)
            .filter(|&k| self.free[k])
            .map(|k| (state.block_weights[m][k] - w_s[k]) * state.w[k])
            .sum();
        self.cfg.lambda * lin - state.block_losses[m] + ell_s
    }

    fn initial_state(&self) -> TrainState {
        let mut w = vec![0.0; self.d];
        for &(k, v) in &self.cfg.fixed_weights {
            w[k] = v;
        }
        let w = Weights::from(w);
        TrainState {
            w_avg: self.cfg.averaging.then(|| w.clone()),
            w,
            dual_points: self.blocks.iter().map(|b| b.mu_gt.clone()).collect(),
            block_weights: vec![vec![0.0; self.d]; self.blocks.len()],
            block_losses: vec![0.0; self.blocks.len()],
            steps: 0,
        }
    }

    fn step(&self, state: &mut TrainState, m: usize, warm: &mut Option<Basis>) -> Result<()> {
        let theta = build_score_vector(&state.w, &self.train[m])?;
        let aug = self.solver.loss_augmented(
            &theta,
            &self.blocks[m].loss,
            self.cfg.inference_mode,
            warm.as_ref(),
        )?;
        *warm = aug.map.basis.clone();
        let mu_s = aug.map.mu;
        let (w_s, ell_s) = self.corner(m, &mu_s)?;
        let lambda = self.cfg.lambda;
        let diff_sq: f64 = (0..self.d)
            .map(|k| (state.block_weights[m][k] - w_s[k]).powi(2))
            .sum();
        let numer = self.block_gap(state, m, &w_s, ell_s);
        let gamma = if diff_sq * lambda <= f64::MIN_POSITIVE {
            if numer > 0.0 {
                1.0
            } else {
                0.0
            }
        } else {
            (numer / (lambda * diff_sq)).clamp(0.0, 1.0)
        };
        if gamma > 0.0 {
            let wi = &mut state.block_weights[m];
            for k in 0..self.d {
                if self.free[k] {
                    let new = (1.0 - gamma) * wi[k] + gamma * w_s[k];
                    state.w.as_mut_slice()[k] += new - wi[k];
                    wi[k] = new;
                }
            }
            state.block_losses[m] = (1.0 - gamma) * state.block_losses[m] + gamma * ell_s;
            let dual = state.dual_points[m].as_mut_slice();
            for (p, s) in dual.iter_mut().zip(mu_s.iter()) {
                *p = (1.0 - gamma) * *p + gamma * s;
            }
        }
        if let Some(avg) = state.w_avg.as_mut() {
            let k = state.steps as f64;
            let (a, b) = (k / (k + 2.0), 2.0 / (k + 2.0));
            for (v, &x) in avg.as_mut_slice().iter_mut().zip(state.w.iter()) {
                *v = a * *v + b * x;
            }
        }
        state.steps += 1;
        Ok(())
    }

    fn eval_train(&self, w: &Weights, m: usize, cache: &mut WarmCache, need_corner: bool) -> Result<TrainEval> {
        let b = &self.blocks[m];
        let theta = build_score_vector(w, &self.train[m])?;
        let anchor = self.graph.labeling_score(&theta, &b.label);
        let exact_mode = self.cfg.inference_mode == InferenceMode::Exact;

        let aug = self
            .solver
            .loss_augmented(&theta, &b.loss, InferenceMode::Relaxed, cache.aug.as_ref())?;
        cache.aug = aug.map.basis.clone();
        let aug_exact = if self.cfg.exact_metrics || (need_corner && exact_mode) {
            Some(self.exact_from_root(&theta, &b.loss, &aug)?)
        } else {
            None
        };

        let lp = self.solver.lp_map_warm(&theta, cache.plain.as_ref())?;
        cache.plain = lp.basis.clone();
        let ilp = self.ilp_if_fractional(&theta, &lp)?;
        let ilp_value = ilp.as_ref().map_or(lp.value, |r| r.value);
        let tight = InstanceTightness::from_results(&lp, ilp_value).tight;
        let pred = self.prediction(&lp, ilp.as_ref())?;

        let gap_corner = need_corner.then(|| match (&aug_exact, exact_mode) {
            (Some(e), true) => e.map.mu.clone(),
            _ => aug.map.mu.clone(),
        });
        Ok(TrainEval {
            relaxed_term: aug.hinge(anchor),
            exact_term: aug_exact.as_ref().map(|e| e.hinge(anchor)),
            lp_value: lp.value,
            ilp_value,
            anchor,
            tight,
            accuracy: task_score(self.cfg.task_metric, &pred, &b.label),
            gap_corner,
        })
    }

    fn exact_from_root(&self, theta: &[f64], loss: &[f64], root: &LossAugmented) -> Result<LossAugmented> {
        let combined: Vec<f64> = theta.iter().zip(loss).map(|(a, b)| a + b).collect();
        let map = self.solver.ilp_map_from_root(&combined, &root.map)?;
        Ok(LossAugmented {
            model_score: dot(theta, &map.mu),
            loss: dot(loss, &map.mu),
            map,
        })
    }

    fn ilp_if_fractional(&self, theta: &[f64], lp: &MapResult) -> Result<Option<MapResult>> {
        if lp.integral {
            Ok(None)
        } else {
            self.solver.ilp_map_from_root(theta, lp).map(Some)
        }
    }

    fn prediction(&self, lp: &MapResult, ilp: Option<&MapResult>) -> Result<Vec<usize>> {
        match (self.cfg.inference_mode, ilp) {
            (InferenceMode::Exact, Some(r)) => Ok(r.labeling.clone().expect("exact labeling")),
            _ => round_solution(self.graph, &lp.mu),
        }
    }

    fn eval_test(&self, w: &Weights, inst: &Instance, cache: &mut Option<Basis>) -> Result<TestEval> {
        let theta = build_score_vector(w, inst)?;
        let lp = self.solver.lp_map_warm(&theta, cache.as_ref())?;
        *cache = lp.basis.clone();
        let ilp = self.ilp_if_fractional(&theta, &lp)?;
        let ilp_value = ilp.as_ref().map_or(lp.value, |r| r.value);
        let pred = self.prediction(&lp, ilp.as_ref())?;
        Ok(TestEval {
            tight: InstanceTightness::from_results(&lp, ilp_value).tight,
            accuracy: inst
                .label()
                .map_or(f64::NAN, |y| task_score(self.cfg.task_metric, &pred, y)),
        })
    }

    fn metrics(
        &self,
        state: &TrainState,
        pass: usize,
        train_cache: &mut [WarmCache],
        test_cache: &mut [Option<Basis>],
    ) -> Result<MetricsRecord> {
        let w_out = state.output_weights();
        let same = state.w_avg.is_none();
        let evals = train_cache
            .par_iter_mut()
            .enumerate()
            .map(|(m, c)| self.eval_train(w_out, m, c, same))
            .collect::<Result<Vec<_>>>()?;

        let duality_gap = if same {
            evals
                .iter()
                .enumerate()
                .map(|(m, e)| {
                    let (w_s, ell_s) = self.corner(m, e.gap_corner.as_ref().expect("corner"))?;
                    Ok(self.block_gap(state, m, &w_s, ell_s))
                })
                .sum::<Result<f64>>()?
        } else {
            self.iterate_gap(state)?
        };

        let tests = test_cache
            .par_iter_mut()
            .zip(self.test)
            .map(|(c, inst)| self.eval_test(w_out, inst, c))
            .collect::<Result<Vec<_>>>()?;

        let n = self.n();
        let mean = |f: &dyn Fn(&TrainEval) -> f64| evals.iter().map(f).sum::<f64>() / n;
        let labeled_tests: Vec<f64> = tests.iter().map(|t| t.accuracy).filter(|a| !a.is_nan()).collect();
        let task_accuracy = if labeled_tests.is_empty() {
            mean(&|e| e.accuracy)
        } else {
            labeled_tests.iter().sum::<f64>() / labeled_tests.len() as f64
        };
        Ok(MetricsRecord {
            iteration: pass,
            relaxed_objective: mean(&|e| e.relaxed_term),
            exact_objective: self
                .cfg
                .exact_metrics
                .then(|| mean(&|e| e.exact_term.expect("exact metrics on"))),
            relaxed_hinge: mean(&|e| e.lp_value - e.anchor),
            exact_hinge: mean(&|e| e.ilp_value - e.anchor),
            integrality_gap: mean(&|e| e.lp_value - e.ilp_value),
            train_tight_fraction: mean(&|e| f64::from(u8::from(e.tight))),
            test_tight_fraction: (!tests.is_empty()).then(|| {
                tests.iter().filter(|t| t.tight).count() as f64 / tests.len() as f64
            }),
            task_accuracy,
            duality_gap,
            weight_norm: w_out.norm(),
        })
    }

    /// Duality gap at the current iterate, with fresh oracle calls.
    fn iterate_gap(&self, state: &TrainState) -> Result<f64> {
        (0..self.blocks.len())
            .into_par_iter()
            .map(|m| {
                let theta = build_score_vector(&state.w, &self.train[m])?;
                let aug = self.solver.loss_augmented(
                    &theta,
                    &self.blocks[m].loss,
                    self.cfg.inference_mode,
                    None,
                )?;
                let (w_s, ell_s) = self.corner(m, &aug.map.mu)?;
                Ok(self.block_gap(state, m, &w_s, ell_s))
            })
            .sum()
    }

    /// `‖w_free − Σ_i Φ_free(μ_gt − μ̄_i)/(λn)‖ / max(1, ‖w_free‖)`.
    fn consistency_residual(&self, state: &TrainState) -> Result<f64> {
        let mut acc = vec![0.0; self.d];
        for m in 0..self.blocks.len() {
            let (w_s, _) = self.corner(m, &state.dual_points[m])?;
            for (a, v) in acc.iter_mut().zip(w_s) {
                *a += v;
            }
        }
        let mut diff = 0.0;
        let mut norm = 0.0;
        for k in (0..self.d).filter(|&k| self.free[k]) {
            diff += (state.w[k] - acc[k]).powi(2);
            norm += state.w[k].powi(2);
        }
        Ok(diff.sqrt() / norm.sqrt().max(1.0))
    }
}

/// Trains on `train`, evaluating test metrics on `test` (may be empty).
/// Returns the final state and one metrics record per pass.
pub fn bcfw_train(
    graph: &FactorGraph,
    train: &[Instance],
    test: &[Instance],
    cfg: &TrainConfig,
) -> Result<(TrainState, Vec<MetricsRecord>)> {
    bcfw_train_with(graph, train, test, cfg, |_| {})
}

/// As [`bcfw_train`], calling `on_record` after every pass.
pub fn bcfw_train_with(
    graph: &FactorGraph,
    train: &[Instance],
    test: &[Instance],
    cfg: &TrainConfig,
    mut on_record: impl FnMut(&MetricsRecord),
) -> Result<(TrainState, Vec<MetricsRecord>)> {
    let trainer = Trainer::new(graph, train, test, cfg)?;
    let mut state = trainer.initial_state();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = train.len();
    let mut train_cache = vec![WarmCache::default(); n];
    let mut test_cache: Vec<Option<Basis>> = vec![None; test.len()];
    let mut records = Vec::with_capacity(cfg.passes);
    for pass in 1..=cfg.passes {
        let wrap = |e: Error| Error::Training {
            iteration: pass,
            source: Box::new(e),
        };
        for _ in 0..n {
            let m = rng.random_range(0..n);
            trainer
                .step(&mut state, m, &mut train_cache[m].train_step)
                .map_err(wrap)?;
        }
        let rec = trainer
            .metrics(&state, pass, &mut train_cache, &mut test_cache)
            .map_err(wrap)?;
        on_record(&rec);
        records.push(rec);
    }
    Ok((state, records))
}

/// Primal-dual consistency residual of a training state (relative).
pub fn consistency_residual(
    graph: &FactorGraph,
    train: &[Instance],
    cfg: &TrainConfig,
    state: &TrainState,
) -> Result<f64> {
    Trainer::new(graph, train, &[], cfg)?.consistency_residual(state)
}

#[cfg(test)]
mod tests_support {
    use super::*;
    pub fn triangle_data() -> (FactorGraph, Vec<Instance>) {
        let g = FactorGraph::binary_pairwise(3, &[(0, 1), (0, 2), (1, 2)]).unwrap();
        let make = |x: f64| {
            let mut feats = vec![Vec::new(); g.dim()];
            for i in 0..3 {
                feats[g.var_coord(i, 1)] = vec![(i, x)];
            }
            for c in 0..3 {
                let s = g.factor_block(c).start;
                feats[s + 1] = vec![(3, 1.0)];
                feats[s + 2] = vec![(3, 1.0)];
            }
            Instance::new(&g, 4, feats, Some(vec![1, 1, 0])).unwrap()
        };
        let data = vec![make(2.0), make(0.0)];
        (g, data)
    }
}
