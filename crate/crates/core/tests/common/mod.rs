//! Random model generators shared by the integration and acceptance tests.
#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use tightlab::factor_graph::FactorGraph;
use tightlab::minimal_rep::{flip_variables, from_minimal, MinimalScores};

/// Erdős–Rényi edge set with at least one edge when `n ≥ 2`.
pub fn random_edges(rng: &mut ChaCha8Rng, n: usize, p: f64) -> Vec<(usize, usize)> {
    let mut edges: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .filter(|_| rng.random_bool(p))
        .collect();
    if edges.is_empty() && n >= 2 {
        let i = rng.random_range(0..n - 1);
        edges.push((i, rng.random_range(i + 1..n)));
    }
    edges
}

pub fn normal_vec(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| StandardNormal.sample(&mut *rng)).collect()
}

/// Binary pairwise model with `n` in `2..=max_n` and standard normal
/// overcomplete scores.
pub fn random_binary_pairwise(rng: &mut ChaCha8Rng, max_n: usize) -> (FactorGraph, Vec<f64>) {
    let n = rng.random_range(2..=max_n);
    let edges = random_edges(rng, n, 0.5);
    let graph = FactorGraph::binary_pairwise(n, &edges).unwrap();
    let theta = normal_vec(rng, graph.dim());
    (graph, theta)
}

pub fn random_labeling(rng: &mut ChaCha8Rng, n: usize) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..2)).collect()
}

/// Attractive model with random singletons, then a random subset of
/// variables flipped so edge signs are mixed but the model stays balanced.
pub fn random_balanced(rng: &mut ChaCha8Rng, max_n: usize) -> (FactorGraph, Vec<f64>) {
    let n = rng.random_range(3..=max_n);
    let edges = random_edges(rng, n, 0.4);
    let ms = MinimalScores {
        n_vars: n,
        theta_bar_edge: edges.iter().map(|_| rng.random_range(0.2..2.0)).collect(),
        edges,
        theta_bar_node: normal_vec(rng, n),
        offset: 0.0,
    };
    let (graph, theta) = from_minimal(&ms).unwrap();
    let mut vars: Vec<usize> = (0..n).collect();
    vars.shuffle(rng);
    let k = rng.random_range(0..=n);
    let flipped = flip_variables(&graph, &theta, &vars[..k]).unwrap();
    (graph, flipped.into_inner())
}

/// Mixed-sign model where every variable clears its singleton-strength
/// condition by a margin drawn from `[0.1, 1)`. With `isolated`, variable 0
/// has no edges and the weakest singleton, `|θ̄_0| = isolated_strength`.
pub fn random_strong_singleton(
    rng: &mut ChaCha8Rng,
    max_n: usize,
    isolated: Option<f64>,
) -> (FactorGraph, Vec<f64>) {
    let n = rng.random_range(3..=max_n);
    let mut edges = random_edges(rng, n, 0.4);
    if isolated.is_some() {
        edges.retain(|&(i, _)| i != 0);
        if edges.is_empty() {
            edges.push((1, 2));
        }
    }
    let theta_bar_edge: Vec<f64> = edges.iter().map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut neg = vec![0.0; n];
    let mut pos = vec![0.0; n];
    for (&(i, j), &t) in edges.iter().zip(&theta_bar_edge) {
        let side = if t < 0.0 { &mut neg } else { &mut pos };
        side[i] += t;
        side[j] += t;
    }
    let theta_bar_node = (0..n)
        .map(|i| match (i, isolated) {
            (0, Some(s)) => {
                if rng.random_bool(0.5) {
                    s
                } else {
                    -s
                }
            }
            _ => {
                // stay clear of the isolated variable's strength
                let slack = rng.random_range(0.1..1.0) + isolated.map_or(0.0, |s| s + 0.5);
                if rng.random_bool(0.5) {
                    -neg[i] + slack
                } else {
                    -pos[i] - slack
                }
            }
        })
        .collect();
    let ms = MinimalScores {
        n_vars: n,
        edges,
        theta_bar_node,
        theta_bar_edge,
        offset: rng.random_range(-1.0..1.0),
    };
    let (graph, theta) = from_minimal(&ms).unwrap();
    (graph, theta.into_inner())
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
