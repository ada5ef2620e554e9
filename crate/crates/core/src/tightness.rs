//! Tightness diagnostics: the relaxed-hinge decomposition, the bound chain
//! on the integrality gap, fractionality and ramp losses, integrality
//! margins, tightness fractions and the generalization bound for the
//! fractionality loss.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factor_graph::{build_score_vector, check_len, dot, FactorGraph, Instance, Weights};
use crate::float_serde;
use crate::inference::{InferenceMode, MapResult, MapSolver};
use crate::minimal_rep::{brute_force_f_star, ORACLE_MAX_VARS};
use crate::polytope_lp::{classify_integrality, Basis};

/// Relative tolerance for comparing optimal values.
pub const VALUE_TOL: f64 = 1e-9;

/// Largest fractional share of singleton coordinates for the generalized
/// "mostly integral" split.
pub const MOSTLY_INTEGRAL_SHARE: f64 = 0.1;

/// Default γ grid in score units.
pub const DEFAULT_GAMMA_GRID: [f64; 3] = [0.01, 0.1, 1.0];

fn value_tol(scale: f64) -> f64 {
    VALUE_TOL * (1.0 + scale.abs())
}

/// `a − b`, snapped to zero when within the value tolerance.
fn snapped_diff(a: f64, b: f64) -> f64 {
    let d = a - b;
    if d.abs() <= value_tol(b) {
        0.0
    } else {
        d
    }
}

/// Three-term split of the relaxed hinge against an integral anchor.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    /// `θ·(μ_L − μ_anchor)`
    pub relaxed_hinge: f64,
    /// `θ·(μ_L − μ_I)`
    pub integrality_gap: f64,
    /// `θ·(μ_I − μ_anchor)`
    pub exact_hinge: f64,
}

impl Decomposition {
    pub fn from_values(lp_value: f64, ilp_value: f64, anchor_score: f64) -> Self {
        Decomposition {
            relaxed_hinge: lp_value - anchor_score,
            integrality_gap: lp_value - ilp_value,
            exact_hinge: ilp_value - anchor_score,
        }
    }

    /// Largest violation of `relaxed = gap + exact`.
    pub fn residual(&self) -> f64 {
        (self.relaxed_hinge - (self.integrality_gap + self.exact_hinge)).abs()
    }
}

fn check_anchor(solver: &MapSolver, anchor: &[f64]) -> Result<()> {
    check_len("anchor", solver.graph().dim(), anchor.len())?;
    let integral = classify_integrality(solver.graph(), anchor, 1e-9).integral;
    if !integral || !solver.polytope().is_feasible(anchor, 1e-9) {
        return Err(Error::Domain(
            "anchor must be an integral point of the local polytope".into(),
        ));
    }
    Ok(())
}

pub fn hinge_decomposition(graph: &FactorGraph, theta: &[f64], anchor: &[f64]) -> Result<Decomposition> {
    hinge_decomposition_with(&MapSolver::new(graph), theta, anchor)
}

pub fn hinge_decomposition_with(
    solver: &MapSolver,
    theta: &[f64],
    anchor: &[f64],
) -> Result<Decomposition> {
    check_anchor(solver, anchor)?;
    let lp = solver.lp_map(theta)?;
    let ilp = solver.ilp_map_from_root(theta, &lp)?;
    Ok(Decomposition::from_values(lp.value, ilp.value, dot(theta, anchor)))
}

/// Successive upper bounds on the integrality gap.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundChain {
    pub gap: f64,
    pub relaxed_hinge: f64,
    /// `θ·(μ_L − μ_anchor) + ℓ·μ_L`
    pub relaxed_hinge_plus_loss: f64,
    /// `max_{μ ∈ M_L} θ·(μ − μ_anchor) + ℓ·μ`
    pub loss_augmented_max: f64,
}

impl BoundChain {
    pub fn as_array(&self) -> [f64; 4] {
        [
            self.gap,
            self.relaxed_hinge,
            self.relaxed_hinge_plus_loss,
            self.loss_augmented_max,
        ]
    }

    pub fn is_monotone(&self, tol: f64) -> bool {
        self.as_array().windows(2).all(|p| p[0] <= p[1] + tol)
    }
}

pub fn bound_chain_check(
    graph: &FactorGraph,
    theta: &[f64],
    anchor: &[f64],
    loss: &[f64],
) -> Result<BoundChain> {
    let solver = MapSolver::new(graph);
    check_anchor(&solver, anchor)?;
    check_len("loss vector", graph.dim(), loss.len())?;
    if loss.iter().any(|&v| v < 0.0 || !v.is_finite()) {
        return Err(Error::Domain("loss vector must be finite and nonnegative".into()));
    }
    let anchor_score = dot(theta, anchor);
    let lp = solver.lp_map(theta)?;
    let ilp = solver.ilp_map_from_root(theta, &lp)?;
    let aug = solver.loss_augmented(theta, loss, InferenceMode::Relaxed, lp.basis.as_ref())?;
    let relaxed_hinge = lp.value - anchor_score;
    Ok(BoundChain {
        gap: lp.value - ilp.value,
        relaxed_hinge,
        relaxed_hinge_plus_loss: relaxed_hinge + dot(loss, &lp.mu),
        loss_augmented_max: aug.hinge(anchor_score),
    })
}

/// `φ_γ(D)`: 0 below `−γ`, linear up to 1 at `D = 0`, 1 above.
pub fn ramp_loss(d: f64, gamma: f64) -> f64 {
    if d > 0.0 {
        1.0
    } else if d <= -gamma {
        0.0
    } else {
        1.0 + d / gamma
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FractionalityReport {
    pub i_star: f64,
    /// Best fractional score; `−∞` when no fractional vertex exists, `None`
    /// when it could not be determined.
    #[serde(with = "float_serde::option")]
    pub f_star: Option<f64>,
    /// `F* − I*`, snapped to 0 within the value tolerance.
    #[serde(with = "float_serde::option")]
    pub d: Option<f64>,
    pub loss_l: u8,
    /// `None` when `D` is unknown.
    #[serde(with = "float_serde::option")]
    pub ramp_phi: Option<f64>,
    pub gamma: f64,
    /// Whether `F*` came from the exhaustive half-integral oracle.
    pub exact: bool,
}

impl FractionalityReport {
    fn assemble(i_star: f64, f_star: Option<f64>, gamma: f64, exact: bool, loss_hint: u8) -> Self {
        let d = f_star.map(|f| snapped_diff(f, i_star));
        let loss_l = d.map_or(loss_hint, |d| u8::from(d > 0.0));
        FractionalityReport {
            i_star,
            f_star,
            d,
            loss_l,
            ramp_phi: d.map(|d| ramp_loss(d, gamma)),
            gamma,
            exact,
        }
    }

    pub fn with_gamma(&self, gamma: f64) -> Self {
        FractionalityReport {
            gamma,
            ramp_phi: self.d.map(|d| ramp_loss(d, gamma)),
            ..self.clone()
        }
    }

    /// Integrality margin `I* − F*`.
    pub fn margin(&self) -> Option<f64> {
        self.d.map(|d| -d)
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma > 0.0 && gamma.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("gamma must be positive and finite, got {gamma}")))
    }
}

/// Exact report for binary pairwise models with at most 16 variables.
pub fn fractionality_report(graph: &FactorGraph, theta: &[f64], gamma: f64) -> Result<FractionalityReport> {
    check_gamma(gamma)?;
    if !graph.is_binary_pairwise() || graph.n_vars() > ORACLE_MAX_VARS {
        return Err(Error::UnsupportedClass(format!(
            "exact fractionality needs a binary pairwise model with at most {ORACLE_MAX_VARS} variables"
        )));
    }
    let i_star = MapSolver::new(graph).ilp_map(theta)?.value;
    let f_star = brute_force_f_star(graph, theta)?;
    Ok(FractionalityReport::assemble(i_star, Some(f_star), gamma, true, 0))
}

/// Sound partial verdict for any model. `F*` is known exactly when the LP
/// optimum is fractional (it is then the LP value); when the LP vertex is
/// integral the loss is 0 but `F*` and the ramp stay unknown.
pub fn fractionality_report_partial(
    solver: &MapSolver,
    theta: &[f64],
    gamma: f64,
) -> Result<FractionalityReport> {
    check_gamma(gamma)?;
    let lp = solver.lp_map(theta)?;
    if lp.integral {
        return Ok(FractionalityReport::assemble(lp.value, None, gamma, false, 0));
    }
    let ilp = solver.ilp_map_from_root(theta, &lp)?;
    Ok(FractionalityReport::assemble(
        ilp.value,
        Some(lp.value),
        gamma,
        false,
        0,
    ))
}

/// Exact report when supported, partial verdict otherwise.
pub fn fractionality_report_auto(graph: &FactorGraph, theta: &[f64], gamma: f64) -> Result<FractionalityReport> {
    match fractionality_report(graph, theta, gamma) {
        Err(Error::UnsupportedClass(_)) => {
            fractionality_report_partial(&MapSolver::new(graph), theta, gamma)
        }
        other => other,
    }
}

/// Per-instance tightness of the LP relaxation under one score vector.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceTightness {
    pub lp_value: f64,
    pub ilp_value: f64,
    pub vertex_integral: bool,
    pub fractional_singleton_fraction: f64,
    /// LP optimum value equals the integral optimum (within tolerance).
    pub tight: bool,
}

impl InstanceTightness {
    pub fn from_results(lp: &MapResult, ilp_value: f64) -> Self {
        InstanceTightness {
            lp_value: lp.value,
            ilp_value,
            vertex_integral: lp.integral,
            fractional_singleton_fraction: lp.fractional_singleton_fraction,
            tight: lp.integral || lp.value <= ilp_value + value_tol(ilp_value),
        }
    }
}

/// Solves the LP and, only when its vertex is fractional, the ILP. Returns
/// the LP result so its basis can be reused.
pub fn instance_tightness(
    solver: &MapSolver,
    theta: &[f64],
    warm: Option<&Basis>,
) -> Result<(InstanceTightness, MapResult)> {
    let lp = solver.lp_map_warm(theta, warm)?;
    let ilp_value = if lp.integral {
        lp.value
    } else {
        solver.ilp_map_from_root(theta, &lp)?.value
    };
    Ok((InstanceTightness::from_results(&lp, ilp_value), lp))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TightnessSummary {
    pub n_instances: usize,
    /// Share of instances whose LP optimum value is attained by a labeling.
    pub tight_fraction: f64,
    /// Share of instances whose returned LP vertex is integral.
    pub vertex_integral_fraction: f64,
    /// Share of instances that are tight or have at most
    /// `MOSTLY_INTEGRAL_SHARE` fractional singleton coordinates.
    pub mostly_integral_fraction: f64,
}

impl TightnessSummary {
    pub fn from_instances(items: &[InstanceTightness]) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::EmptyDataset(""));
        }
        let n = items.len() as f64;
        let share = |f: &dyn Fn(&InstanceTightness) -> bool| {
            items.iter().filter(|t| f(t)).count() as f64 / n
        };
        Ok(TightnessSummary {
            n_instances: items.len(),
            tight_fraction: share(&|t| t.tight),
            vertex_integral_fraction: share(&|t| t.vertex_integral),
            mostly_integral_fraction: share(&|t| {
                t.tight || t.fractional_singleton_fraction <= MOSTLY_INTEGRAL_SHARE + 1e-12
            }),
        })
    }
}

pub fn tightness_fraction(
    graph: &FactorGraph,
    instances: &[Instance],
    w: &Weights,
    tol: f64,
) -> Result<TightnessSummary> {
    if instances.is_empty() {
        return Err(Error::EmptyDataset(""));
    }
    let mut solver = MapSolver::new(graph);
    solver.integrality_tol = tol;
    let items = instances
        .par_iter()
        .map(|inst| {
            let theta = build_score_vector(w, inst)?;
            Ok(instance_tightness(&solver, &theta, None)?.0)
        })
        .collect::<Result<Vec<_>>>()?;
    TightnessSummary::from_instances(&items)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub bin_left: f64,
    pub bin_right: f64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginHistogram {
    pub bins: Vec<HistogramBin>,
    /// Instances whose model class has no exact margin.
    pub skipped: usize,
    /// Instances with no fractional vertex (margin `+∞`), left out of the bins.
    pub unbounded: usize,
}

/// Equal-width bins over `[min, max]` of the finite values; the last bin is
/// closed on the right. A single distinct value gets one unit-width bin.
pub fn histogram(values: &[f64], bins: usize) -> Vec<HistogramBin> {
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    if finite.is_empty() || bins == 0 {
        return Vec::new();
    }
    let lo = finite.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi, bins) = if hi > lo { (lo, hi, bins) } else { (lo - 0.5, lo + 0.5, 1) };
    let width = (hi - lo) / bins as f64;
    let mut out: Vec<HistogramBin> = (0..bins)
        .map(|b| HistogramBin {
            bin_left: lo + b as f64 * width,
            bin_right: if b + 1 == bins { hi } else { lo + (b + 1) as f64 * width },
            count: 0,
        })
        .collect();
    for v in finite {
        let b = (((v - lo) / width) as usize).min(bins - 1);
        out[b].count += 1;
    }
    out
}

/// Per-instance `I* − F*`; `None` for instances outside the supported class.
pub fn integrality_margins(
    graph: &FactorGraph,
    instances: &[Instance],
    w: &Weights,
) -> Result<Vec<Option<f64>>> {
    instances
        .par_iter()
        .map(|inst| {
            let theta = build_score_vector(w, inst)?;
            match fractionality_report(graph, &theta, 1.0) {
                Ok(r) => Ok(r.margin()),
                Err(Error::UnsupportedClass(_)) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect()
}

pub fn integrality_margin_histogram(
    graph: &FactorGraph,
    instances: &[Instance],
    w: &Weights,
    bins: usize,
) -> Result<MarginHistogram> {
    let margins = integrality_margins(graph, instances, w)?;
    Ok(margin_histogram(&margins, bins))
}

pub fn margin_histogram(margins: &[Option<f64>], bins: usize) -> MarginHistogram {
    let known: Vec<f64> = margins.iter().flatten().copied().collect();
    MarginHistogram {
        bins: histogram(&known, bins),
        skipped: margins.len() - known.len(),
        unbounded: known.iter().filter(|v| v.is_infinite()).count(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    pub m: usize,
    pub q: usize,
    pub b: f64,
    pub r_hat: f64,
    pub gamma: f64,
    pub delta: f64,
    pub empirical_ramp_mean: f64,
    /// Constant in front of the Rademacher term, not pinned down by theory.
    pub constant: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub m: usize,
    pub q: usize,
    pub b: f64,
    pub r_hat: f64,
    pub b_r_hat: f64,
    pub gamma: f64,
    pub delta: f64,
    pub constant: f64,
    pub empirical_ramp_mean: f64,
    pub rademacher_term: f64,
    pub confidence_term: f64,
    pub bound_value: f64,
}

/// `bound = ramp mean + 2 (√q/γ) C q B R̂ / √M + √(8 ln(2/δ) / M)`.
pub fn generalization_bound(inp: &BoundInputs) -> Result<BoundReport> {
    let bad = |msg: &str| Err(Error::Domain(msg.to_string()));
    if inp.m == 0 {
        return bad("sample count M must be at least 1");
    }
    if inp.q == 0 {
        return bad("dimension q must be at least 1");
    }
    if !(inp.delta > 0.0 && inp.delta < 1.0) {
        return bad("delta must lie in (0, 1)");
    }
    check_gamma(inp.gamma)?;
    if !(inp.b >= 0.0 && inp.r_hat >= 0.0 && inp.constant >= 0.0)
        || !(inp.b.is_finite() && inp.r_hat.is_finite() && inp.constant.is_finite())
    {
        return bad("B, R_hat and the constant must be finite and nonnegative");
    }
    if !(0.0..=1.0).contains(&inp.empirical_ramp_mean) {
        return bad("empirical ramp mean must lie in [0, 1]");
    }
    let m = inp.m as f64;
    let q = inp.q as f64;
    let lipschitz = q.sqrt() / inp.gamma;
    let rademacher_term = 2.0 * lipschitz * inp.constant * (q * inp.b * inp.r_hat / m.sqrt());
    let confidence_term = (8.0 * (2.0 / inp.delta).ln() / m).sqrt();
    Ok(BoundReport {
        m: inp.m,
        q: inp.q,
        b: inp.b,
        r_hat: inp.r_hat,
        b_r_hat: inp.b * inp.r_hat,
        gamma: inp.gamma,
        delta: inp.delta,
        constant: inp.constant,
        empirical_ramp_mean: inp.empirical_ramp_mean,
        rademacher_term,
        confidence_term,
        bound_value: inp.empirical_ramp_mean + rademacher_term + confidence_term,
    })
}
