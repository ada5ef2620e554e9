//! Command-line front end: run configuration, the subcommand implementations
//! and their output files.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data_io::{
    add_feature_noise, counterexample_dataset, export_labels_csv, gen_multilabel, load_dataset,
    randomize_labels, save_dataset, Dataset, LabelScope, MultilabelSpec, Split,
    COUNTEREXAMPLE_PAIR_FEATURE,
};
use crate::error::{Error, Result};
use crate::factor_graph::{assignment_to_mu, build_score_vector, Instance, Weights};
use crate::float_serde;
use crate::inference::{InferenceMode, MapSolver};
use crate::minimal_rep::{
    best_fractional_point, balanced_certificate, singleton_certificate, to_minimal, Certificate, Witness,
};
use crate::ssvm::{bcfw_train_with, relaxed_objective, MetricsRecord, TaskLoss, TaskMetric, TrainConfig};
use crate::tightness::{
    fractionality_report_auto, generalization_bound, hinge_decomposition_with, instance_tightness, InstanceTightness,
    margin_histogram, BoundInputs, BoundReport, Decomposition, FractionalityReport, MarginHistogram,
    TightnessSummary, DEFAULT_GAMMA_GRID,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

pub fn exit_code(err: &Error) -> i32 {
    if err.is_numerical() {
        EXIT_NUMERICAL
    } else {
        EXIT_VALIDATION
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GeneratorSpec {
    Counterexample,
    Multilabel(MultilabelSpec),
}

/// Explicit inputs for the bound when no diagnostics file is given.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManualBound {
    pub m: usize,
    pub q: usize,
    pub b: f64,
    pub r_hat: f64,
    pub empirical_ramp_mean: f64,
}

/// Everything a run needs. Written to `run_config.json` in the output directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub command: String,
    pub data: Option<PathBuf>,
    pub generator: Option<GeneratorSpec>,
    /// Gaussian noise added to singleton features after loading.
    pub feature_noise: f64,
    pub randomize_labels: Option<LabelScope>,
    /// Seed for data perturbations and random weights.
    pub seed: u64,
    pub weights: Option<PathBuf>,
    /// Draw standard normal weights instead of reading a file.
    pub random_weights: bool,
    pub train: TrainConfig,
    pub gamma_grid: Vec<f64>,
    pub delta: f64,
    /// Constant in front of the bound's complexity term.
    pub bound_constant: f64,
    pub beta_min: f64,
    pub bins: usize,
    pub diagnostics: Option<PathBuf>,
    pub manual_bound: Option<ManualBound>,
    /// Shared pairwise weight for the counterexample check.
    pub pairwise_weight: f64,
    pub out_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            command: String::new(),
            data: None,
            generator: None,
            feature_noise: 0.0,
            randomize_labels: None,
            seed: 0,
            weights: None,
            random_weights: false,
            train: TrainConfig::default(),
            gamma_grid: DEFAULT_GAMMA_GRID.to_vec(),
            delta: 0.05,
            bound_constant: 1.0,
            beta_min: 0.0,
            bins: 20,
            diagnostics: None,
            manual_bound: None,
            pairwise_weight: 1.0,
            out_dir: None,
        }
    }
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut de = serde_json::Deserializer::from_str(&text);
        serde_path_to_error::deserialize(&mut de)
            .map_err(|e| Error::schema(e.path().to_string(), e.into_inner().to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.gamma_grid.is_empty() || self.gamma_grid.iter().any(|&g| !(g > 0.0 && g.is_finite())) {
            return Err(invalid("gamma grid must be nonempty with positive finite values"));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(invalid("delta must lie in (0, 1)"));
        }
        if !(self.bound_constant >= 0.0 && self.bound_constant.is_finite()) {
            return Err(invalid("bound constant must be finite and nonnegative"));
        }
        if !(self.feature_noise >= 0.0 && self.feature_noise.is_finite()) {
            return Err(invalid("feature noise must be finite and nonnegative"));
        }
        if self.bins == 0 {
            return Err(invalid("bins must be at least 1"));
        }
        if !self.pairwise_weight.is_finite() {
            return Err(invalid("pairwise weight must be finite"));
        }
        if self.data.is_some() && self.generator.is_some() {
            return Err(invalid("give either a dataset path or a generator, not both"));
        }
        if self.weights.is_some() && self.random_weights {
            return Err(invalid("give either a weights file or random weights, not both"));
        }
        if self.train.lambda <= 0.0 || self.train.passes == 0 {
            return Err(invalid("training needs positive lambda and at least one pass"));
        }
        Ok(())
    }

    fn needs_data(&self) -> Result<()> {
        if self.data.is_none() && self.generator.is_none() {
            Err(invalid(format!("{} needs --data or a generator", self.command)))
        } else {
            Ok(())
        }
    }

    /// Loads or generates the dataset and applies the configured perturbations.
    pub fn dataset(&self) -> Result<Dataset> {
        self.needs_data()?;
        let mut ds = match (&self.data, &self.generator) {
            (Some(path), _) => load_dataset(path)?,
            (None, Some(GeneratorSpec::Counterexample)) => counterexample_dataset(),
            (None, Some(GeneratorSpec::Multilabel(spec))) => gen_multilabel(spec)?.0,
            (None, None) => unreachable!("checked above"),
        };
        if self.feature_noise > 0.0 {
            ds = add_feature_noise(&ds, self.feature_noise, self.seed)?;
        }
        if let Some(scope) = self.randomize_labels {
            ds = randomize_labels(&ds, self.seed, scope)?;
        }
        Ok(ds)
    }

    fn model_weights(&self, ds: &Dataset) -> Result<Weights> {
        let w = if self.random_weights {
            random_weights(ds.feature_dim, self.seed)
        } else {
            let path = self
                .weights
                .as_ref()
                .ok_or_else(|| invalid(format!("{} needs --weights or --random-weights", self.command)))?;
            read_weights(path)?
        };
        if w.len() != ds.feature_dim {
            return Err(Error::DimensionMismatch {
                what: "weights",
                expected: ds.feature_dim,
                found: w.len(),
            });
        }
        Ok(w)
    }

    fn out_dir(&self) -> Result<Option<&Path>> {
        if let Some(dir) = &self.out_dir {
            std::fs::create_dir_all(dir)?;
            write_json(&dir.join("run_config.json"), self)?;
        }
        Ok(self.out_dir.as_deref())
    }
}

/// Standard normal weights from a seed.
pub fn random_weights(d: usize, seed: u64) -> Weights {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Weights::from((0..d).map(|_| StandardNormal.sample(&mut rng)).collect::<Vec<f64>>())
}

pub fn read_weights(path: &Path) -> Result<Weights> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    f.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub passes: usize,
    pub final_record: MetricsRecord,
    pub test_tightness: Option<TightnessSummary>,
    pub test_task_accuracy: Option<f64>,
    pub weights: Weights,
}

/// Trains and writes `metrics.jsonl`, `metrics.csv`, `weights.json` and
/// `summary.json` when an output directory is set.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainSummary> {
    cfg.validate()?;
    let ds = cfg.dataset()?;
    let out = cfg.out_dir()?;
    let (train, test) = (ds.train(), ds.test());
    let mut jsonl = match out {
        Some(dir) => Some(BufWriter::new(File::create(dir.join("metrics.jsonl"))?)),
        None => None,
    };
    let mut csv_out = match out {
        Some(dir) => {
            let mut w = csv::Writer::from_path(dir.join("metrics.csv"))?;
            w.write_record(MetricsRecord::CSV_HEADER)?;
            Some(w)
        }
        None => None,
    };
    let mut io_err: Option<Error> = None;
    let (state, records) = bcfw_train_with(&ds.graph, &train, &test, &cfg.train, |rec| {
        if io_err.is_some() {
            return;
        }
        let res = (|| -> Result<()> {
            if let Some(f) = jsonl.as_mut() {
                serde_json::to_writer(&mut *f, rec)?;
                f.write_all(b"\n")?;
            }
            if let Some(w) = csv_out.as_mut() {
                w.write_record(rec.csv_row())?;
            }
            Ok(())
        })();
        io_err = res.err();
    })?;
    if let Some(e) = io_err {
        return Err(e);
    }
    if let Some(mut f) = jsonl {
        f.flush()?;
    }
    if let Some(mut w) = csv_out {
        w.flush()?;
    }
    let w = state.output_weights().clone();
    let (test_tightness, test_task_accuracy) = if test.is_empty() {
        (None, None)
    } else {
        let solver = MapSolver::new(&ds.graph);
        let items = test
            .par_iter()
            .map(|inst| Ok(instance_tightness(&solver, &build_score_vector(&w, inst)?, None)?.0))
            .collect::<Result<Vec<_>>>()?;
        let last = records.last().expect("at least one pass");
        (Some(TightnessSummary::from_instances(&items)?), Some(last.task_accuracy))
    };
    let summary = TrainSummary {
        passes: records.len(),
        final_record: records.last().expect("at least one pass").clone(),
        test_tightness,
        test_task_accuracy,
        weights: w,
    };
    if let Some(dir) = out {
        write_json(&dir.join("weights.json"), &summary.weights)?;
        write_json(&dir.join("summary.json"), &summary)?;
    }
    Ok(summary)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceDiagnosis {
    pub index: usize,
    pub split: Split,
    /// Against the ground-truth labeling, when present.
    pub decomposition: Option<Decomposition>,
    pub tightness: InstanceTightness,
    /// One report per γ in the grid.
    pub fractionality: Vec<FractionalityReport>,
    #[serde(with = "float_serde::option")]
    pub margin: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RampMean {
    pub gamma: f64,
    /// Mean ramp loss over training instances; `None` if any is unknown.
    #[serde(with = "float_serde::option")]
    pub empirical_ramp_mean: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnoseReport {
    pub n_instances: usize,
    pub q: usize,
    pub weight_norm: f64,
    pub r_hat: f64,
    /// Number of training instances (`M` in the bound).
    pub m_train: usize,
    pub train_tightness: Option<TightnessSummary>,
    pub test_tightness: Option<TightnessSummary>,
    pub fractionality_loss_mean: f64,
    pub ramp_means: Vec<RampMean>,
    pub histogram: MarginHistogram,
    pub instances: Vec<InstanceDiagnosis>,
}

pub fn diagnose(ds: &Dataset, w: &Weights, gamma_grid: &[f64], bins: usize) -> Result<DiagnoseReport> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset(" to diagnose"));
    }
    let solver = MapSolver::new(&ds.graph);
    let instances = ds
        .instances
        .par_iter()
        .zip(&ds.splits)
        .enumerate()
        .map(|(index, (inst, &split))| diagnose_instance(&solver, ds, inst, w, gamma_grid, index, split))
        .collect::<Result<Vec<_>>>()?;

    let summarize = |split: Split| -> Result<Option<TightnessSummary>> {
        let items: Vec<InstanceTightness> =
            instances.iter().filter(|d| d.split == split).map(|d| d.tightness).collect();
        if items.is_empty() {
            Ok(None)
        } else {
            TightnessSummary::from_instances(&items).map(Some)
        }
    };
    let train: Vec<&InstanceDiagnosis> = instances.iter().filter(|d| d.split == Split::Train).collect();
    let pool: Vec<&InstanceDiagnosis> = if train.is_empty() {
        instances.iter().collect()
    } else {
        train
    };
    let ramp_means = gamma_grid
        .iter()
        .enumerate()
        .map(|(g, &gamma)| {
            let vals: Option<Vec<f64>> = pool.iter().map(|d| d.fractionality[g].ramp_phi).collect();
            RampMean {
                gamma,
                empirical_ramp_mean: vals.map(|v| v.iter().sum::<f64>() / v.len() as f64),
            }
        })
        .collect();
    let fractionality_loss_mean = pool
        .iter()
        .map(|d| f64::from(d.fractionality[0].loss_l))
        .sum::<f64>()
        / pool.len() as f64;
    let margins: Vec<Option<f64>> = instances.iter().map(|d| d.margin).collect();
    Ok(DiagnoseReport {
        n_instances: ds.len(),
        q: ds.graph.dim(),
        weight_norm: w.norm(),
        r_hat: ds.r_hat(),
        m_train: pool.len(),
        train_tightness: summarize(Split::Train)?,
        test_tightness: summarize(Split::Test)?,
        fractionality_loss_mean,
        ramp_means,
        histogram: margin_histogram(&margins, bins),
        instances,
    })
}

fn diagnose_instance(
    solver: &MapSolver,
    ds: &Dataset,
    inst: &Instance,
    w: &Weights,
    gamma_grid: &[f64],
    index: usize,
    split: Split,
) -> Result<InstanceDiagnosis> {
    let theta = build_score_vector(w, inst)?;
    let (tightness, _) = instance_tightness(solver, &theta, None)?;
    let decomposition = match inst.label() {
        Some(y) => Some(hinge_decomposition_with(solver, &theta, &assignment_to_mu(&ds.graph, y)?)?),
        None => None,
    };
    let base = fractionality_report_auto(&ds.graph, &theta, gamma_grid[0])?;
    let fractionality: Vec<FractionalityReport> = gamma_grid.iter().map(|&g| base.with_gamma(g)).collect();
    Ok(InstanceDiagnosis {
        index,
        split,
        decomposition,
        tightness,
        margin: if base.exact { base.margin() } else { None },
        fractionality,
    })
}

/// Writes `diagnose.json` and `margins.csv` when an output directory is set.
pub fn cmd_diagnose(cfg: &RunConfig) -> Result<DiagnoseReport> {
    cfg.validate()?;
    let ds = cfg.dataset()?;
    let w = cfg.model_weights(&ds)?;
    let out = cfg.out_dir()?;
    let report = diagnose(&ds, &w, &cfg.gamma_grid, cfg.bins)?;
    if let Some(dir) = out {
        write_json(&dir.join("diagnose.json"), &report)?;
        write_histogram_csv(&dir.join("margins.csv"), &report.histogram)?;
    }
    Ok(report)
}

pub fn write_histogram_csv(path: &Path, h: &MarginHistogram) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["bin_left", "bin_right", "count"])?;
    for b in &h.bins {
        w.write_record([b.bin_left.to_string(), b.bin_right.to_string(), b.count.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceCertificates {
    pub index: usize,
    pub balanced: Certificate,
    pub singleton: Certificate,
    /// Share of variables meeting the singleton-strength condition.
    pub singleton_satisfied_fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertifyReport {
    pub n_instances: usize,
    pub balanced_certified: usize,
    pub singleton_certified: usize,
    pub mean_singleton_satisfied_fraction: f64,
    pub instances: Vec<InstanceCertificates>,
}

pub fn certify(ds: &Dataset, w: &Weights, beta_min: f64) -> Result<CertifyReport> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset(" to certify"));
    }
    let instances = ds
        .instances
        .par_iter()
        .enumerate()
        .map(|(index, inst)| {
            let theta = build_score_vector(w, inst)?;
            let balanced = balanced_certificate(&ds.graph, &theta)?;
            let singleton = singleton_certificate(&ds.graph, &theta, beta_min)?;
            let singleton_satisfied_fraction = match &singleton.witness {
                Witness::SingletonStrength { satisfied_fraction, .. } => *satisfied_fraction,
                _ => 0.0,
            };
            Ok(InstanceCertificates {
                index,
                balanced,
                singleton,
                singleton_satisfied_fraction,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CertifyReport {
        n_instances: instances.len(),
        balanced_certified: instances.iter().filter(|c| c.balanced.is_some()).count(),
        singleton_certified: instances.iter().filter(|c| c.singleton.is_some()).count(),
        mean_singleton_satisfied_fraction: instances.iter().map(|c| c.singleton_satisfied_fraction).sum::<f64>()
            / instances.len() as f64,
        instances,
    })
}

/// Writes `certificates.json` when an output directory is set.
pub fn cmd_certify(cfg: &RunConfig) -> Result<CertifyReport> {
    cfg.validate()?;
    let ds = cfg.dataset()?;
    let w = cfg.model_weights(&ds)?;
    let out = cfg.out_dir()?;
    let report = certify(&ds, &w, cfg.beta_min)?;
    if let Some(dir) = out {
        write_json(&dir.join("certificates.json"), &report)?;
    }
    Ok(report)
}

/// Bound over the γ grid from a diagnostics file or manual inputs; writes
/// `bound.json` when an output directory is set.
pub fn cmd_bound(cfg: &RunConfig) -> Result<Vec<BoundReport>> {
    cfg.validate()?;
    let out = cfg.out_dir()?;
    let reports = match (&cfg.diagnostics, &cfg.manual_bound) {
        (Some(path), _) => {
            let text = std::fs::read_to_string(path)?;
            let diag: DiagnoseReport = serde_json::from_str(&text)?;
            cfg.gamma_grid
                .iter()
                .map(|&gamma| {
                    let ramp = diag
                        .ramp_means
                        .iter()
                        .find(|r| (r.gamma - gamma).abs() <= 1e-12 * gamma)
                        .and_then(|r| r.empirical_ramp_mean)
                        .ok_or_else(|| {
                            invalid(format!("diagnostics have no empirical ramp mean for gamma {gamma}"))
                        })?;
                    generalization_bound(&BoundInputs {
                        m: diag.m_train,
                        q: diag.q,
                        b: diag.weight_norm,
                        r_hat: diag.r_hat,
                        gamma,
                        delta: cfg.delta,
                        empirical_ramp_mean: ramp,
                        constant: cfg.bound_constant,
                    })
                })
                .collect::<Result<Vec<_>>>()?
        }
        (None, Some(mb)) => cfg
            .gamma_grid
            .iter()
            .map(|&gamma| {
                generalization_bound(&BoundInputs {
                    m: mb.m,
                    q: mb.q,
                    b: mb.b,
                    r_hat: mb.r_hat,
                    gamma,
                    delta: cfg.delta,
                    empirical_ramp_mean: mb.empirical_ramp_mean,
                    constant: cfg.bound_constant,
                })
            })
            .collect::<Result<Vec<_>>>()?,
        (None, None) => return Err(invalid("bound needs --diagnostics or explicit inputs")),
    };
    if let Some(dir) = out {
        write_json(&dir.join("bound.json"), &reports)?;
    }
    Ok(reports)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub pairwise_weight: f64,
    pub relaxed_objective: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CounterexampleReport {
    pub pairwise_weight: f64,
    pub relaxed_hinge: Vec<f64>,
    pub exact_hinge: Vec<f64>,
    pub integrality_gap: Vec<f64>,
    /// Per instance `(LP value, ILP value)`.
    pub optimal_values: Vec<(f64, f64)>,
    pub relaxed_objective: f64,
    pub tight_fraction: f64,
    #[serde(with = "float_serde::option")]
    pub grid_minimizer: Option<f64>,
    pub grid: Vec<GridPoint>,
    /// Best fractional node pattern of the loose instance.
    pub fractional_vertex: Option<Vec<f64>>,
    pub checks: Vec<(String, bool)>,
    pub passed: bool,
}

const COUNTEREXAMPLE_TOL: f64 = 1e-8;

/// Evaluates the counterexample with every singleton weight at 1 and the
/// shared pairwise weight at `pairwise_weight`. At weight 1 the known
/// values are asserted; other weights are only reported.
pub fn reproduce_counterexample(pairwise_weight: f64) -> Result<CounterexampleReport> {
    let ds = counterexample_dataset();
    let weights_at = |v: f64| {
        let mut w = vec![1.0; ds.feature_dim];
        w[COUNTEREXAMPLE_PAIR_FEATURE] = v;
        Weights::from(w)
    };
    let w = weights_at(pairwise_weight);
    let solver = MapSolver::new(&ds.graph);
    let mut relaxed_hinge = Vec::new();
    let mut exact_hinge = Vec::new();
    let mut integrality_gap = Vec::new();
    let mut optimal_values = Vec::new();
    let mut tight = 0usize;
    for inst in &ds.instances {
        let theta = build_score_vector(&w, inst)?;
        let anchor = assignment_to_mu(&ds.graph, inst.label().expect("labeled"))?;
        let d = hinge_decomposition_with(&solver, &theta, &anchor)?;
        let (t, lp) = instance_tightness(&solver, &theta, None)?;
        relaxed_hinge.push(d.relaxed_hinge);
        exact_hinge.push(d.exact_hinge);
        integrality_gap.push(d.integrality_gap);
        optimal_values.push((lp.value, t.ilp_value));
        tight += usize::from(t.tight);
    }
    let relaxed_obj = relaxed_objective(&ds.graph, &w, &ds.instances, TaskLoss::Zero)?;

    let grid: Vec<GridPoint> = (0..=60)
        .map(|k| {
            let v = k as f64 * 0.05;
            Ok(GridPoint {
                pairwise_weight: v,
                relaxed_objective: relaxed_objective(&ds.graph, &weights_at(v), &ds.instances, TaskLoss::Zero)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let best = grid
        .iter()
        .map(|p| p.relaxed_objective)
        .fold(f64::INFINITY, f64::min);
    let minimizers: Vec<f64> = grid
        .iter()
        .filter(|p| p.relaxed_objective <= best + COUNTEREXAMPLE_TOL)
        .map(|p| p.pairwise_weight)
        .collect();
    let grid_minimizer = (minimizers.len() == 1).then(|| minimizers[0]);

    let loose = &ds.instances[1];
    let ms = to_minimal(&ds.graph, &build_score_vector(&w, loose)?)?;
    let fractional_vertex = best_fractional_point(&ms)?.map(|p| p.eta_node);

    let close = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(x, y)| (x - y).abs() <= COUNTEREXAMPLE_TOL);
    let mut checks = Vec::new();
    if pairwise_weight == 1.0 {
        checks.push(("relaxed hinge is (0, 1)".to_string(), close(&relaxed_hinge, &[0.0, 1.0])));
        checks.push(("exact hinge is (0, 0)".to_string(), close(&exact_hinge, &[0.0, 0.0])));
        checks.push(("integrality gap is (0, 1)".to_string(), close(&integrality_gap, &[0.0, 1.0])));
        checks.push((
            "second instance has LP value 3 and ILP value 2".to_string(),
            close(&[optimal_values[1].0, optimal_values[1].1], &[3.0, 2.0]),
        ));
        checks.push((
            "relaxed objective is 0.5".to_string(),
            (relaxed_obj - 0.5).abs() <= COUNTEREXAMPLE_TOL,
        ));
        checks.push((
            "weight 1 uniquely minimizes the relaxed objective on the grid".to_string(),
            grid_minimizer == Some(1.0),
        ));
        checks.push((
            "best fractional point is all one-half".to_string(),
            fractional_vertex.as_deref() == Some(&[0.5, 0.5, 0.5][..]),
        ));
    }
    let passed = checks.iter().all(|(_, ok)| *ok);
    Ok(CounterexampleReport {
        pairwise_weight,
        relaxed_hinge,
        exact_hinge,
        integrality_gap,
        optimal_values,
        relaxed_objective: relaxed_obj,
        tight_fraction: tight as f64 / ds.len() as f64,
        grid_minimizer,
        grid,
        fractional_vertex,
        checks,
        passed,
    })
}

pub fn cmd_reproduce_counterexample(cfg: &RunConfig) -> Result<CounterexampleReport> {
    cfg.validate()?;
    let out = cfg.out_dir()?;
    let report = reproduce_counterexample(cfg.pairwise_weight)?;
    if let Some(dir) = out {
        write_json(&dir.join("counterexample.json"), &report)?;
    }
    Ok(report)
}

/// Writes `dataset.json`, `labels.csv` and, for planted models,
/// `planted_weights.json` into the output directory.
pub fn cmd_gen_data(cfg: &RunConfig) -> Result<Dataset> {
    cfg.validate()?;
    let spec = cfg
        .generator
        .as_ref()
        .ok_or_else(|| invalid("gen-data needs a generator"))?;
    let out = cfg
        .out_dir()?
        .ok_or_else(|| invalid("gen-data needs --out"))?;
    let ds = cfg.dataset()?;
    if let GeneratorSpec::Multilabel(spec) = spec {
        let (_, planted) = gen_multilabel(spec)?;
        write_json(&out.join("planted_weights.json"), &planted)?;
    }
    save_dataset(&ds, &out.join("dataset.json"))?;
    export_labels_csv(&ds, &out.join("labels.csv"))?;
    Ok(ds)
}

#[derive(Debug, Parser)]
#[command(name = "tightlab", version, about = "LP relaxation tightness laboratory for structured prediction")]
pub struct Cli {
    /// Worker threads for per-instance parallel work.
    #[arg(long, global = true, env = "TIGHTLAB_WORKERS")]
    pub workers: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a structured SVM with block-coordinate Frank-Wolfe.
    Train(TrainArgs),
    /// Hinge decomposition, fractionality, margins and tightness of a model.
    Diagnose(ModelArgs),
    /// Tightness certificates per instance.
    Certify(CertifyArgs),
    /// Generalization bound for the fractionality loss.
    Bound(BoundArgs),
    /// Check the frustrated-triangle counterexample.
    ReproduceCounterexample(ReproduceArgs),
    /// Generate a synthetic dataset.
    GenData(GenDataArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Relaxed,
    Exact,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum LossArg {
    Hamming,
    Zero,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum MetricArg {
    F1,
    NodeAccuracy,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ScopeArg {
    All,
    TrainOnly,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum GeneratorArg {
    Counterexample,
    Multilabel,
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// JSON run configuration; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Seed for training, perturbations and random weights.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Dataset JSON file.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Use the built-in frustrated-triangle counterexample.
    #[arg(long, conflicts_with = "data")]
    pub counterexample: bool,
    /// Standard deviation of Gaussian noise added to singleton features.
    #[arg(long)]
    pub feature_noise: Option<f64>,
    /// Shuffle each label column across instances.
    #[arg(long, value_enum)]
    pub randomize_labels: Option<ScopeArg>,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub passes: Option<usize>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// Weighted averaging of iterates.
    #[arg(long)]
    pub averaging: bool,
    #[arg(long, value_enum)]
    pub loss: Option<LossArg>,
    #[arg(long, value_enum)]
    pub metric: Option<MetricArg>,
    /// Skip the exact training objective in per-pass metrics.
    #[arg(long)]
    pub no_exact_metrics: bool,
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub data: DataArgs,
    /// Weights as a JSON array.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Use standard normal weights drawn from the seed.
    #[arg(long, conflicts_with = "weights")]
    pub random_weights: bool,
    /// Comma-separated γ values.
    #[arg(long, value_delimiter = ',')]
    pub gamma: Option<Vec<f64>>,
    /// Histogram bins for integrality margins.
    #[arg(long)]
    pub bins: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct CertifyArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Smallest accepted singleton strength β.
    #[arg(long)]
    pub beta_min: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct BoundArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// `diagnose.json` from a previous diagnose run.
    #[arg(long)]
    pub diagnostics: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub gamma: Option<Vec<f64>>,
    #[arg(long)]
    pub delta: Option<f64>,
    /// Constant in front of the complexity term.
    #[arg(long)]
    pub constant: Option<f64>,
    #[arg(long, requires_all = ["q", "b", "r_hat", "ramp_mean"], conflicts_with = "diagnostics")]
    pub m: Option<usize>,
    #[arg(long)]
    pub q: Option<usize>,
    #[arg(long)]
    pub b: Option<f64>,
    #[arg(long)]
    pub r_hat: Option<f64>,
    #[arg(long)]
    pub ramp_mean: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct ReproduceArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Shared pairwise weight; values other than 1 are reported without checks.
    #[arg(long)]
    pub w: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct GenDataArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, value_enum, default_value = "multilabel")]
    pub kind: GeneratorArg,
    #[arg(long, default_value_t = 8)]
    pub labels: usize,
    #[arg(long, default_value_t = 100)]
    pub train: usize,
    #[arg(long, default_value_t = 100)]
    pub test: usize,
    #[arg(long, default_value_t = 10)]
    pub features: usize,
    #[arg(long, default_value_t = 1.0)]
    pub w_scale: f64,
    #[arg(long, default_value_t = 1.0)]
    pub pairwise_scale: f64,
    #[arg(long, default_value_t = 0.0)]
    pub label_noise: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub bias_shift: f64,
    /// Nonnegative planted pairwise weights.
    #[arg(long)]
    pub attractive: bool,
    #[arg(long)]
    pub feature_noise: Option<f64>,
    #[arg(long, value_enum)]
    pub randomize_labels: Option<ScopeArg>,
}

fn base_config(common: &CommonArgs, command: &str) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    cfg.command = command.to_string();
    if let Some(out) = &common.out {
        cfg.out_dir = Some(out.clone());
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
        cfg.train.seed = seed;
    }
    Ok(cfg)
}

fn apply_data(cfg: &mut RunConfig, data: &DataArgs) {
    if let Some(path) = &data.data {
        cfg.data = Some(path.clone());
        cfg.generator = None;
    }
    if data.counterexample {
        cfg.generator = Some(GeneratorSpec::Counterexample);
        cfg.data = None;
    }
    if let Some(s) = data.feature_noise {
        cfg.feature_noise = s;
    }
    if let Some(scope) = data.randomize_labels {
        cfg.randomize_labels = Some(scope.into());
    }
}

fn apply_model(cfg: &mut RunConfig, m: &ModelArgs) {
    apply_data(cfg, &m.data);
    if let Some(w) = &m.weights {
        cfg.weights = Some(w.clone());
        cfg.random_weights = false;
    }
    if m.random_weights {
        cfg.random_weights = true;
        cfg.weights = None;
    }
    if let Some(g) = &m.gamma {
        cfg.gamma_grid = g.clone();
    }
    if let Some(b) = m.bins {
        cfg.bins = b;
    }
}

impl From<ScopeArg> for LabelScope {
    fn from(s: ScopeArg) -> Self {
        match s {
            ScopeArg::All => LabelScope::All,
            ScopeArg::TrainOnly => LabelScope::TrainOnly,
        }
    }
}

/// Turns parsed arguments into a validated run configuration.
pub fn resolve(command: &Command) -> Result<RunConfig> {
    let cfg = match command {
        Command::Train(a) => {
            let mut cfg = base_config(&a.common, "train")?;
            apply_data(&mut cfg, &a.data);
            let t = &mut cfg.train;
            if let Some(v) = a.lambda {
                t.lambda = v;
            }
            if let Some(v) = a.passes {
                t.passes = v;
            }
            if let Some(m) = a.mode {
                t.inference_mode = match m {
                    ModeArg::Relaxed => InferenceMode::Relaxed,
                    ModeArg::Exact => InferenceMode::Exact,
                };
            }
            if a.averaging {
                t.averaging = true;
            }
            if let Some(l) = a.loss {
                t.task_loss = match l {
                    LossArg::Hamming => TaskLoss::Hamming,
                    LossArg::Zero => TaskLoss::Zero,
                };
            }
            if let Some(m) = a.metric {
                t.task_metric = match m {
                    MetricArg::F1 => TaskMetric::F1,
                    MetricArg::NodeAccuracy => TaskMetric::NodeAccuracy,
                };
            }
            if a.no_exact_metrics {
                t.exact_metrics = false;
            }
            cfg
        }
        Command::Diagnose(m) => {
            let mut cfg = base_config(&m.common, "diagnose")?;
            apply_model(&mut cfg, m);
            cfg
        }
        Command::Certify(c) => {
            let mut cfg = base_config(&c.model.common, "certify")?;
            apply_model(&mut cfg, &c.model);
            if let Some(b) = c.beta_min {
                cfg.beta_min = b;
            }
            cfg
        }
        Command::Bound(b) => {
            let mut cfg = base_config(&b.common, "bound")?;
            if let Some(p) = &b.diagnostics {
                cfg.diagnostics = Some(p.clone());
                cfg.manual_bound = None;
            }
            if let Some(g) = &b.gamma {
                cfg.gamma_grid = g.clone();
            }
            if let Some(d) = b.delta {
                cfg.delta = d;
            }
            if let Some(c) = b.constant {
                cfg.bound_constant = c;
            }
            if let (Some(m), Some(q), Some(bb), Some(r), Some(ramp)) = (b.m, b.q, b.b, b.r_hat, b.ramp_mean) {
                cfg.manual_bound = Some(ManualBound {
                    m,
                    q,
                    b: bb,
                    r_hat: r,
                    empirical_ramp_mean: ramp,
                });
                cfg.diagnostics = None;
            }
            cfg
        }
        Command::ReproduceCounterexample(r) => {
            let mut cfg = base_config(&r.common, "reproduce-counterexample")?;
            if let Some(w) = r.w {
                cfg.pairwise_weight = w;
            }
            cfg
        }
        Command::GenData(g) => {
            let mut cfg = base_config(&g.common, "gen-data")?;
            cfg.generator = Some(match g.kind {
                GeneratorArg::Counterexample => GeneratorSpec::Counterexample,
                GeneratorArg::Multilabel => GeneratorSpec::Multilabel(MultilabelSpec {
                    n_labels: g.labels,
                    n_train: g.train,
                    n_test: g.test,
                    feature_dim: g.features,
                    planted_w_scale: g.w_scale,
                    pairwise_scale: g.pairwise_scale,
                    label_noise: g.label_noise,
                    bias_shift: g.bias_shift,
                    attractive: g.attractive,
                    seed: cfg.seed,
                }),
            });
            cfg.data = None;
            if let Some(s) = g.feature_noise {
                cfg.feature_noise = s;
            }
            if let Some(scope) = g.randomize_labels {
                cfg.randomize_labels = Some(scope.into());
            }
            cfg
        }
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Runs one parsed command line, printing a short summary to stdout.
/// Returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    if let Some(n) = cli.workers {
        // a pool may already exist when called repeatedly in one process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    match run_command(&cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn run_command(command: &Command) -> Result<i32> {
    let cfg = resolve(command)?;
    match command {
        Command::Train(_) => {
            let s = cmd_train(&cfg)?;
            let r = &s.final_record;
            println!(
                "trained {} passes: train tight {:.3}, test tight {}, task accuracy {:.3}, relaxed objective {:.6}",
                s.passes,
                r.train_tight_fraction,
                r.test_tight_fraction.map_or("n/a".to_string(), |v| format!("{v:.3}")),
                r.task_accuracy,
                r.relaxed_objective
            );
        }
        Command::Diagnose(_) => {
            let d = cmd_diagnose(&cfg)?;
            let fmt = |s: &Option<TightnessSummary>| s.map_or("n/a".to_string(), |t| format!("{:.3}", t.tight_fraction));
            println!(
                "diagnosed {} instances: train tight {}, test tight {}, fractionality loss {:.3}",
                d.n_instances,
                fmt(&d.train_tightness),
                fmt(&d.test_tightness),
                d.fractionality_loss_mean
            );
        }
        Command::Certify(_) => {
            let c = cmd_certify(&cfg)?;
            println!(
                "certified {} instances: balanced-unique {}, strong-singleton {}, mean singleton condition share {:.3}",
                c.n_instances, c.balanced_certified, c.singleton_certified, c.mean_singleton_satisfied_fraction
            );
        }
        Command::Bound(_) => {
            for r in cmd_bound(&cfg)? {
                println!(
                    "gamma {}: bound {:.6} = ramp {:.6} + complexity {:.6} + confidence {:.6}",
                    r.gamma, r.bound_value, r.empirical_ramp_mean, r.rademacher_term, r.confidence_term
                );
            }
        }
        Command::ReproduceCounterexample(_) => {
            let r = cmd_reproduce_counterexample(&cfg)?;
            println!("{}", serde_json::to_string_pretty(&r)?);
            if r.checks.is_empty() {
                println!("REPORTED (no checks at pairwise weight {})", r.pairwise_weight);
            } else {
                for (name, ok) in &r.checks {
                    println!("{} {name}", if *ok { "PASS" } else { "FAIL" });
                }
                println!("{}", if r.passed { "PASS" } else { "FAIL" });
                if !r.passed {
                    return Ok(EXIT_FAIL);
                }
            }
        }
        Command::GenData(_) => {
            let ds = cmd_gen_data(&cfg)?;
            println!(
                "wrote {} instances ({} train, {} test) to {}",
                ds.len(),
                ds.train().len(),
                ds.test().len(),
                cfg.out_dir.as_deref().unwrap_or(Path::new(".")).display()
            );
        }
    }
    Ok(EXIT_OK)
}
