//! Datasets: the JSON file format, synthetic generators, the frustrated
//! triangle counterexample, and perturbations (feature noise, label shuffling).
//!
//! File format (one JSON object, keys in this order):
//!
//! ```text
//! { "format": "tightlab-dataset/1",
//!   "graph": { "cardinalities": [..], "factors": [[..], ..] },
//!   "feature_dim": d,
//!   "provenance": { "generator": "..", "seed": s, "noise_sigma": σ, "notes": {..} },
//!   "instances": [ { "split": "train" | "test",
//!                    "label": [..],          // optional
//!                    "features": [ [[index, value], ..], .. ] } ] }
//! ```
//!
//! `features` holds one sparse feature list per score-vector coordinate, in
//! the coordinate order of [`FactorGraph`].

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factor_graph::{build_score_vector, FactorGraph, Instance, SparseFeature, Weights};
use crate::inference::MapSolver;

pub const FORMAT_TAG: &str = "tightlab-dataset/1";

/// Variable limit for generated multi-label data, so exact diagnostics apply.
pub const MAX_GENERATED_LABELS: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub generator: String,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub noise_sigma: f64,
    /// Free-form generator details.
    #[serde(default, skip_serializing_if = "serde_json::Map::is_empty")]
    pub notes: serde_json::Map<String, serde_json::Value>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub graph: FactorGraph,
    pub feature_dim: usize,
    pub provenance: Provenance,
    pub instances: Vec<Instance>,
    pub splits: Vec<Split>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn split(&self, which: Split) -> Vec<Instance> {
        self.instances
            .iter()
            .zip(&self.splits)
            .filter(|(_, &s)| s == which)
            .map(|(inst, _)| inst.clone())
            .collect()
    }

    pub fn train(&self) -> Vec<Instance> {
        self.split(Split::Train)
    }

    pub fn test(&self) -> Vec<Instance> {
        self.split(Split::Test)
    }

    /// Largest per-coordinate feature norm over all instances.
    pub fn r_hat(&self) -> f64 {
        self.instances
            .iter()
            .map(Instance::max_feature_norm)
            .fold(0.0, f64::max)
    }

    pub fn to_json_string(&self) -> Result<String> {
        let file = DatasetFile {
            format: FORMAT_TAG.to_string(),
            graph: self.graph.clone(),
            feature_dim: self.feature_dim,
            provenance: self.provenance.clone(),
            instances: self
                .instances
                .iter()
                .zip(&self.splits)
                .map(|(inst, &split)| InstanceRecord {
                    split,
                    label: inst.label().map(<[usize]>::to_vec),
                    features: inst.features().to_vec(),
                })
                .collect(),
        };
        let mut s = serde_json::to_string(&file)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let mut de = serde_json::Deserializer::from_str(text);
        let file: DatasetFile = serde_path_to_error::deserialize(&mut de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            if inner.is_syntax() || inner.is_eof() || path == "." {
                Error::Parse {
                    line: inner.line(),
                    column: inner.column(),
                    message: inner.to_string(),
                }
            } else {
                Error::schema(path, inner.to_string())
            }
        })?;
        de.end().map_err(|e| Error::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        if file.format != FORMAT_TAG {
            return Err(Error::schema(
                "format",
                format!("expected \"{FORMAT_TAG}\", found \"{}\"", file.format),
            ));
        }
        let graph = file.graph;
        let mut instances = Vec::with_capacity(file.instances.len());
        let mut splits = Vec::with_capacity(file.instances.len());
        for (m, rec) in file.instances.into_iter().enumerate() {
            let at = |field: &str| format!("instances[{m}].{field}");
            if rec.features.len() != graph.dim() {
                return Err(Error::schema(
                    at("features"),
                    format!(
                        "expected {} coordinate entries, found {}",
                        graph.dim(),
                        rec.features.len()
                    ),
                ));
            }
            for (k, f) in rec.features.iter().enumerate() {
                if let Some(&(idx, _)) = f.iter().find(|(idx, _)| *idx >= file.feature_dim) {
                    return Err(Error::schema(
                        format!("instances[{m}].features[{k}]"),
                        format!("feature index {idx} not below feature_dim {}", file.feature_dim),
                    ));
                }
            }
            if let Some(y) = &rec.label {
                graph
                    .check_labeling(y)
                    .map_err(|e| Error::schema(at("label"), e.to_string()))?;
            }
            let inst = Instance::new(&graph, file.feature_dim, rec.features, rec.label)
                .map_err(|e| Error::schema(format!("instances[{m}]"), e.to_string()))?;
            instances.push(inst);
            splits.push(rec.split);
        }
        Ok(Dataset {
            graph,
            feature_dim: file.feature_dim,
            provenance: file.provenance,
            instances,
            splits,
        })
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetFile {
    format: String,
    graph: FactorGraph,
    feature_dim: usize,
    #[serde(default)]
    provenance: Provenance,
    instances: Vec<InstanceRecord>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InstanceRecord {
    split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<Vec<usize>>,
    features: Vec<SparseFeature>,
}

pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    std::fs::write(path, ds.to_json_string()?)?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    Dataset::from_json_str(&std::fs::read_to_string(path)?)
}

/// Label matrix as CSV: `instance,split,y0,..,y{n-1}`; unlabeled rows have empty cells.
pub fn export_labels_csv(ds: &Dataset, path: &Path) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path)?;
    let n = ds.graph.n_vars();
    let mut header = vec!["instance".to_string(), "split".to_string()];
    header.extend((0..n).map(|i| format!("y{i}")));
    wtr.write_record(&header)?;
    for (m, (inst, split)) in ds.instances.iter().zip(&ds.splits).enumerate() {
        let mut row = vec![
            m.to_string(),
            match split {
                Split::Train => "train".into(),
                Split::Test => "test".into(),
            },
        ];
        match inst.label() {
            Some(y) => row.extend(y.iter().map(usize::to_string)),
            None => row.extend(std::iter::repeat_n(String::new(), n)),
        }
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Index of the shared pairwise feature in the counterexample.
pub const COUNTEREXAMPLE_PAIR_FEATURE: usize = 3;

/// Three binary variables on a triangle. Singleton feature `x_i` on state 1
/// of variable `i`; one shared feature on every edge's disagreeing states.
/// Instances `x = (2,2,2)` and `x = (0,0,0)`, both labeled `(1,1,0)`.
pub fn counterexample_dataset() -> Dataset {
    let graph = FactorGraph::binary_pairwise(3, &[(0, 1), (0, 2), (1, 2)]).expect("triangle");
    let make = |x: f64| {
        let mut feats = vec![Vec::new(); graph.dim()];
        for i in 0..3 {
            feats[graph.var_coord(i, 1)] = vec![(i, x)];
        }
        for c in 0..3 {
            let s = graph.factor_block(c).start;
            feats[s + 1] = vec![(COUNTEREXAMPLE_PAIR_FEATURE, 1.0)];
            feats[s + 2] = vec![(COUNTEREXAMPLE_PAIR_FEATURE, 1.0)];
        }
        Instance::new(&graph, 4, feats, Some(vec![1, 1, 0])).expect("valid instance")
    };
    let instances = vec![make(2.0), make(0.0)];
    Dataset {
        feature_dim: 4,
        provenance: Provenance {
            generator: "counterexample".into(),
            ..Provenance::default()
        },
        splits: vec![Split::Train; 2],
        instances,
        graph,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MultilabelSpec {
    pub n_labels: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub feature_dim: usize,
    /// Standard deviation of planted singleton weights.
    pub planted_w_scale: f64,
    /// Standard deviation of planted pairwise weights.
    #[serde(default = "default_pairwise_scale")]
    pub pairwise_scale: f64,
    /// Independent flip probability per label bit.
    #[serde(default)]
    pub label_noise: f64,
    /// Added to every planted bias weight; negative values make positive labels rarer.
    #[serde(default)]
    pub bias_shift: f64,
    /// Make every planted pairwise weight nonnegative.
    #[serde(default)]
    pub attractive: bool,
    pub seed: u64,
}

fn default_pairwise_scale() -> f64 {
    1.0
}

impl MultilabelSpec {
    fn validate(&self) -> Result<()> {
        if self.n_labels == 0 || self.n_labels > MAX_GENERATED_LABELS {
            return Err(Error::Domain(format!(
                "n_labels must be in 1..={MAX_GENERATED_LABELS}, got {}",
                self.n_labels
            )));
        }
        if !(self.planted_w_scale >= 0.0 && self.pairwise_scale >= 0.0)
            || !(self.planted_w_scale.is_finite() && self.pairwise_scale.is_finite())
        {
            return Err(Error::Domain("weight scales must be finite and nonnegative".into()));
        }
        if !self.bias_shift.is_finite() {
            return Err(Error::Domain("bias_shift must be finite".into()));
        }
        if !(0.0..=1.0).contains(&self.label_noise) {
            return Err(Error::Domain("label_noise must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// Total weight dimension: a feature block plus bias per label, one weight per edge.
    pub fn weight_dim(&self) -> usize {
        let e = self.n_labels * (self.n_labels - 1) / 2;
        self.n_labels * (self.feature_dim + 1) + e
    }
}

/// Fully connected binary labels. Label `i` in state 1 sees the input `x`
/// through its own weight block plus a bias; every edge has one weight on
/// its `(1,1)` state. Labels are the exact MAP under planted weights, then
/// flipped independently with probability `label_noise`.
///
/// Returns the dataset (train instances first) and the planted weights.
pub fn gen_multilabel(spec: &MultilabelSpec) -> Result<(Dataset, Weights)> {
    spec.validate()?;
    let l = spec.n_labels;
    let f = spec.feature_dim;
    let graph = FactorGraph::fully_connected_binary(l);
    let d = spec.weight_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let node = Normal::new(0.0, spec.planted_w_scale).map_err(|e| Error::Domain(e.to_string()))?;
    let pair = Normal::new(0.0, spec.pairwise_scale).map_err(|e| Error::Domain(e.to_string()))?;
    let mut planted = Vec::with_capacity(d);
    for k in 0..l * (f + 1) {
        let shift = if k % (f + 1) == f { spec.bias_shift } else { 0.0 };
        planted.push(node.sample(&mut rng) + shift);
    }
    for _ in 0..graph.n_factors() {
        let v: f64 = pair.sample(&mut rng);
        planted.push(if spec.attractive { v.abs() } else { v });
    }
    let planted = Weights::from(planted);

    let total = spec.n_train + spec.n_test;
    let inputs: Vec<Vec<f64>> = (0..total)
        .map(|_| (0..f).map(|_| StandardNormal.sample(&mut rng)).collect())
        .collect();
    let mut instances = inputs
        .iter()
        .map(|x| multilabel_instance(&graph, f, d, x))
        .collect::<Result<Vec<_>>>()?;

    let solver = MapSolver::new(&graph);
    let labels = instances
        .par_iter()
        .map(|inst| {
            let theta = build_score_vector(&planted, inst)?;
            Ok(solver.ilp_map(&theta)?.labeling.expect("exact labeling"))
        })
        .collect::<Result<Vec<_>>>()?;
    for (inst, mut y) in instances.iter_mut().zip(labels) {
        for v in y.iter_mut() {
            if rng.random::<f64>() < spec.label_noise {
                *v = 1 - *v;
            }
        }
        inst.set_label(Some(y));
    }

    let mut splits = vec![Split::Train; spec.n_train];
    splits.extend(std::iter::repeat_n(Split::Test, spec.n_test));
    let mut notes = serde_json::Map::new();
    notes.insert("spec".into(), serde_json::to_value(spec)?);
    let ds = Dataset {
        graph,
        feature_dim: d,
        provenance: Provenance {
            generator: "multilabel".into(),
            seed: Some(spec.seed),
            noise_sigma: 0.0,
            notes,
        },
        instances,
        splits,
    };
    Ok((ds, planted))
}

fn multilabel_instance(graph: &FactorGraph, f: usize, d: usize, x: &[f64]) -> Result<Instance> {
    let l = graph.n_vars();
    let mut feats: Vec<SparseFeature> = vec![Vec::new(); graph.dim()];
    for i in 0..l {
        let base = i * (f + 1);
        let mut v: SparseFeature = x.iter().enumerate().map(|(k, &xk)| (base + k, xk)).collect();
        v.push((base + f, 1.0));
        feats[graph.var_coord(i, 1)] = v;
    }
    for c in 0..graph.n_factors() {
        feats[graph.factor_block(c).start + 3] = vec![(l * (f + 1) + c, 1.0)];
    }
    Instance::new(graph, d, feats, None)
}

/// Adds independent `N(0, σ²)` noise to every stored entry of every
/// singleton-coordinate feature; factor features and labels are untouched.
pub fn add_feature_noise(ds: &Dataset, sigma: f64, seed: u64) -> Result<Dataset> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::Domain(format!("sigma must be finite and nonnegative, got {sigma}")));
    }
    let mut out = ds.clone();
    if sigma == 0.0 {
        return Ok(out);
    }
    let noise = Normal::new(0.0, sigma).map_err(|e| Error::Domain(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_single = ds.graph.n_singleton_coords();
    for inst in &mut out.instances {
        for f in &mut inst.features_mut()[..n_single] {
            for (_, v) in f.iter_mut() {
                *v += noise.sample(&mut rng);
            }
        }
    }
    let prev = out.provenance.noise_sigma;
    out.provenance.noise_sigma = (prev * prev + sigma * sigma).sqrt();
    Ok(out)
}

/// Which instances take part in label shuffling.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelScope {
    #[default]
    All,
    TrainOnly,
}

/// Permutes each label column independently across the instances in
/// `scope`, so per-label state counts are preserved exactly.
pub fn randomize_labels(ds: &Dataset, seed: u64, scope: LabelScope) -> Result<Dataset> {
    let members: Vec<usize> = (0..ds.len())
        .filter(|&m| scope == LabelScope::All || ds.splits[m] == Split::Train)
        .collect();
    let mut labels = members
        .iter()
        .map(|&m| {
            ds.instances[m]
                .label()
                .map(<[usize]>::to_vec)
                .ok_or_else(|| Error::Domain(format!("instance {m} has no label to shuffle")))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..ds.graph.n_vars() {
        let mut column: Vec<usize> = labels.iter().map(|y| y[i]).collect();
        column.shuffle(&mut rng);
        for (y, v) in labels.iter_mut().zip(column) {
            y[i] = v;
        }
    }
    let mut out = ds.clone();
    for (&m, y) in members.iter().zip(labels) {
        out.instances[m].set_label(Some(y));
    }
    out.provenance
        .notes
        .insert("labels_shuffled_seed".into(), serde_json::Value::from(seed));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tightness::hinge_decomposition;

    fn small_spec() -> MultilabelSpec {
        MultilabelSpec {
            n_labels: 4,
            n_train: 6,
            n_test: 4,
            feature_dim: 3,
            planted_w_scale: 1.0,
            pairwise_scale: 1.0,
            label_noise: 0.0,
            bias_shift: 0.0,
            attractive: false,
            seed: 7,
        }
    }

    #[test]
    fn counterexample_shape() {
        let ds = counterexample_dataset();
        assert_eq!((ds.len(), ds.graph.n_vars(), ds.feature_dim), (2, 3, 4));
        let w = Weights::from(vec![1.0; 4]);
        let gaps: Vec<f64> = ds
            .instances
            .iter()
            .map(|inst| {
                let theta = build_score_vector(&w, inst).unwrap();
                let anchor = crate::factor_graph::assignment_to_mu(&ds.graph, inst.label().unwrap()).unwrap();
                hinge_decomposition(&ds.graph, &theta, &anchor).unwrap().integrality_gap
            })
            .collect();
        assert!((gaps[0] - 0.0).abs() < 1e-9 && (gaps[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn two_labels_have_dimension_eight() {
        let spec = MultilabelSpec { n_labels: 2, ..small_spec() };
        let (ds, w) = gen_multilabel(&spec).unwrap();
        assert_eq!(ds.graph.n_factors(), 1);
        assert_eq!(ds.graph.dim(), 8);
        assert_eq!(w.len(), spec.weight_dim());
    }

    #[test]
    fn noiseless_generation_is_separable_at_planted_weights() {
        let (ds, w) = gen_multilabel(&small_spec()).unwrap();
        let solver = MapSolver::new(&ds.graph);
        for inst in &ds.instances {
            let theta = build_score_vector(&w, inst).unwrap();
            let best = solver.ilp_map(&theta).unwrap().value;
            assert!((ds.graph.labeling_score(&theta, inst.label().unwrap()) - best).abs() < 1e-9);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = gen_multilabel(&small_spec()).unwrap().0.to_json_string().unwrap();
        let b = gen_multilabel(&small_spec()).unwrap().0.to_json_string().unwrap();
        assert_eq!(a, b);
        let c = gen_multilabel(&MultilabelSpec { seed: 8, ..small_spec() }).unwrap().0;
        assert_ne!(a, c.to_json_string().unwrap());
    }

    #[test]
    fn json_round_trip_is_byte_stable() {
        let (ds, _) = gen_multilabel(&small_spec()).unwrap();
        let text = ds.to_json_string().unwrap();
        let back = Dataset::from_json_str(&text).unwrap();
        assert!(back == ds, "parsed dataset differs");
        assert_eq!(back.to_json_string().unwrap(), text);
    }

    #[test]
    fn missing_label_loads_unlabeled() {
        let ds = counterexample_dataset();
        let text = ds.to_json_string().unwrap().replacen(r#""label":[1,1,0],"#, "", 1);
        let back = Dataset::from_json_str(&text).unwrap();
        assert!(back.instances[0].label().is_none());
        assert!(back.instances[1].label().is_some());
    }

    #[test]
    fn schema_errors_name_the_field() {
        let ds = counterexample_dataset();
        let text = ds.to_json_string().unwrap();

        let short = text.replacen(r#""features":[[],"#, r#""features":["#, 1);
        match Dataset::from_json_str(&short) {
            Err(Error::Schema { path, .. }) => assert_eq!(path, "instances[0].features"),
            other => panic!("{other:?}"),
        }
        let bad_index = text.replacen("[[0,2.0]]", "[[9,2.0]]", 1);
        match Dataset::from_json_str(&bad_index) {
            Err(Error::Schema { path, .. }) => assert_eq!(path, "instances[0].features[1]"),
            other => panic!("{other:?}"),
        }
        let bad_type = text.replacen(r#""feature_dim":4"#, r#""feature_dim":"four""#, 1);
        match Dataset::from_json_str(&bad_type) {
            Err(Error::Schema { path, .. }) => assert_eq!(path, "feature_dim"),
            other => panic!("{other:?}"),
        }
        let bad_label = text.replacen("[1,1,0]", "[1,2,0]", 1);
        match Dataset::from_json_str(&bad_label) {
            Err(Error::Schema { path, .. }) => assert_eq!(path, "instances[0].label"),
            other => panic!("{other:?}"),
        }
        match Dataset::from_json_str("{\n  \"format\": ") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn feature_noise_touches_only_singletons() {
        let (ds, _) = gen_multilabel(&small_spec()).unwrap();
        assert_eq!(add_feature_noise(&ds, 0.0, 1).unwrap(), ds);
        let a = add_feature_noise(&ds, 0.5, 1).unwrap();
        assert_eq!(a, add_feature_noise(&ds, 0.5, 1).unwrap());
        let n_single = ds.graph.n_singleton_coords();
        for (x, y) in ds.instances.iter().zip(&a.instances) {
            assert_eq!(x.label(), y.label());
            assert_eq!(x.features()[n_single..], y.features()[n_single..]);
            assert_ne!(x.features()[..n_single], y.features()[..n_single]);
        }
        assert!(add_feature_noise(&ds, -1.0, 1).is_err());
    }

    #[test]
    fn shuffling_preserves_label_counts() {
        let spec = MultilabelSpec { n_train: 40, n_test: 10, ..small_spec() };
        let (ds, _) = gen_multilabel(&spec).unwrap();
        let shuffled = randomize_labels(&ds, 3, LabelScope::All).unwrap();
        let counts = |d: &Dataset| -> Vec<usize> {
            (0..d.graph.n_vars())
                .map(|i| d.instances.iter().map(|x| x.label().unwrap()[i]).sum())
                .collect()
        };
        assert_eq!(counts(&ds), counts(&shuffled));
        let changed = ds
            .instances
            .iter()
            .zip(&shuffled.instances)
            .filter(|(a, b)| a.label() != b.label())
            .count();
        assert!(changed > 10);
        assert_eq!(shuffled, randomize_labels(&ds, 3, LabelScope::All).unwrap());

        let train_only = randomize_labels(&ds, 3, LabelScope::TrainOnly).unwrap();
        assert_eq!(train_only.test(), ds.test());
    }
}
