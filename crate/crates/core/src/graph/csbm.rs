use rand::Rng;
use rand_distr::StandardNormal;

use super::{DomainGraph, GraphError};
use crate::autodiff::Tensor;
use crate::kv::{self, KvError};
use crate::rng::{substream, SeededRng, Stream};

/// How the target domain departs from the source recipe.
#[derive(Clone, Debug, PartialEq)]
pub struct DomainShift {
    /// Added to every class mean after rotation. Empty means no translation.
    pub translation: Vec<f64>,
    /// Rotation of the class means inside `rotation_plane`.
    pub rotation_degrees: f64,
    pub rotation_plane: (usize, usize),
    pub delta_p_in: f64,
    pub delta_p_out: f64,
}

impl Default for DomainShift {
    fn default() -> Self {
        Self {
            translation: Vec::new(),
            rotation_degrees: 0.0,
            rotation_plane: (0, 1),
            delta_p_in: 0.0,
            delta_p_out: 0.0,
        }
    }
}

impl DomainShift {
    pub fn is_null(&self) -> bool {
        self.translation.iter().all(|&t| t == 0.0)
            && self.rotation_degrees == 0.0
            && self.delta_p_in == 0.0
            && self.delta_p_out == 0.0
    }
}

/// Contextual stochastic block model for a source/target domain pair.
///
/// Nodes carry class-conditional Gaussian features `N(μ_c, σ² I)`; an edge
/// joins two nodes with probability `p_in` when their classes agree and
/// `p_out` otherwise.
#[derive(Clone, Debug, PartialEq)]
pub struct CsbmSpec {
    pub nodes_per_domain: usize,
    pub feature_dim: usize,
    pub num_classes: usize,
    pub class_means: Vec<Vec<f64>>,
    pub feature_noise: f64,
    pub p_in: f64,
    pub p_out: f64,
    pub shift: DomainShift,
    pub seed: u64,
}

impl CsbmSpec {
    /// Two-class, 16-dimensional task used by the adaptation experiments.
    ///
    /// Class evidence sits mostly on feature 0 with a weaker copy spread over
    /// features 2..16. The target moves feature 0 by two class radii, rotates
    /// the (0, 1) plane by 30 degrees and adds 0.02 to the cross-class edge
    /// probability.
    pub fn canonical(seed: u64) -> Self {
        let d = 16;
        let weak = 0.35;
        let mut mean = vec![0.0; d];
        mean[0] = 1.5;
        for v in mean.iter_mut().skip(2) {
            *v = weak;
        }
        let neg: Vec<f64> = mean.iter().map(|v| -v).collect();
        let mut translation = vec![0.0; d];
        translation[0] = 3.0;
        Self {
            nodes_per_domain: 1000,
            feature_dim: d,
            num_classes: 2,
            class_means: vec![neg, mean],
            feature_noise: 1.0,
            p_in: 0.02,
            p_out: 0.004,
            shift: DomainShift {
                translation,
                rotation_degrees: 30.0,
                rotation_plane: (0, 1),
                delta_p_in: 0.0,
                delta_p_out: 0.02,
            },
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), GraphError> {
        let spec_err = |field, message: String| Err(GraphError::Spec { field, message });
        if self.nodes_per_domain == 0 {
            return spec_err("nodes_per_domain", "must be positive".into());
        }
        if self.feature_dim == 0 {
            return spec_err("feature_dim", "must be positive".into());
        }
        if self.num_classes == 0 || self.num_classes > self.nodes_per_domain {
            return spec_err("num_classes", format!("{} classes for {} nodes", self.num_classes, self.nodes_per_domain));
        }
        if self.class_means.len() != self.num_classes {
            return spec_err("class_mean", format!("{} mean vectors for {} classes", self.class_means.len(), self.num_classes));
        }
        if let Some(m) = self.class_means.iter().find(|m| m.len() != self.feature_dim) {
            return spec_err("class_mean", format!("mean of length {} for feature_dim {}", m.len(), self.feature_dim));
        }
        if self.class_means.iter().flatten().any(|v| !v.is_finite()) {
            return spec_err("class_mean", "non-finite entry".into());
        }
        if !(self.feature_noise > 0.0 && self.feature_noise.is_finite()) {
            return spec_err("feature_noise", format!("{} is not positive", self.feature_noise));
        }
        if !(0.0 <= self.p_out && self.p_out <= self.p_in && self.p_in <= 1.0) {
            return spec_err("p_in", format!("need 0 <= p_out ({}) <= p_in ({}) <= 1", self.p_out, self.p_in));
        }
        let s = &self.shift;
        if !s.translation.is_empty() && s.translation.len() != self.feature_dim {
            return spec_err("shift.translation", format!("length {} for feature_dim {}", s.translation.len(), self.feature_dim));
        }
        if s.rotation_degrees != 0.0 {
            let (a, b) = s.rotation_plane;
            if a == b || a >= self.feature_dim || b >= self.feature_dim {
                return spec_err("shift.rotation_plane", format!("({a}, {b}) is not a plane of {} features", self.feature_dim));
            }
        }
        let p_in = self.p_in + s.delta_p_in;
        let p_out = self.p_out + s.delta_p_out;
        if !(0.0..=1.0).contains(&p_in) {
            return spec_err("shift.delta_p_in", format!("shifted p_in {p_in} outside [0, 1]"));
        }
        if !(0.0..=1.0).contains(&p_out) {
            return spec_err("shift.delta_p_out", format!("shifted p_out {p_out} outside [0, 1]"));
        }
        Ok(())
    }

    /// Class means of the target domain: rotated, then translated.
    pub fn target_means(&self) -> Vec<Vec<f64>> {
        let s = &self.shift;
        let (a, b) = s.rotation_plane;
        let (sin, cos) = s.rotation_degrees.to_radians().sin_cos();
        self.class_means
            .iter()
            .map(|mean| {
                let mut m = mean.clone();
                if s.rotation_degrees != 0.0 {
                    m[a] = cos * mean[a] - sin * mean[b];
                    m[b] = sin * mean[a] + cos * mean[b];
                }
                for (v, t) in m.iter_mut().zip(&s.translation) {
                    *v += t;
                }
                m
            })
            .collect()
    }

    /// Parses the flat `key = value` format written by [`CsbmSpec::to_kv_string`].
    /// Keys absent from the text keep their [`CsbmSpec::canonical`] values.
    pub fn from_kv_str(text: &str) -> Result<Self, GraphError> {
        let mut spec = Self::canonical(0);
        let entries = kv::parse(text)?;
        let mut means: Vec<(usize, Vec<f64>)> = Vec::new();
        for e in &entries {
            let (k, v) = (e.key.as_str(), e.value.as_str());
            match k {
                "nodes_per_domain" => spec.nodes_per_domain = kv::parse_value(k, v)?,
                "feature_dim" => spec.feature_dim = kv::parse_value(k, v)?,
                "num_classes" => spec.num_classes = kv::parse_value(k, v)?,
                "feature_noise" => spec.feature_noise = kv::parse_value(k, v)?,
                "p_in" => spec.p_in = kv::parse_value(k, v)?,
                "p_out" => spec.p_out = kv::parse_value(k, v)?,
                "seed" => spec.seed = kv::parse_value(k, v)?,
                "shift.translation" => spec.shift.translation = kv::parse_list(k, v)?,
                "shift.rotation_degrees" => spec.shift.rotation_degrees = kv::parse_value(k, v)?,
                "shift.rotation_plane" => {
                    let plane: Vec<usize> = kv::parse_list(k, v)?;
                    let [a, b] = plane[..] else {
                        return Err(KvError::Value { key: k.into(), value: v.into(), reason: "expected two indices".into() }.into());
                    };
                    spec.shift.rotation_plane = (a, b);
                }
                "shift.delta_p_in" => spec.shift.delta_p_in = kv::parse_value(k, v)?,
                "shift.delta_p_out" => spec.shift.delta_p_out = kv::parse_value(k, v)?,
                _ => match k.strip_prefix("class_mean.") {
                    Some(idx) => means.push((kv::parse_value(k, idx)?, kv::parse_list(k, v)?)),
                    None => return Err(KvError::UnknownKey(k.to_string()).into()),
                },
            }
        }
        if !means.is_empty() {
            means.sort_by_key(|(i, _)| *i);
            if means.iter().enumerate().any(|(i, (c, _))| i != *c) {
                return Err(GraphError::Spec { field: "class_mean", message: "class_mean.<c> keys must run 0..C".into() });
            }
            spec.class_means = means.into_iter().map(|(_, m)| m).collect();
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_kv_string(&self) -> String {
        let mut out = String::new();
        let mut line = |k: &str, v: String| {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        };
        line("nodes_per_domain", self.nodes_per_domain.to_string());
        line("feature_dim", self.feature_dim.to_string());
        line("num_classes", self.num_classes.to_string());
        for (c, m) in self.class_means.iter().enumerate() {
            line(&format!("class_mean.{c}"), kv::format_list(m));
        }
        line("feature_noise", self.feature_noise.to_string());
        line("p_in", self.p_in.to_string());
        line("p_out", self.p_out.to_string());
        line("shift.translation", kv::format_list(&self.shift.translation));
        line("shift.rotation_degrees", self.shift.rotation_degrees.to_string());
        line(
            "shift.rotation_plane",
            format!("{},{}", self.shift.rotation_plane.0, self.shift.rotation_plane.1),
        );
        line("shift.delta_p_in", self.shift.delta_p_in.to_string());
        line("shift.delta_p_out", self.shift.delta_p_out.to_string());
        line("seed", self.seed.to_string());
        out
    }
}

fn sample_domain(
    n: usize,
    num_classes: usize,
    means: &[Vec<f64>],
    noise: f64,
    p_in: f64,
    p_out: f64,
    rng: &mut SeededRng,
) -> Result<DomainGraph, GraphError> {
    let d = means[0].len();
    let labels: Vec<usize> = (0..n).map(|i| i % num_classes).collect();
    let mut features = Vec::with_capacity(n * d);
    for &c in &labels {
        for mu in &means[c] {
            let eps: f64 = rng.sample(StandardNormal);
            features.push(mu + noise * eps);
        }
    }
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let p = if labels[i] == labels[j] { p_in } else { p_out };
            if rng.random::<f64>() < p {
                edges.push((i, j));
            }
        }
    }
    DomainGraph::new(n, edges, Tensor::matrix(n, d, features)?, Some(labels), num_classes)
}

/// Draws the source and target domains of `spec`. Both carry ground-truth
/// labels; the two domains use independent random streams of `spec.seed`.
pub fn generate_csbm(spec: &CsbmSpec) -> Result<(DomainGraph, DomainGraph), GraphError> {
    spec.validate()?;
    let mut src_rng = substream(spec.seed, Stream::SourceGraph);
    let mut tgt_rng = substream(spec.seed, Stream::TargetGraph);
    let source = sample_domain(
        spec.nodes_per_domain,
        spec.num_classes,
        &spec.class_means,
        spec.feature_noise,
        spec.p_in,
        spec.p_out,
        &mut src_rng,
    )?;
    let target = sample_domain(
        spec.nodes_per_domain,
        spec.num_classes,
        &spec.target_means(),
        spec.feature_noise,
        spec.p_in + spec.shift.delta_p_in,
        spec.p_out + spec.shift.delta_p_out,
        &mut tgt_rng,
    )?;
    Ok((source, target))
}
