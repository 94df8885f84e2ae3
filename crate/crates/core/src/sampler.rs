//! Frequency samplers.
//!
//! The adaptive sampler is a `K`-component normal scale mixture: component
//! `k` draws `t = σ_k ⊙ ε` with `ε ~ N(0, I)` and `σ_k = exp(clamp(ρ_k))`, and
//! is picked with probability `softmax(logits)_k`. Draws are stratified over
//! components, and each draw carries the estimator weight `w_k / M_k`, so
//! gradients reach `ρ` through the frequencies and the logits through the
//! weights.
//!
//! The fixed-band samplers have no parameters and give every draw weight
//! `1/M`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::spectral::{alignment_loss, FrequencyMatrix};

/// Log-scales are clamped to `[-LOG_SCALE_LIMIT, LOG_SCALE_LIMIT]`.
pub const LOG_SCALE_LIMIT: f64 = 6.0;

pub const LOW_BAND: (f64, f64) = (1.0, 10.0);
pub const HIGH_BAND: (f64, f64) = (10.0, 20.0);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SamplerKind {
    Adaptive,
    Random,
    Low,
    High,
}

impl SamplerKind {
    pub fn name(self) -> &'static str {
        match self {
            SamplerKind::Adaptive => "adaptive",
            SamplerKind::Random => "random",
            SamplerKind::Low => "low",
            SamplerKind::High => "high",
        }
    }

    /// Radius band of the banded kinds.
    pub fn band(self) -> Option<(f64, f64)> {
        match self {
            SamplerKind::Low => Some(LOW_BAND),
            SamplerKind::High => Some(HIGH_BAND),
            _ => None,
        }
    }
}

impl fmt::Display for SamplerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SamplerKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "adaptive" => Ok(SamplerKind::Adaptive),
            "random" => Ok(SamplerKind::Random),
            "low" => Ok(SamplerKind::Low),
            "high" => Ok(SamplerKind::High),
            other => Err(format!("unknown sampler kind `{other}` (adaptive, random, low, high)")),
        }
    }
}

/// Learnable mixture parameters: `log_scales` is `[K, d]`, `mixture_logits`
/// is `[1, K]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplerParams {
    log_scales: Tensor,
    mixture_logits: Tensor,
}

/// Tape handles of [`SamplerParams`].
#[derive(Clone, Copy, Debug)]
pub struct SamplerVars {
    pub log_scales: Var,
    pub mixture_logits: Var,
}

impl SamplerParams {
    /// Isotropic start: `σ = 1` and equal weights.
    pub fn new(components: usize, dim: usize) -> Result<Self> {
        Self::from_parts(Tensor::zeros(&[components, dim]), Tensor::zeros(&[1, components]))
    }

    pub fn from_parts(log_scales: Tensor, mixture_logits: Tensor) -> Result<Self> {
        if !log_scales.is_matrix() || log_scales.rows() == 0 || log_scales.cols() == 0 {
            return Err(Error::Config(format!("log_scales must be a non-empty matrix, got {:?}", log_scales.shape())));
        }
        if mixture_logits.shape() != [1, log_scales.rows()] {
            return Err(Error::Contract(format!(
                "mixture_logits {:?} for {} components",
                mixture_logits.shape(),
                log_scales.rows()
            )));
        }
        if !log_scales.is_finite() || !mixture_logits.is_finite() {
            return Err(Error::Contract("non-finite sampler parameters".into()));
        }
        Ok(Self { log_scales, mixture_logits })
    }

    pub fn num_components(&self) -> usize {
        self.log_scales.rows()
    }

    pub fn dim(&self) -> usize {
        self.log_scales.cols()
    }

    pub fn log_scales(&self) -> &Tensor {
        &self.log_scales
    }

    pub fn mixture_logits(&self) -> &Tensor {
        &self.mixture_logits
    }

    /// `σ = exp(clamp(ρ))`, `[K, d]`.
    pub fn scales(&self) -> Tensor {
        self.log_scales.map(|r| r.clamp(-LOG_SCALE_LIMIT, LOG_SCALE_LIMIT).exp())
    }

    /// Mixture weights `softmax(logits)`.
    pub fn weights(&self) -> Vec<f64> {
        let logits = self.mixture_logits.data();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        exps.iter().map(|e| e / total).collect()
    }

    /// Number of log-scales sitting outside the clamp range.
    pub fn clamp_active(&self) -> usize {
        self.log_scales.data().iter().filter(|r| r.abs() > LOG_SCALE_LIMIT).count()
    }

    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        vec![("sampler.log_scales".into(), &self.log_scales), ("sampler.mixture_logits".into(), &self.mixture_logits)]
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.log_scales, &mut self.mixture_logits]
    }

    pub fn register(&self, tape: &mut Tape, trainable: bool) -> SamplerVars {
        let mut put = |t: &Tensor| if trainable { tape.leaf(t.clone()) } else { tape.constant(t.clone()) };
        SamplerVars { log_scales: put(&self.log_scales), mixture_logits: put(&self.mixture_logits) }
    }
}

/// Frequencies drawn for one step together with their estimator weights.
#[derive(Clone, Debug, PartialEq)]
pub struct FrequencyBatch {
    pub frequencies: FrequencyMatrix,
    /// Mixture component of every row (all zero for fixed-band batches).
    pub component_of: Vec<usize>,
    /// Estimator weights, non-negative and summing to one.
    pub weights: Vec<f64>,
    /// Standard-normal draws behind every row.
    pub noise: Tensor,
    /// Rows per component.
    pub counts: Vec<usize>,
}

impl FrequencyBatch {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weights_tensor(&self) -> Tensor {
        Tensor::row(self.weights.clone())
    }
}

/// Splits `m` draws over components in proportion to `weights`.
///
/// Rounds by largest remainder (ties to the lower index), then moves draws
/// from the largest strata so that every component gets at least one.
pub fn allocate(weights: &[f64], m: usize) -> Result<Vec<usize>> {
    let k = weights.len();
    if k == 0 || m < k {
        return Err(Error::Config(format!("{m} frequencies cannot cover {k} mixture components")));
    }
    let exact: Vec<f64> = weights.iter().map(|w| w * m as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    for &i in order.iter().take(m.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    while let Some(empty) = counts.iter().position(|&c| c == 0) {
        let donor = (0..k).max_by_key(|&i| (counts[i], std::cmp::Reverse(i))).expect("k > 0");
        counts[donor] -= 1;
        counts[empty] += 1;
    }
    Ok(counts)
}

/// On-tape frequencies `[M, d]` and estimator weights `[1, M]` for a batch
/// drawn from the adaptive sampler.
pub fn batch_on_tape(tape: &mut Tape, vars: SamplerVars, batch: &FrequencyBatch) -> Result<(Var, Var)> {
    let k = tape.value(vars.log_scales).rows();
    if batch.counts.len() != k {
        return Err(Error::Contract(format!("batch has {} strata, sampler {k}", batch.counts.len())));
    }
    let m = batch.component_of.len();
    let clamped = tape.clamp(vars.log_scales, -LOG_SCALE_LIMIT, LOG_SCALE_LIMIT)?;
    let scales = tape.exp(clamped)?;
    let per_row = tape.gather_rows(scales, &batch.component_of)?;
    let noise = tape.constant(batch.noise.clone());
    let t = tape.mul(per_row, noise)?;

    let log_w = tape.log_softmax_rows(vars.mixture_logits)?;
    let w = tape.exp(log_w)?;
    let w = tape.reshape(w, &[k, 1])?;
    let w = tape.gather_rows(w, &batch.component_of)?;
    let w = tape.reshape(w, &[1, m])?;
    let inv_counts = batch.component_of.iter().map(|&c| 1.0 / batch.counts[c] as f64).collect();
    let inv_counts = tape.constant(Tensor::row(inv_counts));
    let weights = tape.mul(w, inv_counts)?;
    Ok((t, weights))
}

/// Draws `m` stratified frequencies from the mixture.
pub fn sample_frequencies(params: &SamplerParams, m: usize, rng: &mut SeededRng) -> Result<FrequencyBatch> {
    let counts = allocate(&params.weights(), m)?;
    let d = params.dim();
    let component_of: Vec<usize> = counts.iter().enumerate().flat_map(|(k, &c)| std::iter::repeat_n(k, c)).collect();
    let noise = (0..m * d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let noise = Tensor::matrix(m, d, noise)?;
    let mut batch = FrequencyBatch {
        frequencies: FrequencyMatrix::new(Tensor::zeros(&[m, d]))?,
        component_of,
        weights: Vec::new(),
        noise,
        counts,
    };
    // Evaluating the tape construction keeps the stored values identical to
    // what the training steps recompute.
    let mut tape = Tape::new();
    let vars = params.register(&mut tape, false);
    let (t, w) = batch_on_tape(&mut tape, vars, &batch)?;
    batch.frequencies = FrequencyMatrix::new(tape.value(t).clone())?;
    batch.weights = tape.value(w).data().to_vec();
    Ok(batch)
}

/// Parameter-free frequencies: standard normal for [`SamplerKind::Random`],
/// uniform direction with radius uniform in `band` for the banded kinds.
pub fn fixed_band_frequencies(
    kind: SamplerKind,
    band: (f64, f64),
    m: usize,
    d: usize,
    rng: &mut SeededRng,
) -> Result<FrequencyBatch> {
    let (lo, hi) = band;
    if !(lo >= 0.0 && lo < hi && hi.is_finite()) {
        return Err(Error::Config(format!("invalid frequency band [{lo}, {hi}]")));
    }
    if m == 0 || d == 0 {
        return Err(Error::Config(format!("cannot draw {m} frequencies of dimension {d}")));
    }
    let noise: Vec<f64> = (0..m * d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let t = match kind {
        SamplerKind::Adaptive => return Err(Error::Config("the adaptive sampler has no fixed band".into())),
        SamplerKind::Random => noise.clone(),
        SamplerKind::Low | SamplerKind::High => {
            let mut out = Vec::with_capacity(m * d);
            for row in noise.chunks(d) {
                let radius = rng.random_range(lo..=hi);
                let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
                out.extend(row.iter().map(|x| x / norm * radius));
            }
            out
        }
    };
    Ok(FrequencyBatch {
        frequencies: FrequencyMatrix::new(Tensor::matrix(m, d, t)?)?,
        component_of: vec![0; m],
        weights: vec![1.0 / m as f64; m],
        noise: Tensor::matrix(m, d, noise)?,
        counts: vec![m],
    })
}

/// Alignment loss of `batch` with gradients flowing into the sampler
/// parameters; the quantity the sampler ascends.
pub fn sampler_ascent_objective(
    tape: &mut Tape,
    vars: SamplerVars,
    batch: &FrequencyBatch,
    z_s: Var,
    z_t: Var,
    kappa: f64,
) -> Result<Var> {
    let (t, weights) = batch_on_tape(tape, vars, batch)?;
    alignment_loss(tape, z_s, z_t, t, weights, kappa)
}
