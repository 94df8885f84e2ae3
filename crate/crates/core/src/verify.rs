//! Self-check suites run by `adalign verify`.
//!
//! Each suite uses fixed seeds and reports every check with the measured
//! value and its tolerance.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{grad_check, AutodiffError, CsrMatrix, Tape, Tensor, Var};
use crate::encoder::{classify, encode, source_loss, EncoderConfig, EncoderParams};
use crate::error::{Error, Result};
use crate::rng::{substream, Stream};
use crate::sampler::{fixed_band_frequencies, sample_frequencies, sampler_ascent_objective, SamplerKind, SamplerParams};
use crate::spectral::{
    alignment_loss, alignment_loss_value, amplitude_phase_terms, empirical_cf, pointwise_loss, weighted_pointwise_loss,
    CfEvaluation, FrequencyMatrix,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    Gradcheck,
    Cf,
    Decomposition,
    Mc,
}

impl Suite {
    pub const ALL: [Suite; 4] = [Suite::Gradcheck, Suite::Cf, Suite::Decomposition, Suite::Mc];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Gradcheck => "gradcheck",
            Suite::Cf => "cf",
            Suite::Decomposition => "decomposition",
            Suite::Mc => "mc",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Suite {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Suite::ALL
            .into_iter()
            .find(|suite| suite.name() == s)
            .ok_or_else(|| format!("unknown suite `{s}` (gradcheck, cf, decomposition, mc)"))
    }
}

/// How a measured value is compared with its tolerance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Bound {
    Below(f64),
    Within(f64, f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub bound: Bound,
}

impl Check {
    pub fn below(name: impl Into<String>, value: f64, tolerance: f64) -> Self {
        Self { name: name.into(), value, bound: Bound::Below(tolerance) }
    }

    pub fn within(name: impl Into<String>, value: f64, lo: f64, hi: f64) -> Self {
        Self { name: name.into(), value, bound: Bound::Within(lo, hi) }
    }

    pub fn passed(&self) -> bool {
        match self.bound {
            Bound::Below(tol) => self.value < tol,
            Bound::Within(lo, hi) => self.value >= lo && self.value <= hi,
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verdict = if self.passed() { "pass" } else { "FAIL" };
        match self.bound {
            Bound::Below(tol) => write!(f, "{verdict} {}: {:.3e} (tolerance < {tol:e})", self.name, self.value),
            Bound::Within(lo, hi) => write!(f, "{verdict} {}: {:.4} (expected in [{lo}, {hi}])", self.name, self.value),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteReport {
    pub suite: Suite,
    pub checks: Vec<Check>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(Check::passed)
    }
}

pub fn run_suite(suite: Suite) -> Result<SuiteReport> {
    let checks = match suite {
        Suite::Gradcheck => gradcheck_suite()?,
        Suite::Cf => cf_suite()?,
        Suite::Decomposition => decomposition_suite()?,
        Suite::Mc => mc_suite()?,
    };
    Ok(SuiteReport { suite, checks })
}

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64, shift: f64) -> Tensor {
    let data = (0..rows * cols).map(|_| shift + scale * rng.sample::<f64, _>(StandardNormal)).collect();
    Tensor::matrix(rows, cols, data).expect("sized")
}

type ScalarFn<'a> = Box<dyn Fn(&mut Tape, Var) -> std::result::Result<Var, AutodiffError> + 'a>;

fn autodiff_err(e: Error) -> AutodiffError {
    match e {
        Error::Autodiff(a) => a,
        other => AutodiffError::Contract(other.to_string()),
    }
}

const GRAD_TOL: f64 = 1e-4;
const FD_STEP: f64 = 1e-5;

fn gradcheck_suite() -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = gaussian(&mut rng, 4, 3, 1.0, 0.0);
    let positive = x.map(|v| v.abs() + 0.1);
    let other = gaussian(&mut rng, 4, 3, 1.0, 0.0);
    let square = gaussian(&mut rng, 3, 3, 1.0, 0.0);
    let weights = gaussian(&mut rng, 4, 3, 1.0, 0.0);
    let adj = Arc::new(CsrMatrix::from_triplets(4, 4, &[(0, 0, 0.5), (0, 1, 0.3), (1, 0, 0.3), (2, 3, 0.7), (3, 3, 1.0)])?);
    let weighted = |tape: &mut Tape, y: Var| {
        let shape = tape.value(y).shape().to_vec();
        let n: usize = shape.iter().product();
        let w = Tensor::new(shape, weights.data().iter().copied().cycle().take(n).collect())?;
        let wv = tape.constant(w);
        let p = tape.mul(y, wv)?;
        tape.sum(p)
    };
    let squared_sum = |tape: &mut Tape, y: Var| {
        let p = tape.mul(y, y)?;
        tape.sum(p)
    };
    let cases: Vec<(&str, ScalarFn, &Tensor)> = vec![
        ("matmul", Box::new(|t, v| { let s = t.constant(square.clone()); let y = t.matmul(v, s)?; weighted(t, y) }), &x),
        ("matmul_transposed", Box::new(|t, v| { let o = t.constant(other.clone()); let y = t.matmul_transposed(v, o)?; weighted(t, y) }), &x),
        ("sparse_matmul", Box::new(|t, v| { let y = t.sparse_matmul(&adj, v)?; weighted(t, y) }), &x),
        ("add", Box::new(|t, v| { let o = t.constant(other.clone()); let y = t.add(v, o)?; squared_sum(t, y) }), &x),
        ("sub", Box::new(|t, v| { let o = t.constant(other.clone()); let y = t.sub(o, v)?; squared_sum(t, y) }), &x),
        ("mul", Box::new(|t, v| { let o = t.constant(other.clone()); let y = t.mul(v, o)?; weighted(t, y) }), &x),
        ("add_row", Box::new(|t, v| { let r = t.gather_rows(v, &[1])?; let y = t.add_row(v, r)?; weighted(t, y) }), &x),
        ("scale", Box::new(|t, v| { let y = t.scale(v, -2.5)?; weighted(t, y) }), &x),
        ("relu", Box::new(|t, v| { let y = t.relu(v)?; weighted(t, y) }), &x),
        ("exp", Box::new(|t, v| { let y = t.exp(v)?; weighted(t, y) }), &x),
        ("cos", Box::new(|t, v| { let y = t.cos(v)?; weighted(t, y) }), &x),
        ("sin", Box::new(|t, v| { let y = t.sin(v)?; weighted(t, y) }), &x),
        ("sqrt_eps", Box::new(|t, v| { let y = t.sqrt_eps(v)?; weighted(t, y) }), &positive),
        ("clamp", Box::new(|t, v| { let y = t.clamp(v, -0.5, 0.5)?; weighted(t, y) }), &x),
        ("sum", Box::new(|t, v| { let y = t.exp(v)?; t.sum(y) }), &x),
        ("mean", Box::new(|t, v| { let y = t.mul(v, v)?; t.mean(y) }), &x),
        ("col_mean", Box::new(|t, v| { let y = t.col_mean(v)?; squared_sum(t, y) }), &x),
        ("log_softmax_rows", Box::new(|t, v| { let y = t.log_softmax_rows(v)?; weighted(t, y) }), &x),
        ("gather_rows", Box::new(|t, v| { let y = t.gather_rows(v, &[3, 0, 3, 2])?; weighted(t, y) }), &x),
        ("concat_rows", Box::new(|t, v| { let o = t.constant(other.clone()); let y = t.concat_rows(&[o, v])?; squared_sum(t, y) }), &x),
        ("pick", Box::new(|t, v| { let y = t.pick(v, &[0, 2, 1, 2])?; let y = t.exp(y)?; t.sum(y) }), &x),
        ("reshape", Box::new(|t, v| { let y = t.reshape(v, &[3, 4])?; let y = t.col_mean(y)?; let y = t.exp(y)?; t.sum(y) }), &x),
        ("cis_col_mean", Box::new(|t, v| { let y = t.cis_col_mean(v)?; squared_sum(t, y) }), &x),
        ("characteristic_function", Box::new(|t, v| { let o = t.constant(other.clone()); let y = t.characteristic_function(v, o)?; squared_sum(t, y) }), &x),
    ];
    let mut checks = Vec::new();
    for (name, f, input) in &cases {
        checks.push(Check::below(format!("op {name}"), grad_check(|t, v| f(t, v), input, FD_STEP)?, GRAD_TOL));
    }

    // alignment loss with respect to each of its inputs
    let zs = gaussian(&mut rng, 12, 3, 1.0, 0.0);
    let zt = gaussian(&mut rng, 10, 3, 1.2, 0.4);
    let t = gaussian(&mut rng, 6, 3, 1.0, 0.0);
    let w = Tensor::row(vec![1.0 / 6.0; 6]);
    for (which, name, input) in [(0, "alignment wrt Z_S", &zs), (1, "alignment wrt Z_T", &zt), (2, "alignment wrt T", &t)] {
        let f = |tape: &mut Tape, v: Var| {
            let mut vars = [tape.constant(zs.clone()), tape.constant(zt.clone()), tape.constant(t.clone())];
            vars[which] = v;
            let wv = tape.constant(w.clone());
            alignment_loss(tape, vars[0], vars[1], vars[2], wv, 0.7).map_err(autodiff_err)
        };
        checks.push(Check::below(name, grad_check(f, input, FD_STEP)?, GRAD_TOL));
    }

    // source loss with respect to every encoder tensor
    let adj = Arc::new(CsrMatrix::from_triplets(
        5,
        5,
        &[(0, 0, 0.5), (0, 1, 0.4), (1, 0, 0.4), (1, 1, 0.5), (2, 2, 1.0), (3, 3, 0.5), (3, 4, 0.5), (4, 3, 0.5), (4, 4, 0.5)],
    )?);
    let features = gaussian(&mut rng, 5, 4, 1.0, 0.0);
    let labels = [0, 1, 2, 1, 0];
    let config = EncoderConfig { in_dim: 4, hidden_dim: 5, emb_dim: 3, num_layers: 2, num_classes: 3 };
    let params = EncoderParams::init(config, &mut substream(5, Stream::Init))?;
    let count = params.tensors().len();
    for idx in 0..count {
        let f = |tape: &mut Tape, v: Var| {
            let mut vars = params.register(tape, false);
            vars.replace(idx, v);
            let x = tape.constant(features.clone());
            let z = encode(tape, &adj, x, &vars).map_err(autodiff_err)?;
            let logits = classify(tape, z, &vars).map_err(autodiff_err)?;
            source_loss(tape, logits, &labels).map_err(autodiff_err)
        };
        let name = params.named_tensors()[idx].0.clone();
        checks.push(Check::below(format!("source loss wrt {name}"), grad_check(f, params.tensors()[idx], FD_STEP)?, GRAD_TOL));
    }

    // sampler objective with the noise held fixed
    let sampler = SamplerParams::from_parts(gaussian(&mut rng, 2, 3, 0.3, 0.0), Tensor::row(vec![0.3, -0.2]))?;
    let batch = sample_frequencies(&sampler, 8, &mut substream(6, Stream::Frequencies))?;
    let zs = gaussian(&mut rng, 10, 3, 1.0, 0.0);
    let zt = gaussian(&mut rng, 10, 3, 1.5, 0.5);
    for which in 0..2 {
        let f = |tape: &mut Tape, v: Var| {
            let mut vars = sampler.register(tape, false);
            if which == 0 {
                vars.log_scales = v;
            } else {
                vars.mixture_logits = v;
            }
            let (a, b) = (tape.constant(zs.clone()), tape.constant(zt.clone()));
            sampler_ascent_objective(tape, vars, &batch, a, b, 0.7).map_err(autodiff_err)
        };
        let (name, input) = if which == 0 {
            ("sampler objective wrt log_scales", sampler.log_scales().clone())
        } else {
            ("sampler objective wrt mixture_logits", sampler.mixture_logits().clone())
        };
        checks.push(Check::below(name, grad_check(f, &input, FD_STEP)?, GRAD_TOL));
    }
    Ok(checks)
}

fn cf_suite() -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut worst = 0.0f64;
    let mut worst_amp = 0.0f64;
    for _ in 0..100 {
        let n = rng.random_range(1..40);
        let m = rng.random_range(1..20);
        let d = rng.random_range(1..6);
        let z = gaussian(&mut rng, n, d, 2.0, 0.3);
        let t = gaussian(&mut rng, m, d, 1.5, 0.0);
        let cf = empirical_cf(&z, &FrequencyMatrix::new(t.clone())?)?;
        for j in 0..m {
            let (mut re, mut im) = (0.0, 0.0);
            for i in 0..n {
                let dot: f64 = z.row_slice(i).iter().zip(t.row_slice(j)).map(|(a, b)| a * b).sum();
                re += dot.cos();
                im += dot.sin();
            }
            worst = worst.max((cf.real[j] - re / n as f64).abs()).max((cf.imag[j] - im / n as f64).abs());
        }
        worst_amp = cf.amplitude().into_iter().fold(worst_amp, f64::max);
    }
    let z = gaussian(&mut rng, 25, 4, 3.0, 1.0);
    let origin = empirical_cf(&z, &FrequencyMatrix::new(Tensor::zeros(&[1, 4]))?)?;
    let origin_err = (origin.real[0] - 1.0).abs().max(origin.imag[0].abs());
    Ok(vec![
        Check::below("empirical CF vs direct summation (100 instances)", worst, 1e-12),
        Check::below("Psi(0) = (1, 0)", origin_err, 1e-15),
        Check::below("max amplitude - 1", worst_amp - 1.0, 1e-9),
    ])
}

fn decomposition_suite() -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut draw = |count: usize| {
        let (mut re, mut im) = (Vec::with_capacity(count), Vec::with_capacity(count));
        for _ in 0..count {
            let amp: f64 = rng.random_range(0.0..1.0);
            let phase: f64 = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
            re.push(amp * phase.cos());
            im.push(amp * phase.sin());
        }
        CfEvaluation::new(re, im)
    };
    let (s, t) = (draw(1000)?, draw(1000)?);
    let full = pointwise_loss(&s, &t)?;
    let (amp, phase) = amplitude_phase_terms(&s, &t)?;
    let half = weighted_pointwise_loss(&s, &t, 0.5)?;
    let identity = (0..1000).map(|m| (amp[m] + phase[m] - full[m]).abs()).fold(0.0, f64::max);
    let halved = (0..1000).map(|m| (half[m] - 0.5 * full[m]).abs()).fold(0.0, f64::max);
    Ok(vec![
        Check::below("amplitude + phase = |Psi_S - Psi_T|^2 (1000 pairs)", identity, 1e-10),
        Check::below("kappa = 0.5 gives half the pointwise loss", halved, 1e-10),
    ])
}

/// Alignment-loss estimates over `draws` fresh standard-normal batches of
/// size `m`.
pub fn mc_estimates(z_s: &Tensor, z_t: &Tensor, m: usize, draws: usize, seed: u64, kappa: f64) -> Result<Vec<f64>> {
    let mut rng = substream(seed, Stream::Frequencies);
    let mut values = Vec::with_capacity(draws);
    for _ in 0..draws {
        let batch = fixed_band_frequencies(SamplerKind::Random, (0.0, 1.0), m, z_s.cols(), &mut rng)?;
        values.push(alignment_loss_value(z_s, z_t, &batch.frequencies, &batch.weights, kappa)?);
    }
    Ok(values)
}

/// Sample standard deviation.
pub fn sample_std(values: &[f64]) -> f64 {
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (values.len() as f64 - 1.0)).sqrt()
}

fn mc_suite() -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let z_s = gaussian(&mut rng, 200, 4, 1.0, 0.0);
    let z_t = gaussian(&mut rng, 200, 4, 1.3, 0.5);
    let small = mc_estimates(&z_s, &z_t, 512, 50, 1, 0.7)?;
    let large = mc_estimates(&z_s, &z_t, 2048, 50, 2, 0.7)?;
    let reference = mc_estimates(&z_s, &z_t, 65536, 1, 3, 0.7)?[0];
    let sd_large = sample_std(&large);
    Ok(vec![
        Check::within("std ratio M=2048 / M=512 over 50 redraws", sd_large / sample_std(&small), 0.35, 0.65),
        Check::below("|estimate(M=2048) - reference(M=65536)| / SE", (large[0] - reference).abs() / sd_large, 3.0),
    ])
}
