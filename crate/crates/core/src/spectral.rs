//! Empirical characteristic functions and the spectral discrepancy built
//! on them.
//!
//! For embeddings `z_1..z_N` and frequencies `t_1..t_M` the empirical
//! characteristic function is `Ψ(t_m) = mean_n exp(i t_mᵀ z_n)`. The
//! pointwise discrepancy `|Ψ_S − Ψ_T|²` splits exactly into an amplitude
//! term `(|Ψ_S| − |Ψ_T|)²` and a phase term `2|Ψ_S||Ψ_T|(1 − cos Δθ)`; the
//! alignment loss weighs the two by `κ` and `1 − κ` and averages the square
//! root over the frequencies.
//!
//! The phase term is always evaluated as `2(|Ψ_S||Ψ_T| − Re Ψ_S Re Ψ_T −
//! Im Ψ_S Im Ψ_T)`, which is smooth where `atan2` would wrap.

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// `[M, d]` matrix whose rows are frequency vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct FrequencyMatrix(Tensor);

impl FrequencyMatrix {
    pub fn new(t: Tensor) -> Result<Self> {
        if !t.is_matrix() || t.rows() == 0 {
            return Err(Error::Contract(format!("frequency matrix needs M >= 1 rows, got {:?}", t.shape())));
        }
        if !t.is_finite() {
            return Err(Error::Contract("frequency matrix has non-finite entries".into()));
        }
        Ok(Self(t))
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.0.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.0.cols()
    }

    /// Euclidean norm of every frequency.
    pub fn radii(&self) -> Vec<f64> {
        (0..self.len()).map(|m| self.0.row_slice(m).iter().map(|v| v * v).sum::<f64>().sqrt()).collect()
    }
}

/// Characteristic-function values at `M` frequencies.
#[derive(Clone, Debug, PartialEq)]
pub struct CfEvaluation {
    pub real: Vec<f64>,
    pub imag: Vec<f64>,
}

impl CfEvaluation {
    pub fn new(real: Vec<f64>, imag: Vec<f64>) -> Result<Self> {
        if real.len() != imag.len() {
            return Err(Error::Contract(format!("{} real vs {} imaginary parts", real.len(), imag.len())));
        }
        Ok(Self { real, imag })
    }

    pub fn len(&self) -> usize {
        self.real.len()
    }

    pub fn is_empty(&self) -> bool {
        self.real.is_empty()
    }

    pub fn amplitude(&self) -> Vec<f64> {
        self.real.iter().zip(&self.imag).map(|(r, i)| r.hypot(*i)).collect()
    }

    /// Phase in `(-π, π]`.
    pub fn phase(&self) -> Vec<f64> {
        self.real
            .iter()
            .zip(&self.imag)
            .map(|(r, i)| {
                let p = i.atan2(*r);
                if p <= -std::f64::consts::PI {
                    std::f64::consts::PI
                } else {
                    p
                }
            })
            .collect()
    }
}

/// Real and imaginary parts of a characteristic function on a tape, each a
/// `[1, M]` row.
#[derive(Clone, Copy, Debug)]
pub struct CfVars {
    pub real: Var,
    pub imag: Var,
}

fn check_kappa(kappa: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&kappa) {
        return Err(Error::Config(format!("kappa {kappa} outside [0, 1]")));
    }
    Ok(())
}

fn check_same_len(a: &CfEvaluation, b: &CfEvaluation) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Contract(format!("{} vs {} frequencies", a.len(), b.len())));
    }
    Ok(())
}

/// Differentiable empirical CF of `z` (`[N, d]`) at the rows of `t` (`[M, d]`).
pub fn empirical_cf_on_tape(tape: &mut Tape, z: Var, t: Var) -> Result<CfVars> {
    let (zd, td) = (tape.value(z).cols(), tape.value(t).cols());
    if zd != td {
        return Err(Error::Contract(format!("embeddings have {zd} columns, frequencies {td}")));
    }
    let cis = tape.characteristic_function(z, t)?;
    let real = tape.gather_rows(cis, &[0])?;
    let imag = tape.gather_rows(cis, &[1])?;
    Ok(CfVars { real, imag })
}

pub fn empirical_cf(z: &Tensor, t: &FrequencyMatrix) -> Result<CfEvaluation> {
    let mut tape = Tape::new();
    let zv = tape.constant(z.clone());
    let tv = tape.constant(t.tensor().clone());
    let cf = empirical_cf_on_tape(&mut tape, zv, tv)?;
    CfEvaluation::new(tape.value(cf.real).data().to_vec(), tape.value(cf.imag).data().to_vec())
}

/// `|Ψ_S(t_m) − Ψ_T(t_m)|²` per frequency.
pub fn pointwise_loss(cf_s: &CfEvaluation, cf_t: &CfEvaluation) -> Result<Vec<f64>> {
    check_same_len(cf_s, cf_t)?;
    Ok((0..cf_s.len())
        .map(|m| {
            let dr = cf_s.real[m] - cf_t.real[m];
            let di = cf_s.imag[m] - cf_t.imag[m];
            dr * dr + di * di
        })
        .collect())
}

/// Amplitude term `(|Ψ_S| − |Ψ_T|)²` and phase term `2|Ψ_S||Ψ_T|(1 − cos Δθ)`
/// per frequency. Their sum equals [`pointwise_loss`].
pub fn amplitude_phase_terms(cf_s: &CfEvaluation, cf_t: &CfEvaluation) -> Result<(Vec<f64>, Vec<f64>)> {
    check_same_len(cf_s, cf_t)?;
    let (amp_s, amp_t) = (cf_s.amplitude(), cf_t.amplitude());
    let mut amplitude = Vec::with_capacity(cf_s.len());
    let mut phase = Vec::with_capacity(cf_s.len());
    for m in 0..cf_s.len() {
        let diff = amp_s[m] - amp_t[m];
        amplitude.push(diff * diff);
        let dot = cf_s.real[m] * cf_t.real[m] + cf_s.imag[m] * cf_t.imag[m];
        phase.push(2.0 * (amp_s[m] * amp_t[m] - dot));
    }
    Ok((amplitude, phase))
}

/// `κ·amplitude + (1 − κ)·phase` per frequency.
pub fn weighted_pointwise_loss(cf_s: &CfEvaluation, cf_t: &CfEvaluation, kappa: f64) -> Result<Vec<f64>> {
    check_kappa(kappa)?;
    let (amp, phase) = amplitude_phase_terms(cf_s, cf_t)?;
    Ok(amp.iter().zip(&phase).map(|(a, p)| kappa * a + (1.0 - kappa) * p).collect())
}

/// On-tape `ℓ_κ` as a `[1, M]` row.
///
/// Amplitudes are taken as `sqrt(re² + im² + 1e-12)` so their gradient stays
/// finite at the origin; this keeps the phase term strictly positive.
pub fn weighted_loss_on_tape(tape: &mut Tape, cf_s: CfVars, cf_t: CfVars, kappa: f64) -> Result<Var> {
    check_kappa(kappa)?;
    let amplitude = |tape: &mut Tape, cf: CfVars| -> Result<Var> {
        let rr = tape.mul(cf.real, cf.real)?;
        let ii = tape.mul(cf.imag, cf.imag)?;
        let sq = tape.add(rr, ii)?;
        Ok(tape.sqrt_eps(sq)?)
    };
    let amp_s = amplitude(tape, cf_s)?;
    let amp_t = amplitude(tape, cf_t)?;

    let diff = tape.sub(amp_s, amp_t)?;
    let amp_term = tape.mul(diff, diff)?;

    let amp_prod = tape.mul(amp_s, amp_t)?;
    let rr = tape.mul(cf_s.real, cf_t.real)?;
    let ii = tape.mul(cf_s.imag, cf_t.imag)?;
    let dot = tape.add(rr, ii)?;
    let gap = tape.sub(amp_prod, dot)?;
    let phase_term = tape.scale(gap, 2.0)?;

    let a = tape.scale(amp_term, kappa)?;
    let p = tape.scale(phase_term, 1.0 - kappa)?;
    Ok(tape.add(a, p)?)
}

/// `Σ_m w_m · sqrt_eps(ℓ_m)` for a `[1, M]` loss row and `[1, M]` weights.
pub fn aggregate(tape: &mut Tape, ell: Var, weights: Var) -> Result<Var> {
    let w = tape.value(weights);
    if w.len() != tape.value(ell).len() {
        return Err(Error::Contract(format!("{} weights for {} frequencies", w.len(), tape.value(ell).len())));
    }
    if let Some(bad) = w.data().iter().find(|&&v| !(v >= 0.0)) {
        return Err(Error::Contract(format!("negative frequency weight {bad}")));
    }
    let total = w.sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Contract(format!("frequency weights sum to {total}, not 1")));
    }
    let root = tape.sqrt_eps(ell)?;
    let weighted = tape.mul(root, weights)?;
    Ok(tape.sum(weighted)?)
}

/// Alignment loss between two embedding sets at frequencies `t` (`[M, d]`)
/// with estimator weights (`[1, M]`, non-negative, summing to one).
pub fn alignment_loss(tape: &mut Tape, z_s: Var, z_t: Var, t: Var, weights: Var, kappa: f64) -> Result<Var> {
    let cf_s = empirical_cf_on_tape(tape, z_s, t)?;
    let cf_t = empirical_cf_on_tape(tape, z_t, t)?;
    let ell = weighted_loss_on_tape(tape, cf_s, cf_t, kappa)?;
    aggregate(tape, ell, weights)
}

/// Value of [`alignment_loss`] on plain tensors.
pub fn alignment_loss_value(
    z_s: &Tensor,
    z_t: &Tensor,
    t: &FrequencyMatrix,
    weights: &[f64],
    kappa: f64,
) -> Result<f64> {
    let mut tape = Tape::new();
    let (zs, zt) = (tape.constant(z_s.clone()), tape.constant(z_t.clone()));
    let tv = tape.constant(t.tensor().clone());
    let w = tape.constant(Tensor::row(weights.to_vec()));
    let loss = alignment_loss(&mut tape, zs, zt, tv, w, kappa)?;
    Ok(tape.value(loss).item())
}

/// Unweighted discrepancy `Σ_m w_m |Ψ_S(t_m) − Ψ_T(t_m)|`, i.e. the
/// alignment integrand with amplitude and phase weighed equally and scaled
/// back by `√2`.
pub fn spectral_discrepancy(z_s: &Tensor, z_t: &Tensor, t: &FrequencyMatrix, weights: &[f64]) -> Result<f64> {
    let cf_s = empirical_cf(z_s, t)?;
    let cf_t = empirical_cf(z_t, t)?;
    let ell = pointwise_loss(&cf_s, &cf_t)?;
    if weights.len() != ell.len() {
        return Err(Error::Contract(format!("{} weights for {} frequencies", weights.len(), ell.len())));
    }
    Ok(ell.iter().zip(weights).map(|(l, w)| w * l.sqrt()).sum())
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Unbiased MMD² with kernel `exp(-‖x − y‖² / (2h²))`.
///
/// Equal sample sizes use the paired U-statistic over `i ≠ j`, which is
/// exactly zero for identical sets; otherwise the two-sample form with the
/// full cross term is used. The estimate may be slightly negative.
pub fn mmd_rbf(z_s: &Tensor, z_t: &Tensor, bandwidth: f64) -> Result<f64> {
    if !(bandwidth > 0.0) {
        return Err(Error::Contract(format!("bandwidth {bandwidth} must be positive")));
    }
    let (m, n) = (z_s.rows(), z_t.rows());
    if m < 2 || n < 2 {
        return Err(Error::Contract(format!("MMD needs two samples per side, got {m} and {n}")));
    }
    if z_s.cols() != z_t.cols() {
        return Err(Error::Contract(format!("{} vs {} columns", z_s.cols(), z_t.cols())));
    }
    let gamma = 1.0 / (2.0 * bandwidth * bandwidth);
    let k = |a: &[f64], b: &[f64]| (-gamma * squared_distance(a, b)).exp();
    let (xs, ys) = (|i: usize| z_s.row_slice(i), |j: usize| z_t.row_slice(j));

    if m == n {
        let mut total = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    total += k(xs(i), xs(j)) + k(ys(i), ys(j)) - k(xs(i), ys(j)) - k(xs(j), ys(i));
                }
            }
        }
        return Ok(total / (n * (n - 1)) as f64);
    }

    let within = |z: &Tensor| {
        let rows = z.rows();
        let mut s = 0.0;
        for i in 0..rows {
            for j in 0..rows {
                if i != j {
                    s += k(z.row_slice(i), z.row_slice(j));
                }
            }
        }
        s / (rows * (rows - 1)) as f64
    };
    let mut cross = 0.0;
    for i in 0..m {
        for j in 0..n {
            cross += k(xs(i), ys(j));
        }
    }
    Ok(within(z_s) + within(z_t) - 2.0 * cross / (m * n) as f64)
}

/// Median pairwise distance of the pooled samples, from at most
/// `max_points` evenly strided rows per side. Falls back to 1 when the
/// median is zero.
pub fn median_bandwidth(z_s: &Tensor, z_t: &Tensor, max_points: usize) -> f64 {
    let pick = |z: &Tensor| -> Vec<Vec<f64>> {
        let stride = z.rows().div_ceil(max_points.max(1)).max(1);
        (0..z.rows()).step_by(stride).map(|i| z.row_slice(i).to_vec()).collect()
    };
    let mut pooled = pick(z_s);
    pooled.extend(pick(z_t));
    let mut dists = Vec::with_capacity(pooled.len() * pooled.len() / 2);
    for i in 0..pooled.len() {
        for j in i + 1..pooled.len() {
            dists.push(squared_distance(&pooled[i], &pooled[j]).sqrt());
        }
    }
    if dists.is_empty() {
        return 1.0;
    }
    dists.sort_by(|a, b| a.total_cmp(b));
    let median = dists[dists.len() / 2];
    if median > 0.0 {
        median
    } else {
        1.0
    }
}
