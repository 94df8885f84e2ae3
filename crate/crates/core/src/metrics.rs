//! Classification scores and the discrepancy report.

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::rng::{substream, Stream};
use crate::sampler::{fixed_band_frequencies, sample_frequencies, SamplerKind, SamplerParams};
use crate::spectral::{alignment_loss_value, median_bandwidth, mmd_rbf};

/// `C×C` counts, rows are true classes and columns predictions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionCounts {
    num_classes: usize,
    counts: Vec<u64>,
}

impl ConfusionCounts {
    pub fn new(truth: &[usize], pred: &[usize], num_classes: usize) -> Result<Self> {
        if truth.len() != pred.len() {
            return Err(Error::Contract(format!("{} true labels but {} predictions", truth.len(), pred.len())));
        }
        let mut counts = vec![0u64; num_classes * num_classes];
        for (&t, &p) in truth.iter().zip(pred) {
            if let Some(&label) = [t, p].iter().find(|&&l| l >= num_classes) {
                return Err(Error::LabelRange { label, num_classes });
            }
            counts[t * num_classes + p] += 1;
        }
        Ok(Self { num_classes, counts })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.num_classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..self.num_classes).map(|c| self.get(c, c)).sum()
    }

    /// Per-class F1, `None` for classes that are neither present nor predicted.
    pub fn per_class_f1(&self) -> Vec<Option<f64>> {
        (0..self.num_classes)
            .map(|c| {
                let tp = self.get(c, c);
                let actual: u64 = (0..self.num_classes).map(|p| self.get(c, p)).sum();
                let predicted: u64 = (0..self.num_classes).map(|t| self.get(t, c)).sum();
                if actual == 0 && predicted == 0 {
                    None
                } else {
                    // 2tp / (2tp + fp + fn)
                    let denom = actual + predicted;
                    Some(if denom == 0 { 0.0 } else { 2.0 * tp as f64 / denom as f64 })
                }
            })
            .collect()
    }
}

fn confusion(truth: &[usize], pred: &[usize]) -> Result<ConfusionCounts> {
    if truth.is_empty() && pred.is_empty() {
        return Err(Error::Contract("no labels to score".into()));
    }
    let c = truth.iter().chain(pred).max().map_or(0, |m| m + 1);
    ConfusionCounts::new(truth, pred, c)
}

/// Global F1, which for single-label multiclass data is the accuracy.
pub fn micro_f1(truth: &[usize], pred: &[usize]) -> Result<f64> {
    let counts = confusion(truth, pred)?;
    Ok(counts.correct() as f64 / counts.total() as f64)
}

/// Unweighted mean of per-class F1 over classes that occur in either vector.
pub fn macro_f1(truth: &[usize], pred: &[usize]) -> Result<f64> {
    let scores: Vec<f64> = confusion(truth, pred)?.per_class_f1().into_iter().flatten().collect();
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiscrepancyConfig {
    pub frequencies: usize,
    pub kappa: f64,
    pub seed: u64,
    /// Radius bands for the banded discrepancies.
    pub bands: Vec<(f64, f64)>,
    /// Subsample size for the median-heuristic bandwidth.
    pub bandwidth_points: usize,
}

impl Default for DiscrepancyConfig {
    fn default() -> Self {
        Self {
            frequencies: 8192,
            kappa: 0.7,
            seed: 0,
            bands: vec![(0.0, 1.0), (1.0, 10.0), (10.0, 20.0)],
            bandwidth_points: 1000,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiscrepancyReport {
    pub nsd: f64,
    pub mmd: f64,
    pub mmd_bandwidth: f64,
    /// `(band, nsd)` for every configured band.
    pub band_nsd: Vec<((f64, f64), f64)>,
}

impl DiscrepancyReport {
    fn band_key(band: (f64, f64)) -> String {
        format!("nsd_band_{}_{}", band.0, band.1)
    }

    /// `key:value` pairs on one line.
    pub fn to_line(&self) -> String {
        let mut parts = vec![format!("nsd:{}", self.nsd), format!("mmd:{}", self.mmd), format!("mmd_bandwidth:{}", self.mmd_bandwidth)];
        parts.extend(self.band_nsd.iter().map(|&(b, v)| format!("{}:{v}", Self::band_key(b))));
        parts.join(" ")
    }

    pub fn csv_header(&self) -> String {
        let mut cols = vec!["nsd".to_string(), "mmd".into(), "mmd_bandwidth".into()];
        cols.extend(self.band_nsd.iter().map(|&(b, _)| Self::band_key(b)));
        cols.join(",")
    }

    pub fn csv_row(&self) -> String {
        let mut cols = vec![self.nsd.to_string(), self.mmd.to_string(), self.mmd_bandwidth.to_string()];
        cols.extend(self.band_nsd.iter().map(|(_, v)| v.to_string()));
        cols.join(",")
    }
}

/// Compares two embedding sets with the spectral discrepancy (adaptive
/// sampler `sampler`, plus one fixed band per configured radius band) and
/// with RBF MMD at the median-heuristic bandwidth.
pub fn discrepancy_report(z_s: &Tensor, z_t: &Tensor, sampler: &SamplerParams, config: &DiscrepancyConfig) -> Result<DiscrepancyReport> {
    if z_s.cols() != sampler.dim() {
        return Err(Error::Contract(format!("embeddings of width {} for a sampler of dimension {}", z_s.cols(), sampler.dim())));
    }
    let mut rng = substream(config.seed, Stream::Report);
    let batch = sample_frequencies(sampler, config.frequencies, &mut rng)?;
    let nsd = alignment_loss_value(z_s, z_t, &batch.frequencies, &batch.weights, config.kappa)?;
    let mut band_nsd = Vec::with_capacity(config.bands.len());
    for &band in &config.bands {
        let batch = fixed_band_frequencies(SamplerKind::Low, band, config.frequencies, sampler.dim(), &mut rng)?;
        band_nsd.push((band, alignment_loss_value(z_s, z_t, &batch.frequencies, &batch.weights, config.kappa)?));
    }
    let mmd_bandwidth = median_bandwidth(z_s, z_t, config.bandwidth_points);
    let mmd = mmd_rbf(z_s, z_t, mmd_bandwidth)?;
    Ok(DiscrepancyReport { nsd, mmd, mmd_bandwidth, band_nsd })
}
