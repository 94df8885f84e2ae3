//! Alternating minimax training.
//!
//! Every epoch runs one model step (descent on the encoder for
//! `L_source + λ·L_align` with the sampler frozen) followed by
//! `sampler_steps` sampler steps (ascent on `L_align` with the encoder
//! frozen). Both steps draw a fresh frequency batch and use the full graphs.
//! Target labels are never part of [`TrainingData`]; they only reach the
//! evaluation records.

mod adam;
mod config;
mod log;

use std::sync::Arc;
use std::time::Instant;

pub use adam::{adam_update, clip_global_norm, AdamState, BETA1, BETA2, EPSILON};
pub use config::{TrainConfig, CONFIG_KEYS};
pub use log::{csv_header, format_log, parse_log, to_csv, MetricsRecord, LOG_FIELDS};

use crate::autodiff::{CsrMatrix, Tape, Tensor, Var};
use crate::encoder::{classify, encode, predict, propagate, source_loss, EncoderParams, EncoderVars};
use crate::error::{Error, Result};
use crate::graph::{normalize_adjacency, DomainGraph};
use crate::metrics::{macro_f1, micro_f1};
use crate::rng::{substream, SeededRng, Stream};
use crate::sampler::{
    fixed_band_frequencies, sample_frequencies, sampler_ascent_objective, FrequencyBatch, SamplerKind, SamplerParams,
};
use crate::spectral::alignment_loss;

/// Normalized adjacency and features of one domain.
#[derive(Clone, Debug)]
pub struct DomainTensors {
    pub adjacency: Arc<CsrMatrix>,
    pub features: Tensor,
}

impl DomainTensors {
    pub fn new(graph: &DomainGraph) -> Self {
        Self { adjacency: Arc::new(normalize_adjacency(graph).to_csr()), features: graph.features().clone() }
    }

    pub fn num_nodes(&self) -> usize {
        self.features.rows()
    }
}

/// What the training steps may see: both graphs and the source labels.
#[derive(Clone, Debug)]
pub struct TrainingData {
    pub source: DomainTensors,
    pub source_labels: Vec<usize>,
    pub target: DomainTensors,
    pub num_classes: usize,
}

impl TrainingData {
    pub fn new(source: &DomainGraph, target: &DomainGraph) -> Result<Self> {
        let labels = source.labels().ok_or_else(|| Error::Config("the source graph has no labels".into()))?;
        if source.feature_dim() != target.feature_dim() {
            return Err(Error::Contract(format!(
                "source features have {} columns, target features {}",
                source.feature_dim(),
                target.feature_dim()
            )));
        }
        Ok(Self {
            source: DomainTensors::new(source),
            source_labels: labels.to_vec(),
            target: DomainTensors::new(target),
            num_classes: source.num_classes().max(target.num_classes()),
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.source.features.cols()
    }
}

/// Parameters, optimizer moments and the frequency stream of a run.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub encoder: EncoderParams,
    pub sampler: SamplerParams,
    pub adam_model: AdamState,
    pub adam_sampler: AdamState,
    pub rng: SeededRng,
    pub epoch: usize,
}

impl TrainState {
    pub fn init(config: &TrainConfig, data: &TrainingData) -> Result<Self> {
        config.validate()?;
        let encoder_config = config.encoder_config(data.feature_dim(), data.num_classes);
        let encoder = EncoderParams::init(encoder_config, &mut substream(config.seed, Stream::Init))?;
        let sampler = SamplerParams::new(config.components, config.emb_dim)?;
        Ok(Self {
            adam_model: AdamState::new(encoder.tensors()),
            adam_sampler: AdamState::new([sampler.log_scales(), sampler.mixture_logits()]),
            encoder,
            sampler,
            rng: substream(config.seed, Stream::Frequencies),
            epoch: 0,
        })
    }
}

/// Loss values of one model step, taken before the update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLosses {
    pub l_source: f64,
    pub l_align: f64,
}

/// Draws the frequencies of one step for the configured sampler kind.
pub fn draw_frequencies(sampler: &SamplerParams, config: &TrainConfig, rng: &mut SeededRng) -> Result<FrequencyBatch> {
    match config.sampler {
        SamplerKind::Adaptive => sample_frequencies(sampler, config.frequencies, rng),
        kind => fixed_band_frequencies(kind, kind.band().unwrap_or((0.0, 1.0)), config.frequencies, config.emb_dim, rng),
    }
}

/// Source embeddings and the (optionally further propagated) target
/// embeddings used for alignment and target prediction.
fn forward(tape: &mut Tape, vars: &EncoderVars, data: &TrainingData, config: &TrainConfig) -> Result<(Var, Var)> {
    let xs = tape.constant(data.source.features.clone());
    let xt = tape.constant(data.target.features.clone());
    let zs = encode(tape, &data.source.adjacency, xs, vars)?;
    let zt = encode(tape, &data.target.adjacency, xt, vars)?;
    let zt = propagate(tape, &data.target.adjacency, zt, config.target_extra_propagation)?;
    Ok((zs, zt))
}

fn finite(value: f64, what: &'static str, epoch: usize) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFinite { what, epoch })
    }
}

/// Both losses at the current parameters on a given batch, without updating.
pub fn evaluate_losses(encoder: &EncoderParams, data: &TrainingData, config: &TrainConfig, batch: &FrequencyBatch) -> Result<StepLosses> {
    let mut tape = Tape::new();
    let vars = encoder.register(&mut tape, false);
    let (zs, zt) = forward(&mut tape, &vars, data, config)?;
    let logits = classify(&mut tape, zs, &vars)?;
    let ls = source_loss(&mut tape, logits, &data.source_labels)?;
    let t = tape.constant(batch.frequencies.tensor().clone());
    let w = tape.constant(batch.weights_tensor());
    let la = alignment_loss(&mut tape, zs, zt, t, w, config.kappa)?;
    Ok(StepLosses { l_source: tape.value(ls).item(), l_align: tape.value(la).item() })
}

/// Model step: one clipped Adam descent step on the encoder and classifier.
pub fn train_step_model(state: &mut TrainState, data: &TrainingData, config: &TrainConfig) -> Result<StepLosses> {
    let epoch = state.epoch;
    let batch = draw_frequencies(&state.sampler, config, &mut state.rng)?;
    let mut tape = Tape::new();
    let vars = state.encoder.register(&mut tape, true);
    let (zs, zt) = forward(&mut tape, &vars, data, config)?;
    let t = tape.constant(batch.frequencies.tensor().clone());
    let w = tape.constant(batch.weights_tensor());
    let la = alignment_loss(&mut tape, zs, zt, t, w, config.kappa)?;
    let logits = classify(&mut tape, zs, &vars)?;
    let ls = source_loss(&mut tape, logits, &data.source_labels)?;
    let losses = StepLosses {
        l_source: finite(tape.value(ls).item(), "source loss", epoch)?,
        l_align: finite(tape.value(la).item(), "alignment loss", epoch)?,
    };
    // With λ = 0 the alignment branch stays off the loss path entirely.
    let total = if config.lambda == 0.0 {
        ls
    } else {
        let weighted = tape.scale(la, config.lambda)?;
        tape.add(ls, weighted)?
    };
    let mut grads = tape.backward(total)?;
    let mut grads: Vec<Tensor> = vars.all().into_iter().map(|v| grads.remove(v).expect("leaf gradient")).collect();
    finite(clip_global_norm(&mut grads, config.grad_clip_norm), "model gradient norm", epoch)?;
    state.adam_model.update(state.encoder.tensors_mut(), &grads, config.lr_model)?;
    Ok(losses)
}

/// Sampler step: `sampler_steps` Adam ascent steps on the alignment loss.
/// Returns the objective before each update; empty for fixed-band kinds.
pub fn train_step_sampler(state: &mut TrainState, data: &TrainingData, config: &TrainConfig) -> Result<Vec<f64>> {
    if config.sampler != SamplerKind::Adaptive || config.sampler_steps == 0 {
        return Ok(Vec::new());
    }
    let (zs_value, zt_value) = embeddings(&state.encoder, data, config)?;
    let mut objectives = Vec::with_capacity(config.sampler_steps);
    for _ in 0..config.sampler_steps {
        let batch = sample_frequencies(&state.sampler, config.frequencies, &mut state.rng)?;
        let mut tape = Tape::new();
        let vars = state.sampler.register(&mut tape, true);
        let zs = tape.constant(zs_value.clone());
        let zt = tape.constant(zt_value.clone());
        let objective = sampler_ascent_objective(&mut tape, vars, &batch, zs, zt, config.kappa)?;
        objectives.push(finite(tape.value(objective).item(), "sampler objective", state.epoch)?);
        let mut grads = tape.backward(objective)?;
        let ascent: Vec<Tensor> = [vars.log_scales, vars.mixture_logits]
            .into_iter()
            .map(|v| grads.remove(v).expect("leaf gradient").map(|g| -g))
            .collect();
        if !ascent.iter().all(Tensor::is_finite) {
            return Err(Error::NonFinite { what: "sampler gradient", epoch: state.epoch });
        }
        state.adam_sampler.update(state.sampler.tensors_mut(), &ascent, config.lr_sampler)?;
    }
    Ok(objectives)
}

/// Source and target embeddings (target after the extra propagation).
pub fn embeddings(encoder: &EncoderParams, data: &TrainingData, config: &TrainConfig) -> Result<(Tensor, Tensor)> {
    let mut tape = Tape::new();
    let vars = encoder.register(&mut tape, false);
    let (zs, zt) = forward(&mut tape, &vars, data, config)?;
    Ok((tape.value(zs).clone(), tape.value(zt).clone()))
}

/// Embeddings of one domain with `extra_propagation` further steps applied.
pub fn embed_domain(encoder: &EncoderParams, domain: &DomainTensors, extra_propagation: usize) -> Result<Tensor> {
    let mut tape = Tape::new();
    let vars = encoder.register(&mut tape, false);
    let x = tape.constant(domain.features.clone());
    let z = encode(&mut tape, &domain.adjacency, x, &vars)?;
    let z = propagate(&mut tape, &domain.adjacency, z, extra_propagation)?;
    Ok(tape.value(z).clone())
}

/// Class predictions for one domain, with `extra_propagation` steps applied
/// to its embeddings before the classifier.
pub fn predict_domain(encoder: &EncoderParams, domain: &DomainTensors, extra_propagation: usize) -> Result<Vec<usize>> {
    let mut tape = Tape::new();
    let vars = encoder.register(&mut tape, false);
    let x = tape.constant(domain.features.clone());
    let z = encode(&mut tape, &domain.adjacency, x, &vars)?;
    let z = propagate(&mut tape, &domain.adjacency, z, extra_propagation)?;
    let logits = classify(&mut tape, z, &vars)?;
    Ok(predict(tape.value(logits)))
}

/// Micro- and macro-F1 of `pred` against `labels`.
pub fn f1_scores(labels: &[usize], pred: &[usize]) -> Result<(f64, f64)> {
    Ok((micro_f1(labels, pred)?, macro_f1(labels, pred)?))
}

/// Result of [`fit`].
#[derive(Clone, Debug)]
pub struct FitOutcome {
    pub state: TrainState,
    pub log: Vec<MetricsRecord>,
}

/// Trains on `source` → `target`, recording metrics at epoch 0 (initial
/// state), every `eval_every` epochs and the final epoch.
pub fn fit(source: &DomainGraph, target: &DomainGraph, config: &TrainConfig) -> Result<FitOutcome> {
    fit_with(source, target, config, |_| {})
}

/// [`fit`] with a callback invoked on every record as it is produced.
pub fn fit_with(
    source: &DomainGraph,
    target: &DomainGraph,
    config: &TrainConfig,
    mut on_record: impl FnMut(&MetricsRecord),
) -> Result<FitOutcome> {
    let data = TrainingData::new(source, target)?;
    let mut state = TrainState::init(config, &data)?;
    let target_labels = target.labels();
    let record = |state: &TrainState, losses: StepLosses, wall_ms: u64| -> Result<MetricsRecord> {
        let (micro, macro_) = match target_labels {
            Some(labels) => {
                let pred = predict_domain(&state.encoder, &data.target, config.target_extra_propagation)?;
                let (a, b) = f1_scores(labels, &pred)?;
                (Some(a), Some(b))
            }
            None => (None, None),
        };
        Ok(MetricsRecord {
            epoch: state.epoch,
            l_source: losses.l_source,
            l_align: losses.l_align,
            micro_f1: micro,
            macro_f1: macro_,
            clamp_active: state.sampler.clamp_active(),
            wall_ms,
        })
    };

    let mut log = Vec::new();
    let start = Instant::now();
    // The initial record draws its frequencies from the report stream so
    // that training sees the same frequency sequence with or without it.
    let initial_batch = draw_frequencies(&state.sampler, config, &mut substream(config.seed, Stream::Report))?;
    let initial = evaluate_losses(&state.encoder, &data, config, &initial_batch)?;
    let first = record(&state, initial, start.elapsed().as_millis() as u64)?;
    on_record(&first);
    log.push(first);

    for epoch in 1..=config.epochs {
        let started = Instant::now();
        state.epoch = epoch;
        let losses = train_step_model(&mut state, &data, config)?;
        train_step_sampler(&mut state, &data, config)?;
        if epoch % config.eval_every == 0 || epoch == config.epochs {
            let rec = record(&state, losses, started.elapsed().as_millis() as u64)?;
            ::log::debug!("{}", rec.to_line());
            on_record(&rec);
            log.push(rec);
        }
    }
    Ok(FitOutcome { state, log })
}
