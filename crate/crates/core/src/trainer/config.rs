use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::kv;
use crate::sampler::SamplerKind;

/// Every knob of a training run.
///
/// Config files use the field names as keys (`lr_model = 0.003`).
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Weight of the alignment loss in the model objective.
    pub lambda: f64,
    /// Amplitude share of the pointwise discrepancy.
    pub kappa: f64,
    /// Frequencies drawn per step.
    pub frequencies: usize,
    /// Mixture components of the adaptive sampler.
    pub components: usize,
    pub lr_model: f64,
    pub lr_sampler: f64,
    /// Epochs of alternating updates; `0` only evaluates the initial state.
    pub epochs: usize,
    pub grad_clip_norm: f64,
    pub seed: u64,
    pub sampler: SamplerKind,
    /// Sampler ascent steps per model step.
    pub sampler_steps: usize,
    /// Parameter-free propagation steps applied to target embeddings.
    pub target_extra_propagation: usize,
    /// Evaluate and log every this many epochs (the last epoch is always logged).
    pub eval_every: usize,
    pub hidden_dim: usize,
    pub emb_dim: usize,
    pub num_layers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            kappa: 0.7,
            frequencies: 2048,
            components: 4,
            lr_model: 3e-3,
            lr_sampler: 3e-3,
            epochs: 150,
            grad_clip_norm: 5.0,
            seed: 0,
            sampler: SamplerKind::Adaptive,
            sampler_steps: 1,
            target_extra_propagation: 0,
            eval_every: 1,
            hidden_dim: 64,
            emb_dim: 64,
            num_layers: 2,
        }
    }
}

/// Config keys in file order.
pub const CONFIG_KEYS: [&str; 16] = [
    "lambda",
    "kappa",
    "frequencies",
    "components",
    "lr_model",
    "lr_sampler",
    "epochs",
    "grad_clip_norm",
    "seed",
    "sampler",
    "sampler_steps",
    "target_extra_propagation",
    "eval_every",
    "hidden_dim",
    "emb_dim",
    "num_layers",
];

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, why: String| Err(Error::Config(format!("{field}: {why}")));
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda", format!("must be finite and non-negative, got {}", self.lambda));
        }
        if !(0.0..=1.0).contains(&self.kappa) {
            return bad("kappa", format!("must lie in [0, 1], got {}", self.kappa));
        }
        for (field, rate) in [("lr_model", self.lr_model), ("lr_sampler", self.lr_sampler), ("grad_clip_norm", self.grad_clip_norm)] {
            if !(rate > 0.0 && rate.is_finite()) {
                return bad(field, format!("must be positive, got {rate}"));
            }
        }
        if self.components == 0 {
            return bad("components", "must be at least 1".into());
        }
        if self.frequencies < self.components {
            return bad("frequencies", format!("{} frequencies cannot cover {} components", self.frequencies, self.components));
        }
        for (field, v) in [("eval_every", self.eval_every), ("emb_dim", self.emb_dim), ("num_layers", self.num_layers)] {
            if v == 0 {
                return bad(field, "must be at least 1".into());
            }
        }
        if self.num_layers > 1 && self.hidden_dim == 0 {
            return bad("hidden_dim", "must be at least 1".into());
        }
        Ok(())
    }

    pub fn encoder_config(&self, in_dim: usize, num_classes: usize) -> EncoderConfig {
        EncoderConfig {
            in_dim,
            hidden_dim: self.hidden_dim,
            emb_dim: self.emb_dim,
            num_layers: self.num_layers,
            num_classes,
        }
    }

    /// Sets one field from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "lambda" => self.lambda = kv::parse_value(key, value)?,
            "kappa" => self.kappa = kv::parse_value(key, value)?,
            "frequencies" => self.frequencies = kv::parse_value(key, value)?,
            "components" => self.components = kv::parse_value(key, value)?,
            "lr_model" => self.lr_model = kv::parse_value(key, value)?,
            "lr_sampler" => self.lr_sampler = kv::parse_value(key, value)?,
            "epochs" => self.epochs = kv::parse_value(key, value)?,
            "grad_clip_norm" => self.grad_clip_norm = kv::parse_value(key, value)?,
            "seed" => self.seed = kv::parse_value(key, value)?,
            "sampler" => self.sampler = kv::parse_value(key, value)?,
            "sampler_steps" => self.sampler_steps = kv::parse_value(key, value)?,
            "target_extra_propagation" => self.target_extra_propagation = kv::parse_value(key, value)?,
            "eval_every" => self.eval_every = kv::parse_value(key, value)?,
            "hidden_dim" => self.hidden_dim = kv::parse_value(key, value)?,
            "emb_dim" => self.emb_dim = kv::parse_value(key, value)?,
            "num_layers" => self.num_layers = kv::parse_value(key, value)?,
            _ => return Err(kv::KvError::UnknownKey(key.to_string()).into()),
        }
        Ok(())
    }

    /// Textual value of one field.
    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "lambda" => self.lambda.to_string(),
            "kappa" => self.kappa.to_string(),
            "frequencies" => self.frequencies.to_string(),
            "components" => self.components.to_string(),
            "lr_model" => self.lr_model.to_string(),
            "lr_sampler" => self.lr_sampler.to_string(),
            "epochs" => self.epochs.to_string(),
            "grad_clip_norm" => self.grad_clip_norm.to_string(),
            "seed" => self.seed.to_string(),
            "sampler" => self.sampler.to_string(),
            "sampler_steps" => self.sampler_steps.to_string(),
            "target_extra_propagation" => self.target_extra_propagation.to_string(),
            "eval_every" => self.eval_every.to_string(),
            "hidden_dim" => self.hidden_dim.to_string(),
            "emb_dim" => self.emb_dim.to_string(),
            "num_layers" => self.num_layers.to_string(),
            _ => return None,
        })
    }

    /// Applies `key = value` lines on top of `self`, then validates.
    pub fn apply_kv_str(&mut self, text: &str) -> Result<()> {
        for entry in kv::parse(text)? {
            self.set(&entry.key, &entry.value).map_err(|e| match e {
                Error::Kv(kv::KvError::UnknownKey(k)) => Error::Config(format!("line {}: unknown key `{k}`", entry.line)),
                other => other,
            })?;
        }
        self.validate()
    }

    pub fn from_kv_str(text: &str) -> Result<Self> {
        let mut config = Self::default();
        config.apply_kv_str(text)?;
        Ok(config)
    }

    /// Every field as `key = value`, in [`CONFIG_KEYS`] order.
    pub fn to_kv_string(&self) -> String {
        CONFIG_KEYS
            .iter()
            .map(|k| format!("{k} = {}\n", self.get(k).expect("known key")))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_through_text() {
        let mut c = TrainConfig { lambda: 0.25, sampler: SamplerKind::High, seed: 9, ..TrainConfig::default() };
        c.lr_model = 1e-3 / 3.0;
        assert_eq!(TrainConfig::from_kv_str(&c.to_kv_string()).unwrap(), c);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(TrainConfig::from_kv_str("kappa = 1.5").is_err());
        assert!(TrainConfig::from_kv_str("lambda = -1").is_err());
        assert!(TrainConfig::from_kv_str("frequencies = 2\ncomponents = 4").is_err());
        assert!(TrainConfig::from_kv_str("sampler = uniform").is_err());
        assert!(TrainConfig::from_kv_str("learning_rate = 0.1").is_err());
    }
}
