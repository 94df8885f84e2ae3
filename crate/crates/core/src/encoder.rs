//! GCN encoder and linear classification head.
//!
//! Each layer computes `Â H W + b`, with a ReLU after every layer except the
//! last. The embeddings of the last layer feed the classifier and the
//! spectral alignment.

use std::sync::Arc;

use rand::Rng;

use crate::autodiff::{CsrMatrix, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng::SeededRng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EncoderConfig {
    pub in_dim: usize,
    pub hidden_dim: usize,
    pub emb_dim: usize,
    pub num_layers: usize,
    pub num_classes: usize,
}

impl EncoderConfig {
    /// Input and output width of every GCN layer.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        (0..self.num_layers)
            .map(|l| {
                let input = if l == 0 { self.in_dim } else { self.hidden_dim };
                let output = if l + 1 == self.num_layers { self.emb_dim } else { self.hidden_dim };
                (input, output)
            })
            .collect()
    }

    fn validate(&self) -> Result<()> {
        if self.num_layers == 0 || self.in_dim == 0 || self.emb_dim == 0 || self.num_classes == 0 {
            return Err(Error::Config(format!("degenerate encoder {self:?}")));
        }
        if self.num_layers > 1 && self.hidden_dim == 0 {
            return Err(Error::Config("hidden_dim must be positive".into()));
        }
        Ok(())
    }
}

/// Weight `[in, out]` and bias `[1, out]` of one affine map.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    /// Uniform in `[-1/√fan_in, 1/√fan_in]` for weight and bias.
    pub fn init(fan_in: usize, fan_out: usize, rng: &mut SeededRng) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let mut draw = |n: usize| (0..n).map(|_| rng.random_range(-bound..=bound)).collect::<Vec<_>>();
        let weight = Tensor::matrix(fan_in, fan_out, draw(fan_in * fan_out)).expect("sized");
        let bias = Tensor::row(draw(fan_out));
        Self { weight, bias }
    }

    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self { weight: Tensor::zeros(&[fan_in, fan_out]), bias: Tensor::zeros(&[1, fan_out]) }
    }

    fn check(&self, fan_in: usize, fan_out: usize, what: &str) -> Result<()> {
        if self.weight.shape() != [fan_in, fan_out] || self.bias.shape() != [1, fan_out] {
            return Err(Error::Contract(format!(
                "{what}: expected weight [{fan_in}, {fan_out}] and bias [1, {fan_out}], got {:?} and {:?}",
                self.weight.shape(),
                self.bias.shape()
            )));
        }
        Ok(())
    }
}

/// Learnable GNN parameters: GCN layers plus classifier.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    config: EncoderConfig,
    layers: Vec<Linear>,
    classifier: Linear,
}

/// Tape handles of [`EncoderParams`], in [`EncoderParams::tensors`] order.
#[derive(Clone, Debug)]
pub struct EncoderVars {
    layers: Vec<(Var, Var)>,
    classifier: (Var, Var),
}

impl EncoderVars {
    pub fn all(&self) -> Vec<Var> {
        let mut out: Vec<Var> = self.layers.iter().flat_map(|&(w, b)| [w, b]).collect();
        out.extend([self.classifier.0, self.classifier.1]);
        out
    }

    /// Swaps the variable at position `index` of [`EncoderVars::all`].
    pub fn replace(&mut self, index: usize, var: Var) {
        let layer_slots = 2 * self.layers.len();
        let slot = if index < layer_slots {
            let (w, b) = &mut self.layers[index / 2];
            if index % 2 == 0 { w } else { b }
        } else if index == layer_slots {
            &mut self.classifier.0
        } else {
            assert!(index == layer_slots + 1, "parameter index {index} out of range");
            &mut self.classifier.1
        };
        *slot = var;
    }
}

impl EncoderParams {
    pub fn init(config: EncoderConfig, rng: &mut SeededRng) -> Result<Self> {
        config.validate()?;
        let layers = config.layer_dims().into_iter().map(|(i, o)| Linear::init(i, o, rng)).collect();
        let classifier = Linear::init(config.emb_dim, config.num_classes, rng);
        Ok(Self { config, layers, classifier })
    }

    /// Assembles parameters, checking that layer widths chain.
    pub fn from_parts(config: EncoderConfig, layers: Vec<Linear>, classifier: Linear) -> Result<Self> {
        config.validate()?;
        let dims = config.layer_dims();
        if layers.len() != dims.len() {
            return Err(Error::Contract(format!("{} layers for a {}-layer encoder", layers.len(), dims.len())));
        }
        for (l, (layer, (i, o))) in layers.iter().zip(dims).enumerate() {
            layer.check(i, o, &format!("layer {l}"))?;
        }
        classifier.check(config.emb_dim, config.num_classes, "classifier")?;
        Ok(Self { config, layers, classifier })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn layers(&self) -> &[Linear] {
        &self.layers
    }

    pub fn classifier(&self) -> &Linear {
        &self.classifier
    }

    /// Named tensors in a fixed order: `layer<l>.weight`, `layer<l>.bias`, …,
    /// `classifier.weight`, `classifier.bias`.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            out.push((format!("layer{l}.weight"), &layer.weight));
            out.push((format!("layer{l}.bias"), &layer.bias));
        }
        out.push(("classifier.weight".into(), &self.classifier.weight));
        out.push(("classifier.bias".into(), &self.classifier.bias));
        out
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        self.named_tensors().into_iter().map(|(_, t)| t).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::new();
        for layer in &mut self.layers {
            out.push(&mut layer.weight);
            out.push(&mut layer.bias);
        }
        out.push(&mut self.classifier.weight);
        out.push(&mut self.classifier.bias);
        out
    }

    /// Puts every parameter on `tape`, as leaves when `trainable`.
    pub fn register(&self, tape: &mut Tape, trainable: bool) -> EncoderVars {
        let mut put = |t: &Tensor| if trainable { tape.leaf(t.clone()) } else { tape.constant(t.clone()) };
        let layers = self.layers.iter().map(|l| (put(&l.weight), put(&l.bias))).collect();
        let classifier = (put(&self.classifier.weight), put(&self.classifier.bias));
        EncoderVars { layers, classifier }
    }
}

/// Node embeddings `Z` for features `x` (an `[N, in_dim]` variable).
pub fn encode(tape: &mut Tape, adj: &Arc<CsrMatrix>, x: Var, vars: &EncoderVars) -> Result<Var> {
    let n = tape.value(x).rows();
    if adj.rows() != n || adj.cols() != n {
        return Err(Error::Contract(format!("{}x{} adjacency for {n} nodes", adj.rows(), adj.cols())));
    }
    let mut h = x;
    let last = vars.layers.len() - 1;
    for (l, &(w, b)) in vars.layers.iter().enumerate() {
        let hw = tape.matmul(h, w)?;
        let prop = tape.sparse_matmul(adj, hw)?;
        let pre = tape.add_row(prop, b)?;
        h = if l == last { pre } else { tape.relu(pre)? };
    }
    Ok(h)
}

/// Parameter-free extra propagation `Â^steps Z`.
pub fn propagate(tape: &mut Tape, adj: &Arc<CsrMatrix>, z: Var, steps: usize) -> Result<Var> {
    let mut h = z;
    for _ in 0..steps {
        h = tape.sparse_matmul(adj, h)?;
    }
    Ok(h)
}

/// Logits `Z W_cls + b_cls`.
pub fn classify(tape: &mut Tape, z: Var, vars: &EncoderVars) -> Result<Var> {
    let (w, b) = vars.classifier;
    let zw = tape.matmul(z, w)?;
    Ok(tape.add_row(zw, b)?)
}

/// Mean cross-entropy of `logits` against `labels`.
pub fn source_loss(tape: &mut Tape, logits: Var, labels: &[usize]) -> Result<Var> {
    let c = tape.value(logits).cols();
    if let Some(&label) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::LabelRange { label, num_classes: c });
    }
    let log_probs = tape.log_softmax_rows(logits)?;
    let picked = tape.pick(log_probs, labels)?;
    let mean = tape.mean(picked)?;
    Ok(tape.scale(mean, -1.0)?)
}

/// Row-wise argmax; ties go to the lowest class index.
pub fn predict(logits: &Tensor) -> Vec<usize> {
    (0..logits.rows())
        .map(|r| {
            let row = logits.row_slice(r);
            let mut best = 0;
            for (j, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}
