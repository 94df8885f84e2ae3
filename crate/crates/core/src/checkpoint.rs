//! Parameter checkpoints.
//!
//! A checkpoint is a UTF-8 header followed by raw little-endian `f64` data:
//!
//! ```text
//! adalign-checkpoint 1
//! encoder <in_dim> <hidden_dim> <emb_dim> <num_layers> <num_classes>
//! sampler <components> <dim>
//! target_extra_propagation <steps>
//! tensor <name> <rows> <cols>
//! ...
//! end
//! ```
//!
//! The data sections follow `end\n` directly, one per `tensor` line, in
//! header order.

use std::path::Path;

use crate::autodiff::Tensor;
use crate::encoder::{EncoderConfig, EncoderParams, Linear};
use crate::error::{Error, Result};
use crate::sampler::SamplerParams;

const MAGIC: &str = "adalign-checkpoint 1";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub encoder: EncoderParams,
    pub sampler: SamplerParams,
    pub target_extra_propagation: usize,
}

fn bad(message: impl Into<String>) -> Error {
    Error::Checkpoint(message.into())
}

fn numbers<const K: usize>(line: &str, tag: &str) -> Result<[usize; K]> {
    let rest = line.strip_prefix(tag).and_then(|r| r.strip_prefix(' ')).ok_or_else(|| bad(format!("expected `{tag}` line, got {line:?}")))?;
    let parsed: Vec<usize> = rest
        .split(' ')
        .map(|v| v.parse().map_err(|_| bad(format!("bad number {v:?} in {line:?}"))))
        .collect::<Result<_>>()?;
    parsed.try_into().map_err(|_| bad(format!("expected {K} numbers in {line:?}")))
}

impl Checkpoint {
    fn sections(&self) -> Vec<(String, &Tensor)> {
        let mut out = self.encoder.named_tensors();
        out.extend(self.sampler.named_tensors());
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let c = self.encoder.config();
        let mut header = format!(
            "{MAGIC}\nencoder {} {} {} {} {}\nsampler {} {}\ntarget_extra_propagation {}\n",
            c.in_dim,
            c.hidden_dim,
            c.emb_dim,
            c.num_layers,
            c.num_classes,
            self.sampler.num_components(),
            self.sampler.dim(),
            self.target_extra_propagation
        );
        let sections = self.sections();
        for (name, t) in &sections {
            header.push_str(&format!("tensor {name} {} {}\n", t.rows(), t.cols()));
        }
        header.push_str("end\n");
        let mut bytes = header.into_bytes();
        for (_, t) in &sections {
            for v in t.data() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        bytes
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        const END: &[u8] = b"\nend\n";
        let header_len = bytes
            .windows(END.len())
            .position(|w| w == END)
            .ok_or_else(|| bad("missing header terminator"))?
            + END.len();
        let header = std::str::from_utf8(&bytes[..header_len]).map_err(|_| bad("header is not UTF-8"))?;
        let mut lines = header.lines();
        if lines.next() != Some(MAGIC) {
            return Err(bad("not an adalign checkpoint (bad magic line)"));
        }
        let [in_dim, hidden_dim, emb_dim, num_layers, num_classes] = numbers::<5>(lines.next().unwrap_or(""), "encoder")?;
        let config = EncoderConfig { in_dim, hidden_dim, emb_dim, num_layers, num_classes };
        let [components, dim] = numbers::<2>(lines.next().unwrap_or(""), "sampler")?;
        let [target_extra_propagation] = numbers::<1>(lines.next().unwrap_or(""), "target_extra_propagation")?;

        let mut data = &bytes[header_len..];
        let mut tensors: Vec<(String, Tensor)> = Vec::new();
        for line in lines {
            if line == "end" {
                break;
            }
            let mut parts = line.splitn(3, ' ');
            let (Some("tensor"), Some(name), Some(dims)) = (parts.next(), parts.next(), parts.next()) else {
                return Err(bad(format!("bad section line {line:?}")));
            };
            let [rows, cols] = numbers::<2>(&format!("dims {dims}"), "dims")?;
            let len = rows * cols * 8;
            if data.len() < len {
                return Err(bad(format!("section `{name}` truncated")));
            }
            let values = data[..len].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
            data = &data[len..];
            tensors.push((name.to_string(), Tensor::matrix(rows, cols, values)?));
        }
        if !data.is_empty() {
            return Err(bad(format!("{} trailing bytes after the last section", data.len())));
        }

        let mut take = |name: &str| -> Result<Tensor> {
            let pos = tensors.iter().position(|(n, _)| n == name).ok_or_else(|| bad(format!("missing section `{name}`")))?;
            Ok(tensors.remove(pos).1)
        };
        let mut layers = Vec::with_capacity(num_layers);
        for l in 0..num_layers {
            layers.push(Linear { weight: take(&format!("layer{l}.weight"))?, bias: take(&format!("layer{l}.bias"))? });
        }
        let classifier = Linear { weight: take("classifier.weight")?, bias: take("classifier.bias")? };
        let log_scales = take("sampler.log_scales")?;
        let logits = take("sampler.mixture_logits")?;
        if let Some((name, _)) = tensors.first() {
            return Err(bad(format!("unexpected section `{name}`")));
        }
        let encoder = EncoderParams::from_parts(config, layers, classifier)?;
        let sampler = SamplerParams::from_parts(log_scales, logits)?;
        if sampler.num_components() != components || sampler.dim() != dim {
            return Err(bad("sampler sections disagree with the header"));
        }
        Ok(Self { encoder, sampler, target_extra_propagation })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|source| Error::Io { path: path.to_path_buf(), source })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
        Self::from_bytes(&bytes)
    }
}
