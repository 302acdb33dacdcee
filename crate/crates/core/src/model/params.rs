//! Parameter layout, initialisation and counting.
//!
//! All parameters live in one flat `Vec<f64>`; a [`TensorInfo`] names each
//! contiguous slice. The layout is a pure function of the [`ModelConfig`], so
//! gradients and optimizer moments reuse it unchanged.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelError, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorInfo {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Location of one tensor in the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Slot {
    pub off: usize,
    pub len: usize,
}

impl Slot {
    pub fn of<'a>(&self, data: &'a [f64]) -> &'a [f64] {
        &data[self.off..self.off + self.len]
    }

    pub fn of_mut<'a>(&self, data: &'a mut [f64]) -> &'a mut [f64] {
        &mut data[self.off..self.off + self.len]
    }
}

/// Disjoint mutable slices of one buffer, returned in the order given.
pub(crate) fn slots_mut<const K: usize>(data: &mut [f64], slots: [Slot; K]) -> [&mut [f64]; K] {
    let mut order: [usize; K] = std::array::from_fn(|i| i);
    order.sort_by_key(|&i| slots[i].off);
    let mut out: [Option<&mut [f64]>; K] = std::array::from_fn(|_| None);
    let mut rest = data;
    let mut consumed = 0;
    for &i in &order {
        let s = slots[i];
        assert!(s.off >= consumed, "overlapping slots");
        let (_, tail) = std::mem::take(&mut rest).split_at_mut(s.off - consumed);
        let (head, tail) = tail.split_at_mut(s.len);
        out[i] = Some(head);
        rest = tail;
        consumed = s.off + s.len;
    }
    out.map(|o| o.expect("every slot assigned"))
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Linear {
    pub w: Slot,
    pub b: Slot,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Norm {
    pub g: Slot,
    pub b: Slot,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Attention {
    pub qkv: Linear,
    pub out: Linear,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct EncoderLayer {
    pub ln1: Norm,
    pub attn: Attention,
    pub ln2: Norm,
    pub ffn1: Linear,
    pub ffn2: Linear,
}

/// Typed offsets of every tensor.
#[derive(Debug, Clone)]
pub(crate) struct ParamIndex {
    pub patch: Linear,
    pub conv1: Linear,
    pub conv2: Linear,
    pub conv_proj: Linear,
    pub temporal_pe: Slot,
    pub layers: Vec<EncoderLayer>,
    pub final_ln: Norm,
    pub channel_pe: Slot,
    pub cross_ln: Norm,
    pub cross: Attention,
    pub classifier: Linear,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Init {
    TruncNormal,
    Xavier { fan_in: usize, fan_out: usize },
    Uniform { fan_in: usize },
    Zeros,
    Ones,
}

struct Builder {
    tensors: Vec<TensorInfo>,
    inits: Vec<Init>,
    total: usize,
}

impl Builder {
    fn add(&mut self, name: String, shape: Vec<usize>, init: Init) -> Slot {
        let info = TensorInfo {
            name,
            shape,
            offset: self.total,
        };
        let slot = Slot {
            off: info.offset,
            len: info.len(),
        };
        self.total += slot.len;
        self.tensors.push(info);
        self.inits.push(init);
        slot
    }

    fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize, init: Init) -> Linear {
        Linear {
            w: self.add(format!("{name}.weight"), vec![fan_in, fan_out], init),
            b: self.add(format!("{name}.bias"), vec![fan_out], Init::Zeros),
        }
    }

    fn norm(&mut self, name: &str, d: usize) -> Norm {
        Norm {
            g: self.add(format!("{name}.gamma"), vec![d], Init::Ones),
            b: self.add(format!("{name}.beta"), vec![d], Init::Zeros),
        }
    }

    fn attention(&mut self, name: &str, d: usize) -> Attention {
        Attention {
            qkv: self.linear(
                &format!("{name}.qkv"),
                d,
                3 * d,
                Init::Xavier {
                    fan_in: d,
                    fan_out: d,
                },
            ),
            out: self.linear(
                &format!("{name}.out"),
                d,
                d,
                Init::Xavier {
                    fan_in: d,
                    fan_out: d,
                },
            ),
        }
    }
}

fn build(cfg: &ModelConfig) -> (ParamIndex, Vec<TensorInfo>, Vec<Init>, usize) {
    let d = cfg.embed_dim;
    let [k1, k2] = cfg.conv.kernels;
    let [c1, c2] = cfg.conv.widths;
    let mut b = Builder {
        tensors: Vec::new(),
        inits: Vec::new(),
        total: 0,
    };
    let patch = b.linear("patch_proj", cfg.patch_len, d, Init::TruncNormal);
    let conv1 = Linear {
        w: b.add(
            "conv1.weight".into(),
            vec![c1, 1, k1],
            Init::Uniform { fan_in: k1 },
        ),
        b: b.add("conv1.bias".into(), vec![c1], Init::Zeros),
    };
    let conv2 = Linear {
        w: b.add(
            "conv2.weight".into(),
            vec![c2, c1, k2],
            Init::Uniform { fan_in: c1 * k2 },
        ),
        b: b.add("conv2.bias".into(), vec![c2], Init::Zeros),
    };
    let conv_proj = b.linear("conv_proj", c2 * d, d, Init::TruncNormal);
    let temporal_pe = b.add(
        "temporal_pe".into(),
        vec![cfg.n_patches(), d],
        Init::TruncNormal,
    );
    let layers = (0..cfg.n_encoder_layers)
        .map(|l| EncoderLayer {
            ln1: b.norm(&format!("encoder.{l}.ln1"), d),
            attn: b.attention(&format!("encoder.{l}.attn"), d),
            ln2: b.norm(&format!("encoder.{l}.ln2"), d),
            ffn1: b.linear(
                &format!("encoder.{l}.ffn1"),
                d,
                cfg.ffn_dim,
                Init::TruncNormal,
            ),
            ffn2: b.linear(
                &format!("encoder.{l}.ffn2"),
                cfg.ffn_dim,
                d,
                Init::TruncNormal,
            ),
        })
        .collect();
    let final_ln = b.norm("encoder.final_ln", d);
    let channel_pe = b.add(
        "channel_pe".into(),
        vec![cfg.n_channels, d],
        Init::TruncNormal,
    );
    let cross_ln = b.norm("cross.ln", d);
    let cross = b.attention("cross.attn", d);
    let classifier = b.linear(
        "classifier",
        cfg.n_channels * d,
        cfg.n_classes,
        Init::TruncNormal,
    );
    let index = ParamIndex {
        patch,
        conv1,
        conv2,
        conv_proj,
        temporal_pe,
        layers,
        final_ln,
        channel_pe,
        cross_ln,
        cross,
        classifier,
    };
    (index, b.tensors, b.inits, b.total)
}

/// Closed-form parameter count. With `L` patch length, `D` embedding, `F`
/// feed-forward width, `P` patches, `C` channels, conv kernels `k1, k2` and
/// widths `c1, c2`, `N` encoder layers and 2 classes:
///
/// ```text
///   (L+1)·D                      patch projection
/// + c1·(k1+1) + c2·(c1·k2+1)     convolutions
/// + (c2·D+1)·D                   conv re-projection
/// + P·D                          temporal encodings
/// + N·(4D² + 2DF + F + 9D)       encoder layers
/// + 2D                           final norm
/// + C·D                          channel encodings
/// + 4D² + 6D                     cross-channel norm and attention
/// + 2·C·D + 2                    classifier
/// ```
pub fn parameter_count(cfg: &ModelConfig) -> usize {
    let (l, d, f, p, c, n) = (
        cfg.patch_len,
        cfg.embed_dim,
        cfg.ffn_dim,
        cfg.n_patches(),
        cfg.n_channels,
        cfg.n_encoder_layers,
    );
    let [k1, k2] = cfg.conv.kernels;
    let [c1, c2] = cfg.conv.widths;
    (l + 1) * d
        + c1 * (k1 + 1)
        + c2 * (c1 * k2 + 1)
        + (c2 * d + 1) * d
        + p * d
        + n * (4 * d * d + 2 * d * f + f + 9 * d)
        + 2 * d
        + c * d
        + 4 * d * d
        + 6 * d
        + cfg.n_classes * c * d
        + cfg.n_classes
}

#[derive(Debug, Clone)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub tensors: Vec<TensorInfo>,
    pub data: Vec<f64>,
    pub(crate) index: ParamIndex,
}

impl PartialEq for ModelParams {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.tensors == other.tensors && self.data == other.data
    }
}

fn trunc_normal(rng: &mut ChaCha8Rng, sigma: f64) -> f64 {
    loop {
        let z: f64 = StandardNormal.sample(rng);
        if z.abs() <= 2.0 {
            return z * sigma;
        }
    }
}

impl ModelParams {
    /// All-zero parameters in the layout of `cfg`.
    pub fn zeros(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let (index, tensors, _, total) = build(cfg);
        Ok(ModelParams {
            config: cfg.clone(),
            tensors,
            data: vec![0.0; total],
            index,
        })
    }

    /// Random initialisation: truncated normal (σ = 0.02) for projections
    /// and position encodings, Xavier uniform for attention, uniform
    /// `±1/√fan_in` for convolutions, zero biases, unit norm gains.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let (index, tensors, inits, total) = build(cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut data = vec![0.0; total];
        for (t, init) in tensors.iter().zip(&inits) {
            for v in &mut data[t.range()] {
                *v = match *init {
                    Init::TruncNormal => trunc_normal(&mut rng, 0.02),
                    Init::Xavier { fan_in, fan_out } => {
                        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                        rng.random_range(-a..a)
                    }
                    Init::Uniform { fan_in } => {
                        let a = 1.0 / (fan_in as f64).sqrt();
                        rng.random_range(-a..a)
                    }
                    Init::Zeros => 0.0,
                    Init::Ones => 1.0,
                };
            }
        }
        Ok(ModelParams {
            config: cfg.clone(),
            tensors,
            data,
            index,
        })
    }

    /// Rebuilds parameters from named tensors, checking names and shapes.
    pub fn from_tensors(
        cfg: &ModelConfig,
        named: Vec<(String, Vec<usize>, Vec<f64>)>,
    ) -> Result<Self> {
        let mut p = ModelParams::zeros(cfg)?;
        if named.len() != p.tensors.len() {
            return Err(ModelError::ShapeMismatch(format!(
                "expected {} tensors, found {}",
                p.tensors.len(),
                named.len()
            )));
        }
        for (info, (name, shape, values)) in p.tensors.iter().zip(named) {
            if info.name != name || info.shape != shape || values.len() != info.len() {
                return Err(ModelError::ShapeMismatch(format!(
                    "tensor {name} {shape:?} does not match expected {} {:?}",
                    info.name, info.shape
                )));
            }
            p.data[info.range()].copy_from_slice(&values);
        }
        Ok(p)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn tensor(&self, name: &str) -> Option<&[f64]> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .map(|t| &self.data[t.range()])
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let range = self.tensors.iter().find(|t| t.name == name)?.range();
        Some(&mut self.data[range])
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn count_matches_layout() {
        for cfg in [ModelConfig::default(), ModelConfig::tiny()] {
            let p = ModelParams::init(&cfg, 1).unwrap();
            assert_eq!(p.len(), parameter_count(&cfg));
            let from_tensors: usize = p.tensors.iter().map(TensorInfo::len).sum();
            assert_eq!(from_tensors, p.len());
        }
        let mut wide = ModelConfig::default();
        wide.embed_dim = 96;
        wide.n_encoder_layers = 4;
        wide.ffn_dim = 384;
        assert_eq!(
            ModelParams::zeros(&wide).unwrap().len(),
            parameter_count(&wide)
        );
    }

    #[test]
    fn default_is_small() {
        let n = parameter_count(&ModelConfig::default());
        assert!(n < 2_000_000, "{n}");
        assert!(parameter_count(&ModelConfig::tiny()) < 20_000);
    }

    #[test]
    fn init_properties() {
        let cfg = ModelConfig::default();
        let a = ModelParams::init(&cfg, 7).unwrap();
        assert_eq!(a, ModelParams::init(&cfg, 7).unwrap());
        assert_ne!(a.data, ModelParams::init(&cfg, 8).unwrap().data);
        assert!(a.all_finite());
        assert!(a
            .tensor("patch_proj.bias")
            .unwrap()
            .iter()
            .all(|&v| v == 0.0));
        assert!(a
            .tensor("encoder.0.ln1.gamma")
            .unwrap()
            .iter()
            .all(|&v| v == 1.0));
        assert!(a
            .tensor("temporal_pe")
            .unwrap()
            .iter()
            .all(|v| v.abs() <= 0.04));
    }

    #[test]
    fn disjoint_slots() {
        let mut v: Vec<f64> = (0..10).map(f64::from).collect();
        let [a, b, c] = slots_mut(
            &mut v,
            [
                Slot { off: 6, len: 2 },
                Slot { off: 1, len: 3 },
                Slot { off: 4, len: 1 },
            ],
        );
        assert_eq!(a, &[6.0, 7.0]);
        assert_eq!(b, &[1.0, 2.0, 3.0]);
        assert_eq!(c, &[4.0]);
    }
}
