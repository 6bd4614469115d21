use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::EncoderError;
use crate::nn::{Activation, Adam, AdamConfig, Graph, Mlp, Param, Tensor, Var};
use crate::rng::{self, label};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AdapterRole {
    /// `F_c1`: numeric state features.
    Numeric,
    /// `F_c2`: encoder output.
    Text,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdapterConfig {
    /// Output width `d_f` of each adapter.
    pub fused_dim: usize,
    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Per-dimension batch variance below which the hinge activates.
    pub variance_floor: f64,
    pub variance_weight: f64,
    /// Random-policy steps collected per DU for offline alignment.
    pub pretrain_steps: usize,
}

impl Default for AdapterConfig {
    fn default() -> Self {
        Self {
            fused_dim: 32,
            hidden: 64,
            epochs: 50,
            batch_size: 64,
            lr: 1e-3,
            variance_floor: 0.05,
            variance_weight: 1.0,
            pretrain_steps: 256,
        }
    }
}

#[derive(Clone, Debug)]
pub struct AdapterNet {
    pub role: AdapterRole,
    pub mlp: Mlp,
}

impl AdapterNet {
    pub fn new(
        role: AdapterRole,
        input: usize,
        cfg: &AdapterConfig,
        seed: u64,
    ) -> Result<Self, EncoderError> {
        let (name, tag) = match role {
            AdapterRole::Numeric => ("adapter.numeric", 1),
            AdapterRole::Text => ("adapter.text", 2),
        };
        let mut r = rng::stream(seed, &[label::ADAPTER, tag]);
        let mlp = Mlp::new(
            name,
            &[input, cfg.hidden, cfg.fused_dim],
            Activation::Tanh,
            true,
            &mut r,
        )?;
        Ok(Self { role, mlp })
    }

    pub fn input_dim(&self) -> usize {
        self.mlp.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.mlp.output_dim()
    }

    pub fn apply(&self, input: &[f64]) -> Result<Vec<f64>, EncoderError> {
        if input.len() != self.input_dim() {
            return Err(EncoderError::DimensionMismatch {
                expected: self.input_dim(),
                got: input.len(),
            });
        }
        Ok(self.mlp.predict(&Tensor::row(input.to_vec())).into_data())
    }

    pub fn params(&self) -> Vec<&Param> {
        self.mlp.params()
    }
}

/// Actor/critic input: `concat(s'_r, s'_t)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FusedState {
    /// `F_c2(h)`.
    pub text: Vec<f64>,
    /// `F_c1(features)`.
    pub numeric: Vec<f64>,
}

impl FusedState {
    pub fn concat(&self) -> Vec<f64> {
        self.text.iter().chain(&self.numeric).copied().collect()
    }

    pub fn len(&self) -> usize {
        self.text.len() + self.numeric.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_finite(&self) -> bool {
        self.text.iter().chain(&self.numeric).all(|v| v.is_finite())
    }
}

pub fn fuse(
    numeric: &AdapterNet,
    text: &AdapterNet,
    features: &[f64],
    h: &[f64],
) -> Result<FusedState, EncoderError> {
    Ok(FusedState {
        text: text.apply(h)?,
        numeric: numeric.apply(features)?,
    })
}

/// `Σ_d max(0, floor − var_d(y)) / d` over the rows of `y`.
fn variance_hinge(g: &mut Graph, y: Var, floor: f64) -> Var {
    let mu = g.mean_rows(y);
    let centered = g.sub_row(y, mu);
    let sq = g.square(centered);
    let var = g.mean_rows(sq);
    let neg = g.neg(var);
    let gap = g.add_scalar(neg, floor);
    let hinge = g.relu(gap);
    g.mean(hinge)
}

/// Alignment objective on one batch; returns `(total, mse)` nodes.
pub fn alignment_loss(
    g: &mut Graph,
    numeric: &AdapterNet,
    text: &AdapterNet,
    states: &Tensor,
    embeddings: &Tensor,
    cfg: &AdapterConfig,
) -> (Var, Var) {
    let s = g.constant(states.clone());
    let h = g.constant(embeddings.clone());
    let a = numeric.mlp.forward(g, s);
    let b = text.mlp.forward(g, h);
    let diff = g.sub(a, b);
    let sq = g.square(diff);
    let mse = g.mean(sq);
    let ha = variance_hinge(g, a, cfg.variance_floor);
    let hb = variance_hinge(g, b, cfg.variance_floor);
    let hinge = g.add(ha, hb);
    let hinge = g.scale(hinge, cfg.variance_weight);
    (g.add(mse, hinge), mse)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PretrainReport {
    /// Mean total loss per epoch.
    pub loss: Vec<f64>,
    /// Mean alignment MSE per epoch.
    pub alignment: Vec<f64>,
}

fn batch_tensor(rows: &[&[f64]]) -> Tensor {
    let cols = rows[0].len();
    let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
    Tensor::new(vec![rows.len(), cols], data).expect("uniform row width")
}

/// Offline alignment of `F_c1(s)` with `F_c2(h)`; both adapters are frozen
/// on return.
pub fn pretrain_adapters(
    numeric: &mut AdapterNet,
    text: &mut AdapterNet,
    pairs: &[(Vec<f64>, Vec<f64>)],
    cfg: &AdapterConfig,
    seed: u64,
) -> Result<PretrainReport, EncoderError> {
    if cfg.batch_size < 2 {
        return Err(EncoderError::InvalidConfig(
            "adapter.batch_size must be at least 2".into(),
        ));
    }
    if pairs.len() < cfg.batch_size {
        return Err(EncoderError::NotEnoughPairs {
            have: pairs.len(),
            need: cfg.batch_size,
        });
    }
    for (s, h) in pairs {
        if s.len() != numeric.input_dim() || h.len() != text.input_dim() {
            return Err(EncoderError::DimensionMismatch {
                expected: numeric.input_dim() + text.input_dim(),
                got: s.len() + h.len(),
            });
        }
    }
    numeric.mlp.set_trainable(true);
    text.mlp.set_trainable(true);
    let mut adam = Adam::new(AdamConfig::with_lr(cfg.lr));
    let mut r = rng::stream(seed, &[label::PRETRAIN]);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut report = PretrainReport::default();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut r);
        let (mut tot, mut mse_sum, mut n) = (0.0, 0.0, 0);
        for chunk in order.chunks(cfg.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let s = batch_tensor(&chunk.iter().map(|&i| pairs[i].0.as_slice()).collect::<Vec<_>>());
            let h = batch_tensor(&chunk.iter().map(|&i| pairs[i].1.as_slice()).collect::<Vec<_>>());
            let mut g = Graph::new();
            let (loss, mse) = alignment_loss(&mut g, numeric, text, &s, &h, cfg);
            let lv = g.value(loss).item();
            if !lv.is_finite() {
                return Err(EncoderError::NonFinite("adapter alignment loss".into()));
            }
            tot += lv;
            mse_sum += g.value(mse).item();
            n += 1;
            let grads = g.backward(loss)?;
            let params: Vec<&mut Param> = numeric
                .mlp
                .params_mut()
                .into_iter()
                .chain(text.mlp.params_mut())
                .collect();
            adam.step(params, &grads)?;
        }
        report.loss.push(tot / n as f64);
        report.alignment.push(mse_sum / n as f64);
    }
    numeric.mlp.set_trainable(false);
    text.mlp.set_trainable(false);
    Ok(report)
}
