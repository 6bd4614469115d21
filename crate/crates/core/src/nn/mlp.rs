use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Graph, NnError, Param, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Identity,
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: Param,
    pub bias: Param,
}

impl Linear {
    /// Xavier-uniform weights, zero bias.
    pub fn new(name: &str, input: usize, output: usize, trainable: bool, rng: &mut impl Rng) -> Self {
        let limit = (6.0 / (input + output) as f64).sqrt();
        let data = (0..input * output)
            .map(|_| rng.random_range(-limit..=limit))
            .collect();
        Self {
            weight: Param::new(
                format!("{name}.weight"),
                Tensor::new(vec![input, output], data).unwrap(),
                trainable,
            ),
            bias: Param::new(format!("{name}.bias"), Tensor::zeros(&[1, output]), trainable),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn output_dim(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn forward(&self, g: &mut Graph, x: Var, frozen: bool) -> Var {
        let (w, b) = if frozen {
            (g.frozen(&self.weight), g.frozen(&self.bias))
        } else {
            (g.param(&self.weight), g.param(&self.bias))
        };
        let y = g.matmul(x, w);
        g.add_row(y, b)
    }
}

/// Fully connected network; the activation follows every layer but the last.
#[derive(Clone, Debug)]
pub struct Mlp {
    layers: Vec<Linear>,
    activation: Activation,
}

impl Mlp {
    /// `dims` lists the input width, every hidden width, then the output width.
    pub fn new(
        name: &str,
        dims: &[usize],
        activation: Activation,
        trainable: bool,
        rng: &mut impl Rng,
    ) -> Result<Self, NnError> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(NnError::InvalidConfig(format!(
                "{name}: layer widths must be positive and at least two, got {dims:?}"
            )));
        }
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(&format!("{name}.{i}"), w[0], w[1], trainable, rng))
            .collect();
        Ok(Self { layers, activation })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().output_dim()
    }

    pub fn layers(&self) -> &[Linear] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Linear] {
        &mut self.layers
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        self.run(g, x, false)
    }

    /// Forward pass with every weight bound as a constant.
    pub fn forward_frozen(&self, g: &mut Graph, x: Var) -> Var {
        self.run(g, x, true)
    }

    fn run(&self, g: &mut Graph, mut x: Var, frozen: bool) -> Var {
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.forward(g, x, frozen);
            if i != last && self.activation == Activation::Tanh {
                x = g.tanh(x);
            }
        }
        x
    }

    /// Forward pass on plain rows without recording gradients.
    pub fn predict(&self, input: &Tensor) -> Tensor {
        let mut g = Graph::new();
        let x = g.constant(input.clone());
        let y = self.forward_frozen(&mut g, x);
        g.value(y).clone()
    }

    pub fn params(&self) -> Vec<&Param> {
        self.layers
            .iter()
            .flat_map(|l| [&l.weight, &l.bias])
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    pub fn set_trainable(&mut self, trainable: bool) {
        for p in self.params_mut() {
            p.set_trainable(trainable);
        }
    }

    /// Polyak update `self ← τ·self + (1−τ)·source`.
    pub fn soft_update_from(&mut self, source: &Mlp, tau: f64) {
        for (dst, src) in self.params_mut().into_iter().zip(source.params()) {
            for (d, s) in dst.value.data_mut().iter_mut().zip(src.value.data()) {
                *d = tau * *d + (1.0 - tau) * s;
            }
        }
    }
}
