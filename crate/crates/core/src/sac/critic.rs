use rand::Rng;

use crate::nn::{Activation, Graph, Mlp, NnError, Param, Tensor, Var};

/// `Q(s, a)` on `concat(state, action)`, with an optional Polyak target copy.
#[derive(Clone, Debug)]
pub struct Critic {
    pub mlp: Mlp,
    pub target: Option<Mlp>,
    state_dim: usize,
    action_dim: usize,
}

impl Critic {
    pub fn new(
        state_dim: usize,
        action_dim: usize,
        hidden: &[usize],
        with_target: bool,
        rng: &mut impl Rng,
    ) -> Result<Self, NnError> {
        let dims: Vec<usize> = std::iter::once(state_dim + action_dim)
            .chain(hidden.iter().copied())
            .chain(std::iter::once(1))
            .collect();
        let mlp = Mlp::new("critic", &dims, Activation::Tanh, true, rng)?;
        let target = with_target.then(|| {
            let mut t = mlp.clone();
            t.set_trainable(false);
            t
        });
        Ok(Self {
            mlp,
            target,
            state_dim,
            action_dim,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn params(&self) -> Vec<&Param> {
        self.mlp.params()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.mlp.params_mut()
    }

    /// `[B, 1]` Q-values in a graph.
    pub fn q(&self, g: &mut Graph, states: Var, actions: Var, frozen: bool) -> Var {
        let x = g.concat_cols(&[states, actions]);
        if frozen {
            self.mlp.forward_frozen(g, x)
        } else {
            self.mlp.forward(g, x)
        }
    }

    fn input(states: &Tensor, actions: &Tensor) -> Tensor {
        let rows: Vec<Vec<f64>> = (0..states.rows())
            .map(|i| {
                states
                    .row_slice(i)
                    .iter()
                    .chain(actions.row_slice(i))
                    .copied()
                    .collect()
            })
            .collect();
        Tensor::from_rows(&rows).expect("uniform widths")
    }

    /// Online Q-values without recording gradients.
    pub fn predict(&self, states: &Tensor, actions: &Tensor) -> Vec<f64> {
        self.mlp.predict(&Self::input(states, actions)).into_data()
    }

    /// Bootstrap Q-values: the target copy when present, else the online net.
    pub fn predict_bootstrap(&self, states: &Tensor, actions: &Tensor) -> Vec<f64> {
        self.target
            .as_ref()
            .unwrap_or(&self.mlp)
            .predict(&Self::input(states, actions))
            .into_data()
    }

    /// `target ← polyak·target + (1 − polyak)·online`.
    pub fn update_target(&mut self, polyak: f64) {
        if let Some(t) = self.target.as_mut() {
            t.soft_update_from(&self.mlp, polyak);
        }
    }
}
