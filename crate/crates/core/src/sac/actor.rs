use rand::Rng;
use rand_distr::StandardNormal;

use super::SacError;
use crate::nn::{Activation, Graph, Mlp, NnError, Param, Tensor, Var};

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;
/// Initial log-std bias. The squashed Gaussian's entropy peaks near σ ≈ 0.8,
/// so starting below that keeps the entropy bonus pushing σ upward.
pub const INIT_LOG_STD: f64 = -1.0;
const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ActionMode {
    Stochastic,
    Deterministic,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolicySample {
    pub action: Vec<f64>,
    /// Absent in deterministic mode.
    pub log_prob: Option<f64>,
}

/// Squashed-Gaussian policy: the body emits `[mean | log_std]`.
#[derive(Clone, Debug)]
pub struct Actor {
    pub mlp: Mlp,
    action_dim: usize,
}

impl Actor {
    pub fn new(
        name: &str,
        state_dim: usize,
        action_dim: usize,
        hidden: &[usize],
        rng: &mut impl Rng,
    ) -> Result<Self, NnError> {
        let dims: Vec<usize> = std::iter::once(state_dim)
            .chain(hidden.iter().copied())
            .chain(std::iter::once(2 * action_dim))
            .collect();
        let mut mlp = Mlp::new(name, &dims, Activation::Tanh, true, rng)?;
        let head = mlp.layers_mut().last_mut().expect("at least one layer");
        head.bias.value.data_mut()[action_dim..].fill(INIT_LOG_STD);
        Ok(Self { mlp, action_dim })
    }

    pub fn state_dim(&self) -> usize {
        self.mlp.input_dim()
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

    /// `(mean, clamped log_std)`, each `[B, action_dim]`.
    pub fn heads(&self, g: &mut Graph, states: Var, frozen: bool) -> (Var, Var) {
        let out = if frozen {
            self.mlp.forward_frozen(g, states)
        } else {
            self.mlp.forward(g, states)
        };
        let mean = g.slice_cols(out, 0, self.action_dim);
        let raw = g.slice_cols(out, self.action_dim, 2 * self.action_dim);
        let log_std = g.clamp(raw, LOG_STD_MIN, LOG_STD_MAX);
        (mean, log_std)
    }

    /// Reparameterized action `tanh(μ + σ·ξ)` and its log-density `[B, 1]`.
    ///
    /// Uses `log(1 − tanh²u) = 2(ln 2 − u − softplus(−2u))` for stability.
    pub fn rsample(
        &self,
        g: &mut Graph,
        states: Var,
        noise: &Tensor,
        frozen: bool,
    ) -> (Var, Var, Var) {
        let (mean, log_std) = self.heads(g, states, frozen);
        let std = g.exp(log_std);
        let xi = g.constant(noise.clone());
        let spread = g.mul(std, xi);
        let u = g.add(mean, spread);
        let action = g.tanh(u);
        let base = g.constant(noise.map(|x| -0.5 * x * x - HALF_LN_2PI - 2.0 * std::f64::consts::LN_2));
        let minus_two_u = g.scale(u, -2.0);
        let sp = g.softplus(minus_two_u);
        let sp2 = g.scale(sp, 2.0);
        let two_u = g.scale(u, 2.0);
        let corr = g.add(two_u, sp2);
        let lp = g.sub(base, log_std);
        let lp = g.add(lp, corr);
        let log_prob = g.sum_cols(lp);
        (action, log_prob, log_std)
    }

    pub fn sample_noise(&self, rows: usize, rng: &mut impl Rng) -> Tensor {
        let data = (0..rows * self.action_dim)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        Tensor::new(vec![rows, self.action_dim], data).expect("shape matches")
    }

    /// Act on one fused state.
    pub fn act(
        &self,
        state: &[f64],
        mode: ActionMode,
        rng: &mut impl Rng,
    ) -> Result<PolicySample, SacError> {
        match mode {
            ActionMode::Deterministic => {
                let mut g = Graph::new();
                let s = g.constant(Tensor::row(state.to_vec()));
                let (mean, _) = self.heads(&mut g, s, true);
                let action: Vec<f64> = g.value(mean).data().iter().map(|m| m.tanh()).collect();
                if action.iter().any(|v| !v.is_finite()) {
                    return Err(SacError::NonFinite("actor output".into()));
                }
                Ok(PolicySample {
                    action,
                    log_prob: None,
                })
            }
            ActionMode::Stochastic => {
                let noise = self.sample_noise(1, rng);
                self.act_with_noise(state, &noise)
            }
        }
    }

    pub fn act_with_noise(&self, state: &[f64], noise: &Tensor) -> Result<PolicySample, SacError> {
        if state.len() != self.state_dim() {
            return Err(SacError::DimensionMismatch {
                expected: self.state_dim(),
                got: state.len(),
            });
        }
        let mut g = Graph::new();
        let s = g.constant(Tensor::row(state.to_vec()));
        let (a, lp, _) = self.rsample(&mut g, s, noise, true);
        let action = g.value(a).data().to_vec();
        let log_prob = g.value(lp).item();
        if !log_prob.is_finite() || action.iter().any(|v| !v.is_finite()) {
            return Err(SacError::NonFinite("actor output".into()));
        }
        Ok(PolicySample {
            action,
            log_prob: Some(log_prob),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use statrs::distribution::{ContinuousCDF, Normal};

    fn actor(state: usize, act: usize) -> Actor {
        Actor::new("actor", state, act, &[8, 8], &mut rng::stream(1, &[1])).unwrap()
    }

    /// Set the last layer so the heads are constant: mean `m`, log_std `ls`.
    fn constant_heads(a: &mut Actor, m: f64, ls: f64) {
        let last = a.mlp.layers_mut().last_mut().unwrap();
        last.weight.value.data_mut().iter_mut().for_each(|w| *w = 0.0);
        let d = last.bias.value.len() / 2;
        for (i, b) in last.bias.value.data_mut().iter_mut().enumerate() {
            *b = if i < d { m } else { ls };
        }
    }

    #[test]
    fn actions_inside_open_interval() {
        let a = actor(4, 3);
        let mut r = rng::stream(2, &[]);
        for _ in 0..200 {
            let s: Vec<f64> = (0..4).map(|_| r.random_range(-3.0..3.0)).collect();
            let p = a.act(&s, ActionMode::Stochastic, &mut r).unwrap();
            assert!(p.action.iter().all(|v| v.abs() < 1.0));
        }
    }

    #[test]
    fn vanishing_std_matches_deterministic() {
        let mut a = actor(2, 2);
        constant_heads(&mut a, 0.3, LOG_STD_MIN);
        let mut r = rng::stream(3, &[]);
        let det = a.act(&[0.1, 0.2], ActionMode::Deterministic, &mut r).unwrap();
        let sto = a.act(&[0.1, 0.2], ActionMode::Stochastic, &mut r).unwrap();
        assert!(det.log_prob.is_none());
        for (x, y) in det.action.iter().zip(&sto.action) {
            // σ = e^-5 ≈ 6.7e-3, a few σ at most
            assert!((x - y).abs() < 0.05);
        }
    }

    #[test]
    fn log_prob_matches_numerical_density() {
        // 1-D probe: density of a = tanh(u), u ~ N(m, s²), from the CDF by differences.
        let (m, ls) = (0.4, -0.7);
        let mut a = actor(1, 1);
        constant_heads(&mut a, m, ls);
        let normal = Normal::new(m, ls.exp()).unwrap();
        for xi in [-1.5, -0.2, 0.0, 0.9, 2.0] {
            let p = a.act_with_noise(&[0.0], &Tensor::row(vec![xi])).unwrap();
            let act = p.action[0];
            let h = 1e-6;
            let cdf = |y: f64| normal.cdf(y.atanh());
            let numeric = ((cdf(act + h) - cdf(act - h)) / (2.0 * h)).ln();
            assert!((numeric - p.log_prob.unwrap()).abs() < 1e-4, "xi {xi}");
        }
    }

    #[test]
    fn wrong_state_width_is_error() {
        let a = actor(3, 1);
        assert!(a.act_with_noise(&[0.0; 2], &Tensor::row(vec![0.0])).is_err());
    }
}
