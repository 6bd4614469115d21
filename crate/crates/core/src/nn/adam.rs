use super::{Gradients, NnError, Param, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam moments for an ordered parameter list.
///
/// The list passed to [`Adam::step`] must have the same order and shapes on
/// every call; the first call fixes the layout.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    shapes: Vec<Vec<usize>>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
            shapes: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: Vec<&mut Param>, grads: &Gradients) -> Result<(), NnError> {
        let gs: Vec<Option<Tensor>> = params
            .iter()
            .map(|p| grads.param(p).cloned())
            .collect();
        let refs: Vec<Option<&Tensor>> = gs.iter().map(Option::as_ref).collect();
        self.step_with(params, &refs)
    }

    /// One update with explicit per-parameter gradients; `None` means zero.
    pub fn step_with(
        &mut self,
        mut params: Vec<&mut Param>,
        grads: &[Option<&Tensor>],
    ) -> Result<(), NnError> {
        if params.len() != grads.len() {
            return Err(NnError::ShapeMismatch(format!(
                "{} parameters but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        if self.shapes.is_empty() && self.t == 0 {
            self.shapes = params.iter().map(|p| p.value.shape().to_vec()).collect();
            self.m = params.iter().map(|p| vec![0.0; p.value.len()]).collect();
            self.v = self.m.clone();
        }
        if self.shapes.len() != params.len() {
            return Err(NnError::ShapeMismatch(format!(
                "optimizer tracks {} parameters, got {}",
                self.shapes.len(),
                params.len()
            )));
        }
        for ((p, s), g) in params.iter().zip(&self.shapes).zip(grads) {
            if p.value.shape() != s.as_slice() {
                return Err(NnError::ShapeMismatch(format!(
                    "{}: optimizer shape {:?}, parameter shape {:?}",
                    p.name,
                    s,
                    p.value.shape()
                )));
            }
            if let Some(g) = g {
                if g.shape() != s.as_slice() {
                    return Err(NnError::ShapeMismatch(format!(
                        "{}: gradient shape {:?}, parameter shape {:?}",
                        p.name,
                        g.shape(),
                        s
                    )));
                }
            }
        }

        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for (i, p) in params.iter_mut().enumerate() {
            if !p.trainable() {
                continue;
            }
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let g = grads[i].map(Tensor::data);
            for (j, w) in p.value.data_mut().iter_mut().enumerate() {
                let gj = g.map_or(0.0, |g| g[j]);
                m[j] = beta1 * m[j] + (1.0 - beta1) * gj;
                v[j] = beta2 * v[j] + (1.0 - beta2) * gj * gj;
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                *w -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
