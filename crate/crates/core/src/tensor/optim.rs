use super::{Result, Tensor, TensorError};

/// Adam with bias correction. Moments are allocated lazily on the first
/// step so that one state can follow any fixed list of parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub lr: f64,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(lr: f64) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            lr,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update over `params`, reading each tensor's accumulated gradient.
    /// Tensors without a gradient are treated as having a zero gradient.
    pub fn step(&mut self, params: &mut [&mut Tensor]) -> Result<()> {
        if self.first.is_empty() {
            self.first = params.iter().map(|p| vec![0.0; p.numel()]).collect();
            self.second = self.first.clone();
        }
        if self.first.len() != params.len() {
            return Err(TensorError::LengthMismatch {
                expected: self.first.len(),
                actual: params.len(),
            });
        }
        self.step += 1;
        for (i, p) in params.iter_mut().enumerate() {
            if self.first[i].len() != p.numel() {
                return Err(TensorError::LengthMismatch {
                    expected: self.first[i].len(),
                    actual: p.numel(),
                });
            }
            let Some(grad) = p.grad.take() else { continue };
            adam_update(
                &mut p.data,
                &grad,
                &mut self.first[i],
                &mut self.second[i],
                self.step,
                self.lr,
                self.beta1,
                self.beta2,
                self.epsilon,
            )?;
            p.grad = Some(grad);
        }
        Ok(())
    }
}

/// The raw Adam rule on flat buffers. `step` is 1-based.
#[allow(clippy::too_many_arguments)]
pub fn adam_update(
    params: &mut [f64],
    grads: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    step: u64,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) -> Result<()> {
    let n = params.len();
    for len in [grads.len(), m.len(), v.len()] {
        if len != n {
            return Err(TensorError::LengthMismatch {
                expected: n,
                actual: len,
            });
        }
    }
    let bc1 = 1.0 - beta1.powi(step as i32);
    let bc2 = 1.0 - beta2.powi(step as i32);
    for i in 0..n {
        let g = grads[i];
        m[i] = beta1 * m[i] + (1.0 - beta1) * g;
        v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

/// Reduce-on-plateau for a metric where higher is better.
#[derive(Debug, Clone, PartialEq)]
pub struct PlateauScheduler {
    pub patience: usize,
    pub factor: f64,
    pub min_delta: f64,
    best: f64,
    since_improvement: usize,
}

impl PlateauScheduler {
    pub fn new(patience: usize, factor: f64) -> Result<Self> {
        if patience < 1 {
            return Err(TensorError::InvalidParameter(
                "patience must be >= 1".into(),
            ));
        }
        if !(factor > 0.0 && factor < 1.0) {
            return Err(TensorError::InvalidParameter(format!(
                "factor must be in (0, 1), got {factor}"
            )));
        }
        Ok(Self {
            patience,
            factor,
            min_delta: 0.0,
            best: f64::NEG_INFINITY,
            since_improvement: 0,
        })
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn epochs_since_improvement(&self) -> usize {
        self.since_improvement
    }

    /// Feed one epoch's metric; returns the learning rate to use next.
    pub fn step(&mut self, metric: f64, lr: f64) -> f64 {
        if metric > self.best + self.min_delta {
            self.best = metric;
            self.since_improvement = 0;
            return lr;
        }
        self.since_improvement += 1;
        if self.since_improvement > self.patience {
            self.since_improvement = 0;
            lr * self.factor
        } else {
            lr
        }
    }
}
