use crate::error::{Error, Result};
use crate::numeric::{DenseMatrix, ParamTensor};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPS: f64 = 1e-8;

/// Adam with decoupled weight decay. Moment buffers are created on the
/// first step and matched to parameters by position.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub lr: f64,
    pub weight_decay: f64,
    steps: u64,
    m: Vec<DenseMatrix>,
    v: Vec<DenseMatrix>,
}

impl AdamW {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            weight_decay,
            steps: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Updates every parameter from its accumulated gradient. Gradients
    /// are left as they are. Nothing is modified if any gradient is
    /// non-finite.
    pub fn step(&mut self, params: &mut [&mut ParamTensor], names: &[&str]) -> Result<()> {
        for (i, p) in params.iter().enumerate() {
            if !p.grad.all_finite() {
                let name = names.get(i).copied().unwrap_or("?");
                return Err(Error::Numeric(format!("gradient of {name} is not finite")));
            }
        }
        if self.m.is_empty() {
            self.m = params
                .iter()
                .map(|p| DenseMatrix::zeros(p.value.rows(), p.value.cols()))
                .collect();
            self.v = self.m.clone();
        } else if self.m.len() != params.len() {
            return Err(Error::Contract(format!(
                "optimizer tracks {} tensors but was given {}",
                self.m.len(),
                params.len()
            )));
        }
        self.steps += 1;
        let t = self.steps as i32;
        let c1 = 1.0 - BETA1.powi(t);
        let c2 = 1.0 - BETA2.powi(t);
        let decay = 1.0 - self.lr * self.weight_decay;
        for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let g = p.grad.as_slice();
            let w = p.value.as_mut_slice();
            for (((w, &g), m), v) in w.iter_mut().zip(g).zip(m.as_mut_slice()).zip(v.as_mut_slice()) {
                *m = BETA1 * *m + (1.0 - BETA1) * g;
                *v = BETA2 * *v + (1.0 - BETA2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *w = *w * decay - self.lr * m_hat / (v_hat.sqrt() + EPS);
            }
        }
        Ok(())
    }
}
