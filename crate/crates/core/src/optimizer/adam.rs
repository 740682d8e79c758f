use serde::{Deserialize, Serialize};

use crate::differentiation::{GradientVector, ParamVector};
use crate::error::{Error, Result};

/// Bias-corrected Adam moments for a flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(len: usize, lr: f64) -> Self {
        Self {
            first_moment: vec![0.0; len],
            second_moment: vec![0.0; len],
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn len(&self) -> usize {
        self.first_moment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.first_moment.is_empty()
    }

    /// Applies one update to `x` in place.
    pub fn update(&mut self, x: &mut [f64], grad: &[f64]) -> Result<()> {
        if x.len() != self.len() || grad.len() != self.len() {
            return Err(Error::invalid(format!(
                "Adam state has {} entries, got {} parameters and {} gradients",
                self.len(),
                x.len(),
                grad.len()
            )));
        }
        if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite {
                term: "gradient".into(),
                location: format!("coordinate {i}"),
            });
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (((xi, gi), m), v) in x
            .iter_mut()
            .zip(grad)
            .zip(self.first_moment.iter_mut())
            .zip(self.second_moment.iter_mut())
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * gi;
            *v = self.beta2 * *v + (1.0 - self.beta2) * gi * gi;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *xi -= self.lr * m_hat / (v_hat.sqrt() + self.epsilon);
        }
        Ok(())
    }
}

/// One Adam step on a structured parameter vector.
pub fn adam_step(params: &ParamVector, grads: &GradientVector, state: &mut AdamState) -> Result<ParamVector> {
    if params.layout() != grads.layout() {
        return Err(Error::invalid("parameter and gradient layouts differ"));
    }
    if let Some(i) = grads.values().iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite {
            term: "gradient".into(),
            location: format!("{:?}", params.layout().classify(i)),
        });
    }
    let mut out = params.clone();
    state.update(out.values_mut(), grads.values())?;
    Ok(out)
}
