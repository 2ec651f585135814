use serde::{Deserialize, Serialize};

use super::NnError;
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

/// Bias-corrected Adam over a list of parameter groups.
///
/// The groups passed to [`Adam::step`] must keep the same order and lengths on
/// every call; their moments are stored back to back.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub config: AdamConfig,
    m: Vec<T>,
    v: Vec<T>,
    step: u64,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig, n_params: usize) -> Self {
        Self {
            config,
            m: vec![T::zero(); n_params],
            v: vec![T::zero(); n_params],
            step: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self) -> &[T] {
        &self.m
    }

    pub fn second_moment(&self) -> &[T] {
        &self.v
    }

    /// One update over every (params, grads) group. Nothing is modified when a
    /// gradient entry is not finite.
    pub fn step(&mut self, groups: &mut [(&mut [T], &[T])]) -> Result<(), NnError> {
        let total: usize = groups.iter().map(|(p, _)| p.len()).sum();
        if total != self.m.len() {
            return Err(NnError::ShapeMismatch {
                expected: self.m.len(),
                found: total,
            });
        }
        for (p, g) in groups.iter() {
            if p.len() != g.len() {
                return Err(NnError::ShapeMismatch {
                    expected: p.len(),
                    found: g.len(),
                });
            }
            if g.iter().any(|x| !x.is_finite()) {
                return Err(NnError::NonFiniteGradient);
            }
        }
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let corr1 = T::one() - T::of(c.beta1.powi(t));
        let corr2 = T::one() - T::of(c.beta2.powi(t));
        let (lr, eps) = (T::of(c.lr), T::of(c.eps));
        let mut k = 0;
        for (p, g) in groups.iter_mut() {
            for (pi, &gi) in p.iter_mut().zip(g.iter()) {
                let m = b1 * self.m[k] + (T::one() - b1) * gi;
                let v = b2 * self.v[k] + (T::one() - b2) * gi * gi;
                self.m[k] = m;
                self.v[k] = v;
                *pi -= lr * (m / corr1) / ((v / corr2).sqrt() + eps);
                k += 1;
            }
        }
        Ok(())
    }
}
