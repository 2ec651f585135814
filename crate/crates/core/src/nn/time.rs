use serde::{Deserialize, Serialize};

use crate::Scalar;

/// Sinusoidal embedding of a time in `[0, 1]`.
///
/// `t` is multiplied by `scale` before hitting frequencies `base^(-k / half)`,
/// `k = 0..half`; the output is all sines followed by all cosines.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeEmbedding {
    pub dim: usize,
    pub scale: f64,
    pub base: f64,
}

impl TimeEmbedding {
    pub fn new(dim: usize) -> Self {
        assert!(
            dim >= 2 && dim.is_multiple_of(2),
            "time embedding dimension must be even"
        );
        Self {
            dim,
            scale: 100.0,
            base: 10_000.0,
        }
    }

    pub fn frequency(&self, k: usize) -> f64 {
        self.scale * self.base.powf(-(k as f64) / (self.dim / 2) as f64)
    }

    pub fn embed_into<T: Scalar>(&self, t: T, out: &mut [T]) {
        let half = self.dim / 2;
        let t = t.to_f64_lossy();
        for k in 0..half {
            let a = self.frequency(k) * t;
            out[k] = T::of(a.sin());
            out[half + k] = T::of(a.cos());
        }
    }

    pub fn embed<T: Scalar>(&self, t: T) -> Vec<T> {
        let mut out = vec![T::zero(); self.dim];
        self.embed_into(t, &mut out);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_time() {
        let e = TimeEmbedding::new(8).embed(0.0f64);
        assert_eq!(&e[..4], &[0.0; 4]);
        assert_eq!(&e[4..], &[1.0; 4]);
    }

    #[test]
    fn two_dimensional_case() {
        let te = TimeEmbedding::new(2);
        let w = te.frequency(0);
        assert_eq!(w, 100.0);
        let e = te.embed(0.5f64);
        assert!((e[0] - (w * 0.5).sin()).abs() < 1e-15);
        assert!((e[1] - (w * 0.5).cos()).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn bounded_and_continuous(t in 0.0f64..1.0) {
            let te = TimeEmbedding::new(32);
            let a = te.embed(t);
            let norm = a.iter().map(|v| v * v).sum::<f64>().sqrt();
            prop_assert!(norm <= (32f64).sqrt() + 1e-12);
            let b = te.embed(t + 1e-9);
            let gap = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            prop_assert!(gap < 1e-6);
        }
    }
}
