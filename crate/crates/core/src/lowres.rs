//! Low-resolution model over the categorical row `(x_cat, z)`.
//!
//! Every column gets a table of unit-norm category embeddings. Training noises
//! the true embeddings at a level `σ(t)` and asks an MLP for per-column class
//! logits; sampling starts from wide Gaussian noise and repeatedly pulls the
//! state toward the probability-weighted mean of the embeddings.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::nn::{decode_params, encode_params, Mlp, NnError, ParamManifest, TimeEmbedding};
use crate::{Matrix, Scalar};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LowResConfig {
    pub embed_dim: usize,
    pub time_dim: usize,
    pub hidden: Vec<usize>,
    pub sigma_min: f64,
    pub sigma_max: f64,
}

impl Default for LowResConfig {
    fn default() -> Self {
        Self {
            embed_dim: 16,
            time_dim: 32,
            hidden: vec![256, 256, 256],
            sigma_min: 0.02,
            sigma_max: 10.0,
        }
    }
}

impl LowResConfig {
    /// Noise level at time `t`: `σ_max` at `t = 0`, `σ_min` at `t = 1`.
    pub fn sigma(&self, t: f64) -> f64 {
        self.sigma_max.powf(1.0 - t) * self.sigma_min.powf(t)
    }

    /// Input scaling that keeps every network input at roughly unit variance.
    pub fn c_in(&self, t: f64) -> f64 {
        let s = self.sigma(t);
        1.0 / (1.0 / self.embed_dim as f64 + s * s).sqrt()
    }
}

/// Layout-only description of a model, persisted as JSON next to the weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LowResSpec {
    pub cardinalities: Vec<usize>,
    pub config: LowResConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LowResModel<T> {
    spec: LowResSpec,
    offsets: Vec<usize>,
    /// Row `offsets[j] + c` holds the embedding of category `c` of column `j`.
    pub embeddings: Vec<T>,
    pub trunk: Mlp<T>,
    time: TimeEmbedding,
}

/// Gradients of the low-resolution loss, laid out like the model parameters.
#[derive(Debug, Clone)]
pub struct LowResGrads<T> {
    pub trunk: Vec<T>,
    pub embeddings: Vec<T>,
}

fn cumulative(cards: &[usize]) -> Vec<usize> {
    let mut offsets = Vec::with_capacity(cards.len() + 1);
    let mut acc = 0;
    offsets.push(0);
    for &c in cards {
        acc += c;
        offsets.push(acc);
    }
    offsets
}

/// Numerically stable softmax in place.
fn softmax_in_place<T: Scalar>(v: &mut [T]) {
    let m = v.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for x in v.iter_mut() {
        *x = (*x - m).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

impl<T: Scalar> LowResModel<T> {
    pub fn new<R: Rng + ?Sized>(
        cardinalities: &[usize],
        config: LowResConfig,
        rng: &mut R,
    ) -> Self {
        assert!(
            !cardinalities.is_empty(),
            "the low-resolution row needs at least one column"
        );
        let offsets = cumulative(cardinalities);
        let total = *offsets.last().unwrap();
        let d = config.embed_dim;
        let embeddings: Vec<T> = (0..total * d)
            .map(|_| T::of(rng.sample(StandardNormal)))
            .collect();
        let mut widths = vec![cardinalities.len() * d + config.time_dim];
        widths.extend(&config.hidden);
        widths.push(total);
        let trunk = Mlp::new(&widths, rng);
        let time = TimeEmbedding::new(config.time_dim);
        let mut model = Self {
            spec: LowResSpec {
                cardinalities: cardinalities.to_vec(),
                config,
            },
            offsets,
            embeddings,
            trunk,
            time,
        };
        model.normalize_embeddings();
        model
    }

    pub fn spec(&self) -> &LowResSpec {
        &self.spec
    }

    pub fn config(&self) -> &LowResConfig {
        &self.spec.config
    }

    pub fn cardinalities(&self) -> &[usize] {
        &self.spec.cardinalities
    }

    pub fn n_columns(&self) -> usize {
        self.spec.cardinalities.len()
    }

    pub fn n_params(&self) -> usize {
        self.trunk.n_params() + self.embeddings.len()
    }

    fn dim(&self) -> usize {
        self.spec.config.embed_dim
    }

    pub fn embedding(&self, column: usize, category: usize) -> &[T] {
        let d = self.dim();
        let r = self.offsets[column] + category;
        &self.embeddings[r * d..(r + 1) * d]
    }

    /// Rescales every embedding row to unit length.
    pub fn normalize_embeddings(&mut self) {
        let d = self.dim();
        for row in self.embeddings.chunks_mut(d) {
            let norm = row.iter().map(|&v| v * v).sum::<T>().sqrt();
            if norm > T::zero() {
                row.iter_mut().for_each(|v| *v /= norm);
            }
        }
    }

    fn input_width(&self) -> usize {
        self.trunk.input_width()
    }

    /// Writes the trunk input for a noisy state `x` (all columns) at time `t`.
    fn write_input(&self, x: &[T], t: f64, out: &mut [T]) {
        let c_in = T::of(self.spec.config.c_in(t));
        let n = x.len();
        for (o, &v) in out[..n].iter_mut().zip(x) {
            *o = c_in * v;
        }
        self.time.embed_into(T::of(t), &mut out[n..]);
    }

    /// Per-column class probabilities for a batch of noisy states.
    pub fn probabilities(&self, x: &[T], t: &[f64]) -> Result<Vec<T>, NnError> {
        let batch = t.len();
        let state = self.n_columns() * self.dim();
        if x.len() != batch * state {
            return Err(NnError::ShapeMismatch {
                expected: batch * state,
                found: x.len(),
            });
        }
        let w = self.input_width();
        let mut input = vec![T::zero(); batch * w];
        for b in 0..batch {
            self.write_input(
                &x[b * state..(b + 1) * state],
                t[b],
                &mut input[b * w..(b + 1) * w],
            );
        }
        let mut out = self.trunk.forward_batch(&input, batch)?;
        let total = self.trunk.output_width();
        for b in 0..batch {
            let row = &mut out[b * total..(b + 1) * total];
            for j in 0..self.n_columns() {
                softmax_in_place(&mut row[self.offsets[j]..self.offsets[j + 1]]);
            }
        }
        Ok(out)
    }

    /// Mean per-column cross-entropy for true rows `rows` (`batch × columns`),
    /// times `t` and embedding noise `noise` (`batch × columns × embed_dim`).
    /// Returns the loss and, when `grads` is given, accumulates its gradient.
    pub fn loss_with_grads(
        &self,
        rows: &[u32],
        t: &[f64],
        noise: &[T],
        grads: Option<&mut LowResGrads<T>>,
    ) -> Result<T, NnError> {
        let batch = t.len();
        let (j_cols, d) = (self.n_columns(), self.dim());
        let state = j_cols * d;
        if rows.len() != batch * j_cols {
            return Err(NnError::ShapeMismatch {
                expected: batch * j_cols,
                found: rows.len(),
            });
        }
        if noise.len() != batch * state {
            return Err(NnError::ShapeMismatch {
                expected: batch * state,
                found: noise.len(),
            });
        }
        let w = self.input_width();
        let mut input = vec![T::zero(); batch * w];
        let mut x = vec![T::zero(); state];
        for b in 0..batch {
            let s = T::of(self.spec.config.sigma(t[b]));
            for j in 0..j_cols {
                let e = self.embedding(j, rows[b * j_cols + j] as usize);
                for k in 0..d {
                    x[j * d + k] = e[k] + s * noise[b * state + j * d + k];
                }
            }
            self.write_input(&x, t[b], &mut input[b * w..(b + 1) * w]);
        }
        let tape = self.trunk.forward_train(&input, batch)?;
        let total = self.trunk.output_width();
        let mut probs = tape.output().to_vec();
        let scale = T::one() / T::of((batch * j_cols) as f64);
        let mut loss = T::zero();
        for b in 0..batch {
            let row = &mut probs[b * total..(b + 1) * total];
            for j in 0..j_cols {
                let seg = &mut row[self.offsets[j]..self.offsets[j + 1]];
                let m = seg.iter().copied().fold(T::neg_infinity(), T::max);
                let lse = m + seg.iter().map(|&v| (v - m).exp()).sum::<T>().ln();
                let c = rows[b * j_cols + j] as usize;
                loss += lse - seg[c];
                // d CE / d logits = softmax − onehot
                for v in seg.iter_mut() {
                    *v = (*v - lse).exp();
                }
                seg[c] -= T::one();
                seg.iter_mut().for_each(|v| *v *= scale);
            }
        }
        if let Some(g) = grads {
            let dx = self.trunk.backward(&tape, &probs, &mut g.trunk)?;
            for b in 0..batch {
                let c_in = T::of(self.spec.config.c_in(t[b]));
                for j in 0..j_cols {
                    let r = self.offsets[j] + rows[b * j_cols + j] as usize;
                    let src = &dx[b * w + j * d..b * w + (j + 1) * d];
                    for (ge, &s) in g.embeddings[r * d..(r + 1) * d].iter_mut().zip(src) {
                        *ge += c_in * s;
                    }
                }
            }
        }
        Ok(loss * scale)
    }

    pub fn zero_grads(&self) -> LowResGrads<T> {
        LowResGrads {
            trunk: vec![T::zero(); self.trunk.n_params()],
            embeddings: vec![T::zero(); self.embeddings.len()],
        }
    }

    /// Draws `n` rows by Euler integration of the embedding-space flow over
    /// `steps` uniform steps.
    pub fn sample(&self, n: usize, steps: usize, seed: u64) -> Matrix<u32> {
        let steps = steps.max(1);
        let (j_cols, d) = (self.n_columns(), self.dim());
        let state = j_cols * d;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s0 = self.spec.config.sigma(0.0);
        let init: Vec<T> = (0..n * state)
            .map(|_| T::of(s0 * rng.sample::<f64, _>(StandardNormal)))
            .collect();
        // read-only cache of the (already unit-norm) embedding tables
        let cache = {
            let mut c = self.clone();
            c.normalize_embeddings();
            c.embeddings
        };
        let h = 1.0 / steps as f64;
        let rate = T::of(h * (self.spec.config.sigma_max / self.spec.config.sigma_min).ln());
        const CHUNK: usize = 256;
        let chunks: Vec<Vec<u32>> = init
            .par_chunks(CHUNK * state)
            .map(|x0| {
                let batch = x0.len() / state;
                let mut x = x0.to_vec();
                let mut out = vec![0u32; batch * j_cols];
                for k in 0..steps {
                    let t = k as f64 * h;
                    let probs = self
                        .probabilities(&x, &vec![t; batch])
                        .expect("state buffer matches the model");
                    let total = self.trunk.output_width();
                    for b in 0..batch {
                        let p = &probs[b * total..(b + 1) * total];
                        for j in 0..j_cols {
                            let seg = &p[self.offsets[j]..self.offsets[j + 1]];
                            debug_assert!(
                                (seg.iter().copied().sum::<T>() - T::one()).abs() < T::of(1e-4)
                            );
                            if k + 1 == steps {
                                let mut arg = 0;
                                for c in 1..seg.len() {
                                    if seg[c] > seg[arg] {
                                        arg = c;
                                    }
                                }
                                out[b * j_cols + j] = arg as u32;
                                continue;
                            }
                            let xs = &mut x[b * state + j * d..b * state + (j + 1) * d];
                            let mut mu = vec![T::zero(); d];
                            for (c, &pc) in seg.iter().enumerate() {
                                let r = self.offsets[j] + c;
                                crate::nn::axpy(pc, &cache[r * d..(r + 1) * d], &mut mu);
                            }
                            for (xv, m) in xs.iter_mut().zip(mu) {
                                *xv += rate * (m - *xv);
                            }
                        }
                    }
                }
                out
            })
            .collect();
        let flat: Vec<u32> = chunks.into_iter().flatten().collect();
        Matrix::from_vec(n, j_cols, flat).expect("one category per column")
    }

    pub fn export_params(&self) -> (ParamManifest, Vec<u8>) {
        let rows = *self.offsets.last().unwrap();
        encode_params(&[
            ("embeddings", vec![rows, self.dim()], &self.embeddings[..]),
            ("trunk", vec![self.trunk.n_params()], self.trunk.params()),
        ])
    }

    pub fn from_params(
        spec: LowResSpec,
        manifest: &ParamManifest,
        bytes: &[u8],
    ) -> Result<Self, NnError> {
        let offsets = cumulative(&spec.cardinalities);
        let total = *offsets.last().unwrap();
        let mut widths =
            vec![spec.cardinalities.len() * spec.config.embed_dim + spec.config.time_dim];
        widths.extend(&spec.config.hidden);
        widths.push(total);
        let mut tensors = decode_params::<T>(manifest, bytes)?.into_iter();
        let mut take = |name: &str, len: usize| -> Result<Vec<T>, NnError> {
            match tensors.next() {
                Some((n, _, v)) if n == name && v.len() == len => Ok(v),
                _ => Err(NnError::Format(format!(
                    "expected tensor '{name}' of length {len}"
                ))),
            }
        };
        let embeddings = take("embeddings", total * spec.config.embed_dim)?;
        let n_trunk = Mlp::<T>::zeros(&widths).n_params();
        let trunk = Mlp::from_params(&widths, take("trunk", n_trunk)?)?;
        let time = TimeEmbedding::new(spec.config.time_dim);
        Ok(Self {
            spec,
            offsets,
            embeddings,
            trunk,
            time,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(cards: &[usize], seed: u64) -> LowResModel<f64> {
        let cfg = LowResConfig {
            embed_dim: 4,
            time_dim: 4,
            hidden: vec![8],
            ..LowResConfig::default()
        };
        LowResModel::new(cards, cfg, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    #[test]
    fn noise_schedule_endpoints() {
        let c = LowResConfig::default();
        assert!((c.sigma(0.0) - 10.0).abs() < 1e-12);
        assert!((c.sigma(1.0) - 0.02).abs() < 1e-15);
        assert!((c.sigma(0.5) - (10.0f64 * 0.02).sqrt()).abs() < 1e-12);
        assert!((c.sigma(0.5) - 0.4472).abs() < 1e-4);
    }

    #[test]
    fn embeddings_are_unit_norm() {
        let m = tiny(&[3, 5], 1);
        for j in 0..2 {
            for c in 0..m.cardinalities()[j] {
                let n: f64 = m.embedding(j, c).iter().map(|v| v * v).sum();
                assert!((n - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn uniform_logits_give_log_cardinality() {
        let mut m = tiny(&[4, 2], 2);
        m.trunk = Mlp::zeros(m.trunk.widths());
        let loss = m
            .loss_with_grads(&[1, 0, 3, 1], &[0.2, 0.9], &[0.3; 16], None)
            .unwrap();
        assert!((loss - (4f64.ln() + 2f64.ln()) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn confident_logits_give_zero_loss() {
        let mut m = tiny(&[3], 3);
        m.trunk = Mlp::zeros(m.trunk.widths());
        m.trunk.bias_mut(1).copy_from_slice(&[1e6, 0.0, 0.0]);
        let loss = m
            .loss_with_grads(&[0, 0], &[0.1, 0.5], &[0.0; 8], None)
            .unwrap();
        assert!(loss.abs() < 1e-12);
    }

    #[test]
    fn matches_scalar_recomputation() {
        // one column, two categories, single-layer trunk with hand-set weights
        let cfg = LowResConfig {
            embed_dim: 2,
            time_dim: 2,
            hidden: vec![],
            ..LowResConfig::default()
        };
        let mut m = LowResModel::<f64>::new(&[2], cfg.clone(), &mut ChaCha8Rng::seed_from_u64(0));
        m.embeddings = vec![1.0, 0.0, 0.0, 1.0];
        m.trunk
            .weight_mut(0)
            .copy_from_slice(&[0.5, -0.5, 0.25, 0.75, 0.1, 0.2, -0.3, 0.4]);
        m.trunk.bias_mut(0).copy_from_slice(&[0.05, -0.05]);
        let (t, eps) = (0.3, [0.2, -0.1]);
        let loss = m.loss_with_grads(&[1], &[t], &eps, None).unwrap();

        let s = 10f64.powf(0.7) * 0.02f64.powf(0.3);
        let c_in = 1.0 / (0.5 + s * s).sqrt();
        let x = [
            c_in * (0.0 + s * 0.2),
            c_in * (1.0 + s * -0.1),
            (100.0 * t).sin(),
            (100.0 * t).cos(),
        ];
        let w = [[0.5, -0.5], [0.25, 0.75], [0.1, 0.2], [-0.3, 0.4]];
        let l0 = 0.05 + (0..4).map(|i| x[i] * w[i][0]).sum::<f64>();
        let l1 = -0.05 + (0..4).map(|i| x[i] * w[i][1]).sum::<f64>();
        let expected = -(l1 - (l0.exp() + l1.exp()).ln());
        assert!((loss - expected).abs() < 1e-12);
    }

    fn fd_check(cards: &[usize], seed: u64) {
        let mut m = tiny(cards, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        let batch = 3;
        let j = cards.len();
        let rows: Vec<u32> = (0..batch * j)
            .map(|i| rng.random_range(0..cards[i % j]) as u32)
            .collect();
        let t: Vec<f64> = (0..batch).map(|_| rng.random()).collect();
        let noise: Vec<f64> = (0..batch * j * 4)
            .map(|_| rng.sample(StandardNormal))
            .collect();
        let mut g = m.zero_grads();
        m.loss_with_grads(&rows, &t, &noise, Some(&mut g)).unwrap();
        let h = 1e-4;
        let check = |fd: f64, an: f64, what: &str| {
            let err = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-7);
            assert!(err < 1e-3, "{what}: fd {fd} vs analytic {an}");
        };
        for p in 0..m.trunk.n_params() {
            let orig = m.trunk.params()[p];
            m.trunk.params_mut()[p] = orig + h;
            let fp = m.loss_with_grads(&rows, &t, &noise, None).unwrap();
            m.trunk.params_mut()[p] = orig - h;
            let fm = m.loss_with_grads(&rows, &t, &noise, None).unwrap();
            m.trunk.params_mut()[p] = orig;
            check((fp - fm) / (2.0 * h), g.trunk[p], "trunk");
        }
        for p in 0..m.embeddings.len() {
            let orig = m.embeddings[p];
            m.embeddings[p] = orig + h;
            let fp = m.loss_with_grads(&rows, &t, &noise, None).unwrap();
            m.embeddings[p] = orig - h;
            let fm = m.loss_with_grads(&rows, &t, &noise, None).unwrap();
            m.embeddings[p] = orig;
            check((fp - fm) / (2.0 * h), g.embeddings[p], "embedding");
        }
    }

    #[test]
    fn gradients_match_central_differences() {
        fd_check(&[3, 2], 1);
        fd_check(&[5], 2);
    }

    #[test]
    fn sampling_is_deterministic_and_in_range() {
        let m = tiny(&[3, 4], 5);
        let a = m.sample(300, 10, 42);
        assert_eq!(a, m.sample(300, 10, 42));
        assert!(a.iter_rows().all(|r| r[0] < 3 && r[1] < 4));
    }

    #[test]
    fn params_round_trip() {
        let m = tiny(&[3, 4], 6);
        let (manifest, bytes) = m.export_params();
        let back = LowResModel::<f64>::from_params(m.spec().clone(), &manifest, &bytes).unwrap();
        assert_eq!(back, m);
        let as32 = LowResModel::<f32>::from_params(m.spec().clone(), &manifest, &bytes).unwrap();
        assert_eq!(as32.embeddings.len(), m.embeddings.len());
    }
}
