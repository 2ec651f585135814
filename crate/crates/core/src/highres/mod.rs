//! High-resolution conditional flow for the numerical block.
//!
//! Given a low-resolution row, every numerical coordinate starts from the
//! Gaussian of its component, `x_0 = μ(z) + σ(z) ε`, and flows to the data
//! along `x_t = γ_t x_1 + (1 − γ_t) x_0`. The network predicts `f` with
//! `u_t = γ̇_t f`, regressed on `γ̇_t (x_1 − x_0)`. Missing and inflated
//! coordinates are decided by `z` alone and are masked throughout.

mod assemble;
mod schedule;
pub mod transport;

pub use assemble::assemble_mixed;
pub use schedule::{
    d_from_raw, eval_quintic, quintic, raw_for_d, QuinticEval, ScheduleKind, D_FLOOR,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoders::{EncoderSet, SIGMA_MIN};
use crate::nn::{decode_params, encode_params, Mlp, NnError, ParamManifest, TimeEmbedding};
use crate::{Matrix, Scalar};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HighResConfig {
    pub cond_dim: usize,
    pub time_dim: usize,
    pub hidden: Vec<usize>,
    pub schedule_hidden: Vec<usize>,
    pub schedule: ScheduleKind,
}

impl Default for HighResConfig {
    fn default() -> Self {
        Self {
            cond_dim: 64,
            time_dim: 32,
            hidden: vec![256, 256, 256],
            schedule_hidden: vec![64],
            schedule: ScheduleKind::Learned,
        }
    }
}

/// Layout-only description of a model, persisted as JSON next to the weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HighResSpec {
    /// Cardinalities of the full low-resolution row used for conditioning.
    pub low_cardinalities: Vec<usize>,
    pub n_numerical: usize,
    pub config: HighResConfig,
    /// Hash of the encoder set the model was trained against.
    pub encoder_hash: String,
}

/// Per-row source parameters of the coupling and the special-coordinate mask.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceTable<T> {
    pub mu: Matrix<T>,
    pub sigma: Matrix<T>,
    /// `true` for missing or inflated coordinates.
    pub mask: Matrix<bool>,
}

impl<T: Scalar> SourceTable<T> {
    /// Looks up `(μ(z), σ(z))` for every encoded numerical column of `low`.
    pub fn from_low_res(encoders: &EncoderSet, low: &Matrix<u32>) -> Self {
        let (n, kc, kn) = (low.rows(), encoders.n_categorical(), encoders.n_numerical());
        let mut mu = Matrix::zeros(n, kn);
        let mut sigma = Matrix::zeros(n, kn);
        let mut mask = Matrix::filled(n, kn, false);
        for r in 0..n {
            for (i, enc) in encoders.encoders.iter().enumerate() {
                match enc.source_params(low.get(r, kc + i)) {
                    Ok((m, s)) => {
                        mu.set(r, i, T::of(m));
                        sigma.set(r, i, T::of(s));
                    }
                    Err(_) => mask.set(r, i, true),
                }
            }
        }
        Self { mu, sigma, mask }
    }
}

/// `x_0 = μ + σ ε` on ordinary coordinates, 0 on masked ones.
pub fn sample_coupled_source<T: Scalar>(mu: &[T], sigma: &[T], mask: &[bool], eps: &[T]) -> Vec<T> {
    (0..mu.len())
        .map(|i| {
            if mask[i] {
                T::zero()
            } else {
                mu[i] + sigma[i] * eps[i]
            }
        })
        .collect()
}

/// One training example on the guided path.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSample<T> {
    pub x0: Vec<T>,
    pub x1: Vec<T>,
    pub xt: Vec<T>,
    pub eps: Vec<T>,
    pub t: f64,
    pub mask: Vec<bool>,
}

/// Builds `x_t = γ x_1 + (1 − γ) x_0` coordinate-wise for given schedule values.
pub fn make_path_sample<T: Scalar>(
    x1: &[T],
    mu: &[T],
    sigma: &[T],
    mask: &[bool],
    gamma: &[T],
    t: f64,
    eps: &[T],
) -> PathSample<T> {
    let x0 = sample_coupled_source(mu, sigma, mask, eps);
    let xt = (0..x1.len())
        .map(|i| {
            if mask[i] {
                T::zero()
            } else {
                gamma[i] * x1[i] + (T::one() - gamma[i]) * x0[i]
            }
        })
        .collect();
    PathSample {
        x0,
        x1: x1.to_vec(),
        xt,
        eps: eps.to_vec(),
        t,
        mask: mask.to_vec(),
    }
}

/// Euler integration of `dx/dt = v(t, x)` on a uniform grid of `steps` steps.
/// Masked coordinates are never updated.
pub fn integrate<T: Scalar, F>(x: &mut [T], mask: &[bool], steps: usize, mut velocity: F)
where
    F: FnMut(f64, &[T], &mut [T]),
{
    let steps = steps.max(1);
    let h = 1.0 / steps as f64;
    let mut v = vec![T::zero(); x.len()];
    for k in 0..steps {
        velocity(k as f64 * h, x, &mut v);
        for i in 0..x.len() {
            if !mask[i] {
                x[i] += T::of(h) * v[i];
            }
        }
    }
}

/// A batch of training rows for [`HighResModel::loss_with_grads`]. All buffers
/// are row-major with `batch` rows.
#[derive(Debug, Clone, Copy)]
pub struct FlowBatch<'a, T> {
    pub low: &'a [u32],
    pub x1: &'a [T],
    pub mu: &'a [T],
    pub sigma: &'a [T],
    pub mask: &'a [bool],
    pub t: &'a [f64],
    pub eps: &'a [T],
}

impl<T> FlowBatch<'_, T> {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct HighResGrads<T> {
    pub cond: Vec<T>,
    pub schedule: Vec<T>,
    pub field: Vec<T>,
    /// Gradient w.r.t. the raw network outputs `f` of the last evaluated batch.
    pub output: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HighResModel<T> {
    spec: HighResSpec,
    offsets: Vec<usize>,
    /// Conditioning embeddings: row `offsets[j] + c` for category `c` of
    /// low-resolution column `j`; a row's conditioning vector is their sum.
    pub cond: Vec<T>,
    pub schedule: Mlp<T>,
    pub field: Mlp<T>,
    time: TimeEmbedding,
}

fn cumulative(cards: &[usize]) -> Vec<usize> {
    let mut out = vec![0];
    for &c in cards {
        out.push(out.last().unwrap() + c);
    }
    out
}

fn layer_widths(spec: &HighResSpec) -> (Vec<usize>, Vec<usize>) {
    let c = &spec.config;
    let k = spec.n_numerical;
    let mut sched = vec![c.cond_dim];
    sched.extend(&c.schedule_hidden);
    sched.push(3 * k);
    let mut field = vec![2 * k + c.time_dim + c.cond_dim];
    field.extend(&c.hidden);
    field.push(k);
    (sched, field)
}

impl<T: Scalar> HighResModel<T> {
    pub fn new<R: Rng + ?Sized>(
        low_cardinalities: &[usize],
        n_numerical: usize,
        encoder_hash: String,
        config: HighResConfig,
        rng: &mut R,
    ) -> Self {
        assert!(
            n_numerical > 0,
            "the high-resolution model needs a numerical feature"
        );
        let spec = HighResSpec {
            low_cardinalities: low_cardinalities.to_vec(),
            n_numerical,
            config,
            encoder_hash,
        };
        let offsets = cumulative(low_cardinalities);
        let dc = spec.config.cond_dim;
        let scale = 1.0 / (low_cardinalities.len().max(1) as f64).sqrt();
        let cond = (0..offsets.last().unwrap() * dc)
            .map(|_| T::of(scale * rng.sample::<f64, _>(StandardNormal)))
            .collect();
        let (sw, fw) = layer_widths(&spec);
        let mut schedule = Mlp::new(&sw, rng);
        let last = schedule.n_layers() - 1;
        schedule
            .weight_mut(last)
            .iter_mut()
            .for_each(|w| *w = T::zero());
        let k = n_numerical;
        let raw = T::of(raw_for_d(1.0));
        schedule.bias_mut(last)[2 * k..]
            .iter_mut()
            .for_each(|b| *b = raw);
        let field = Mlp::new(&fw, rng);
        let time = TimeEmbedding::new(spec.config.time_dim);
        Self {
            spec,
            offsets,
            cond,
            schedule,
            field,
            time,
        }
    }

    pub fn spec(&self) -> &HighResSpec {
        &self.spec
    }

    pub fn n_numerical(&self) -> usize {
        self.spec.n_numerical
    }

    pub fn n_params(&self) -> usize {
        self.cond.len() + self.schedule.n_params() + self.field.n_params()
    }

    pub fn schedule_kind(&self) -> ScheduleKind {
        self.spec.config.schedule
    }

    pub fn set_schedule_kind(&mut self, kind: ScheduleKind) {
        self.spec.config.schedule = kind;
    }

    pub fn zero_grads(&self) -> HighResGrads<T> {
        HighResGrads {
            cond: vec![T::zero(); self.cond.len()],
            schedule: vec![T::zero(); self.schedule.n_params()],
            field: vec![T::zero(); self.field.n_params()],
            output: Vec::new(),
        }
    }

    /// Conditioning vectors of a batch of low-resolution rows.
    pub fn conditioning(&self, low: &[u32]) -> Vec<T> {
        let j_cols = self.spec.low_cardinalities.len();
        let dc = self.spec.config.cond_dim;
        let batch = low.len() / j_cols.max(1);
        let mut out = vec![T::zero(); batch * dc];
        for b in 0..batch {
            let dst = &mut out[b * dc..(b + 1) * dc];
            for j in 0..j_cols {
                let r = self.offsets[j] + low[b * j_cols + j] as usize;
                crate::nn::axpy(T::one(), &self.cond[r * dc..(r + 1) * dc], dst);
            }
        }
        out
    }

    /// Raw schedule heads `(a, b, raw_d)` for a batch of conditioning vectors.
    fn schedule_heads(&self, cond: &[T], batch: usize) -> Vec<T> {
        self.schedule
            .forward_batch(cond, batch)
            .expect("conditioning width matches")
    }

    fn eval_head(&self, heads: &[T], i: usize, t: f64) -> QuinticEval<T> {
        let k = self.spec.n_numerical;
        match self.spec.config.schedule {
            ScheduleKind::Linear => QuinticEval {
                gamma: T::of(t),
                gamma_dot: T::one(),
                d_gamma: [T::zero(); 3],
                d_gamma_dot: [T::zero(); 3],
            },
            ScheduleKind::Learned => {
                let (d, _) = d_from_raw(heads[2 * k + i]);
                eval_quintic(heads[i], heads[k + i], d, T::of(t))
            }
        }
    }

    /// `(γ_t, γ̇_t)` per numerical feature for one low-resolution row.
    pub fn gamma(&self, low_row: &[u32], t: f64) -> (Vec<T>, Vec<T>) {
        let c = self.conditioning(low_row);
        let heads = self.schedule_heads(&c, 1);
        (0..self.spec.n_numerical)
            .map(|i| {
                let e = self.eval_head(&heads, i, t);
                (e.gamma, e.gamma_dot)
            })
            .unzip()
    }

    fn write_field_input(&self, xt: &[T], mask: &[bool], t: f64, cond: &[T], out: &mut [T]) {
        let k = self.spec.n_numerical;
        let td = self.spec.config.time_dim;
        for i in 0..k {
            out[i] = if mask[i] { T::zero() } else { xt[i] };
            out[k + i] = if mask[i] { T::one() } else { T::zero() };
        }
        self.time.embed_into(T::of(t), &mut out[2 * k..2 * k + td]);
        out[2 * k + td..].copy_from_slice(cond);
    }

    /// Raw network output `f(x_t, x_low, t)` for a batch.
    pub fn field_output(&self, xt: &[T], mask: &[bool], t: &[f64], cond: &[T]) -> Vec<T> {
        let (k, dc) = (self.spec.n_numerical, self.spec.config.cond_dim);
        let w = self.field.input_width();
        let batch = t.len();
        let mut input = vec![T::zero(); batch * w];
        for b in 0..batch {
            self.write_field_input(
                &xt[b * k..(b + 1) * k],
                &mask[b * k..(b + 1) * k],
                t[b],
                &cond[b * dc..(b + 1) * dc],
                &mut input[b * w..(b + 1) * w],
            );
        }
        self.field
            .forward_batch(&input, batch)
            .expect("field input width matches")
    }

    /// Masked flow-matching loss: mean over unmasked coordinates of
    /// `(γ̇ f − γ̇ (x_1 − x_0))²`. Gradients are accumulated into `grads`.
    pub fn loss_with_grads(
        &self,
        batch: &FlowBatch<'_, T>,
        grads: Option<&mut HighResGrads<T>>,
    ) -> Result<T, NnError> {
        let n = batch.len();
        let k = self.spec.n_numerical;
        let j_cols = self.spec.low_cardinalities.len();
        let (dc, td) = (self.spec.config.cond_dim, self.spec.config.time_dim);
        for (len, want) in [
            (batch.low.len(), n * j_cols),
            (batch.x1.len(), n * k),
            (batch.mu.len(), n * k),
            (batch.sigma.len(), n * k),
            (batch.mask.len(), n * k),
            (batch.eps.len(), n * k),
        ] {
            if len != want {
                return Err(NnError::ShapeMismatch {
                    expected: want,
                    found: len,
                });
            }
        }
        let unmasked = batch.mask.iter().filter(|&&m| !m).count();
        if unmasked == 0 {
            if let Some(g) = grads {
                g.output = vec![T::zero(); n * k];
            }
            return Ok(T::zero());
        }
        let cond = self.conditioning(batch.low);
        let learned = self.spec.config.schedule == ScheduleKind::Learned;
        let sched_tape = self.schedule.forward_train(&cond, n)?;
        let heads = sched_tape.output();

        let w = self.field.input_width();
        let mut input = vec![T::zero(); n * w];
        let mut evals = Vec::with_capacity(n * k);
        let mut x0 = vec![T::zero(); n * k];
        for b in 0..n {
            let row = b * k..(b + 1) * k;
            let h = &heads[b * 3 * k..(b + 1) * 3 * k];
            let gamma: Vec<T> = (0..k)
                .map(|i| {
                    let e = self.eval_head(h, i, batch.t[b]);
                    evals.push(e);
                    e.gamma
                })
                .collect();
            let p = make_path_sample(
                &batch.x1[row.clone()],
                &batch.mu[row.clone()],
                &batch.sigma[row.clone()],
                &batch.mask[row.clone()],
                &gamma,
                batch.t[b],
                &batch.eps[row.clone()],
            );
            x0[row.clone()].copy_from_slice(&p.x0);
            self.write_field_input(
                &p.xt,
                &p.mask,
                batch.t[b],
                &cond[b * dc..(b + 1) * dc],
                &mut input[b * w..(b + 1) * w],
            );
        }
        let tape = self.field.forward_train(&input, n)?;
        let f = tape.output();
        let inv_m = T::one() / T::of(unmasked as f64);
        let mut loss = T::zero();
        let mut d_f = vec![T::zero(); n * k];
        let mut d_gamma_dot = vec![T::zero(); n * k];
        let mut delta = vec![T::zero(); n * k];
        for idx in 0..n * k {
            if batch.mask[idx] {
                continue;
            }
            delta[idx] = batch.x1[idx] - x0[idx];
            let gd = evals[idx].gamma_dot;
            let resid = f[idx] - delta[idx];
            let r = gd * resid;
            loss += r * r;
            d_f[idx] = T::two() * r * gd * inv_m;
            d_gamma_dot[idx] = T::two() * r * resid * inv_m;
        }
        let loss = loss / T::of(unmasked as f64);
        let Some(g) = grads else {
            return Ok(loss);
        };
        let d_in = self.field.backward(&tape, &d_f, &mut g.field)?;
        g.output = d_f;
        let mut d_cond = vec![T::zero(); n * dc];
        let mut d_heads = vec![T::zero(); n * 3 * k];
        for b in 0..n {
            let din = &d_in[b * w..(b + 1) * w];
            for (dst, &src) in d_cond[b * dc..(b + 1) * dc]
                .iter_mut()
                .zip(&din[2 * k + td..])
            {
                *dst += src;
            }
            if !learned {
                continue;
            }
            let h = &heads[b * 3 * k..(b + 1) * 3 * k];
            for i in 0..k {
                let idx = b * k + i;
                if batch.mask[idx] {
                    continue;
                }
                // x_t = γ x_1 + (1 − γ) x_0  ⇒  ∂x_t/∂γ = x_1 − x_0
                let dg = din[i] * delta[idx];
                let dgd = d_gamma_dot[idx];
                let e = &evals[idx];
                let (_, dd_draw) = d_from_raw(h[2 * k + i]);
                let dh = &mut d_heads[b * 3 * k..(b + 1) * 3 * k];
                dh[i] += dg * e.d_gamma[0] + dgd * e.d_gamma_dot[0];
                dh[k + i] += dg * e.d_gamma[1] + dgd * e.d_gamma_dot[1];
                dh[2 * k + i] += (dg * e.d_gamma[2] + dgd * e.d_gamma_dot[2]) * dd_draw;
            }
        }
        if learned {
            let d_c_sched = self
                .schedule
                .backward(&sched_tape, &d_heads, &mut g.schedule)?;
            for (a, b) in d_cond.iter_mut().zip(&d_c_sched) {
                *a += *b;
            }
        }
        for b in 0..n {
            for j in 0..j_cols {
                let r = self.offsets[j] + batch.low[b * j_cols + j] as usize;
                crate::nn::axpy(
                    T::one(),
                    &d_cond[b * dc..(b + 1) * dc],
                    &mut g.cond[r * dc..(r + 1) * dc],
                );
            }
        }
        Ok(loss)
    }

    /// Generates the numerical block (modelling scale) for given low-resolution
    /// rows. Masked coordinates are left at 0.
    pub fn sample(
        &self,
        low: &Matrix<u32>,
        source: &SourceTable<T>,
        steps: usize,
        seed: u64,
    ) -> Matrix<T> {
        let n = low.rows();
        let k = self.spec.n_numerical;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let eps: Vec<T> = (0..n * k)
            .map(|_| T::of(rng.sample(StandardNormal)))
            .collect();
        let mut x: Vec<T> = (0..n)
            .flat_map(|r| {
                sample_coupled_source(
                    source.mu.row(r),
                    source.sigma.row(r),
                    source.mask.row(r),
                    &eps[r * k..(r + 1) * k],
                )
            })
            .collect();
        const CHUNK: usize = 256;
        let j_cols = low.cols();
        x.par_chunks_mut(CHUNK * k).enumerate().for_each(|(c, xs)| {
            let start = c * CHUNK;
            let batch = xs.len() / k;
            let low_rows = &low.as_slice()[start * j_cols..(start + batch) * j_cols];
            let mask = &source.mask.as_slice()[start * k..(start + batch) * k];
            let cond = self.conditioning(low_rows);
            let heads = self.schedule_heads(&cond, batch);
            integrate(xs, mask, steps, |t, state, v| {
                let f = self.field_output(state, mask, &vec![t; batch], &cond);
                for b in 0..batch {
                    for i in 0..k {
                        let gd = self
                            .eval_head(&heads[b * 3 * k..(b + 1) * 3 * k], i, t)
                            .gamma_dot;
                        v[b * k + i] = gd * f[b * k + i];
                    }
                }
            });
        });
        Matrix::from_vec(n, k, x).expect("one value per coordinate")
    }

    pub fn export_params(&self) -> (ParamManifest, Vec<u8>) {
        let rows = *self.offsets.last().unwrap();
        encode_params(&[
            (
                "cond",
                vec![rows, self.spec.config.cond_dim],
                &self.cond[..],
            ),
            (
                "schedule",
                vec![self.schedule.n_params()],
                self.schedule.params(),
            ),
            ("field", vec![self.field.n_params()], self.field.params()),
        ])
    }

    pub fn from_params(
        spec: HighResSpec,
        manifest: &ParamManifest,
        bytes: &[u8],
    ) -> Result<Self, NnError> {
        let offsets = cumulative(&spec.low_cardinalities);
        let (sw, fw) = layer_widths(&spec);
        let mut tensors = decode_params::<T>(manifest, bytes)?.into_iter();
        let mut take = |name: &str, len: usize| -> Result<Vec<T>, NnError> {
            match tensors.next() {
                Some((n, _, v)) if n == name && v.len() == len => Ok(v),
                _ => Err(NnError::Format(format!(
                    "expected tensor '{name}' of length {len}"
                ))),
            }
        };
        let cond = take("cond", offsets.last().unwrap() * spec.config.cond_dim)?;
        let schedule = Mlp::from_params(&sw, take("schedule", Mlp::<T>::zeros(&sw).n_params())?)?;
        let field = Mlp::from_params(&fw, take("field", Mlp::<T>::zeros(&fw).n_params())?)?;
        let time = TimeEmbedding::new(spec.config.time_dim);
        Ok(Self {
            spec,
            offsets,
            cond,
            schedule,
            field,
            time,
        })
    }
}

/// Source parameters used by the transport analysis: every non-missing
/// category, inflated ones included, with the floored scale.
pub(crate) fn coupling_params(enc: &crate::encoders::FeatureEncoder, z: u32) -> Option<(f64, f64)> {
    let c = enc.components.get(z as usize)?;
    Some((c.mu, c.sigma.max(SIGMA_MIN)))
}
