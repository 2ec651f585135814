use rand::Rng;
use serde::{Deserialize, Serialize};

use super::kernels::{axpy, gemm};
use super::NnError;
use crate::Scalar;

#[inline]
pub fn silu<T: Scalar>(x: T) -> T {
    x * x.sigmoid()
}

#[inline]
pub fn silu_grad<T: Scalar>(x: T) -> T {
    let s = x.sigmoid();
    s * (T::one() + x * (T::one() - s))
}

/// Fully connected network: SiLU on hidden layers, identity output.
///
/// Parameters live in one flat buffer. Layer `l` stores its weight as an
/// `in × out` row-major block followed by its `out` biases, so the forward pass
/// is one row-major matrix product per layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp<T> {
    widths: Vec<usize>,
    params: Vec<T>,
}

/// Activations recorded by [`Mlp::forward_train`] for the backward pass.
#[derive(Debug, Clone)]
pub struct Tape<T> {
    batch: usize,
    input: Vec<T>,
    /// Pre-activations of every layer, output layer included.
    pre: Vec<Vec<T>>,
}

impl<T> Tape<T> {
    pub fn batch(&self) -> usize {
        self.batch
    }

    /// Network output, `batch × out` row-major.
    pub fn output(&self) -> &[T] {
        self.pre.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

fn param_count(widths: &[usize]) -> usize {
    widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl<T: Scalar> Mlp<T> {
    /// Kaiming-uniform weights (bound `sqrt(6 / fan_in)`) and zero biases.
    pub fn new<R: Rng + ?Sized>(widths: &[usize], rng: &mut R) -> Self {
        let mut net = Self::zeros(widths);
        for l in 0..net.n_layers() {
            let bound = (6.0 / widths[l] as f64).sqrt();
            for w in net.weight_mut(l) {
                *w = T::of(rng.random_range(-bound..=bound));
            }
        }
        net
    }

    pub fn zeros(widths: &[usize]) -> Self {
        assert!(
            widths.len() >= 2,
            "an MLP needs at least input and output widths"
        );
        assert!(
            widths.iter().all(|&w| w > 0),
            "layer widths must be positive"
        );
        Self {
            widths: widths.to_vec(),
            params: vec![T::zero(); param_count(widths)],
        }
    }

    pub fn from_params(widths: &[usize], params: Vec<T>) -> Result<Self, NnError> {
        let expected = param_count(widths);
        if params.len() != expected {
            return Err(NnError::ShapeMismatch {
                expected,
                found: params.len(),
            });
        }
        Ok(Self {
            widths: widths.to_vec(),
            params,
        })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn n_layers(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    fn offset(&self, layer: usize) -> usize {
        param_count(&self.widths[..=layer])
    }

    pub fn weight(&self, layer: usize) -> &[T] {
        let o = self.offset(layer);
        &self.params[o..o + self.widths[layer] * self.widths[layer + 1]]
    }

    pub fn weight_mut(&mut self, layer: usize) -> &mut [T] {
        let o = self.offset(layer);
        let n = self.widths[layer] * self.widths[layer + 1];
        &mut self.params[o..o + n]
    }

    pub fn bias(&self, layer: usize) -> &[T] {
        let o = self.offset(layer) + self.widths[layer] * self.widths[layer + 1];
        &self.params[o..o + self.widths[layer + 1]]
    }

    pub fn bias_mut(&mut self, layer: usize) -> &mut [T] {
        let o = self.offset(layer) + self.widths[layer] * self.widths[layer + 1];
        let n = self.widths[layer + 1];
        &mut self.params[o..o + n]
    }

    fn affine(&self, layer: usize, x: &[T], batch: usize) -> Vec<T> {
        let (n_in, n_out) = (self.widths[layer], self.widths[layer + 1]);
        let (w, b) = (self.weight(layer), self.bias(layer));
        let mut out = Vec::with_capacity(batch * n_out);
        for _ in 0..batch {
            out.extend_from_slice(b);
        }
        gemm(
            batch,
            n_in,
            n_out,
            T::one(),
            x,
            false,
            w,
            false,
            T::one(),
            &mut out,
        );
        out
    }

    fn check_input(&self, x: &[T], batch: usize) -> Result<(), NnError> {
        if x.len() != batch * self.input_width() {
            return Err(NnError::WidthMismatch {
                expected: batch * self.input_width(),
                found: x.len(),
            });
        }
        Ok(())
    }

    /// Forward pass of a single input row.
    pub fn forward(&self, x: &[T]) -> Result<Vec<T>, NnError> {
        self.forward_batch(x, 1)
    }

    /// Forward pass over `batch` rows stored row-major.
    pub fn forward_batch(&self, x: &[T], batch: usize) -> Result<Vec<T>, NnError> {
        self.check_input(x, batch)?;
        let mut h = self.affine(0, x, batch);
        for l in 1..self.n_layers() {
            h.iter_mut().for_each(|v| *v = silu(*v));
            h = self.affine(l, &h, batch);
        }
        Ok(h)
    }

    /// Forward pass that keeps the activations needed by [`Mlp::backward`].
    pub fn forward_train(&self, x: &[T], batch: usize) -> Result<Tape<T>, NnError> {
        self.check_input(x, batch)?;
        let mut pre = Vec::with_capacity(self.n_layers());
        pre.push(self.affine(0, x, batch));
        for l in 1..self.n_layers() {
            let act: Vec<T> = pre[l - 1].iter().map(|&v| silu(v)).collect();
            pre.push(self.affine(l, &act, batch));
        }
        Ok(Tape {
            batch,
            input: x.to_vec(),
            pre,
        })
    }

    /// Reverse-mode pass. Accumulates parameter gradients into `grads` (same
    /// layout as [`Mlp::params`]) and returns the gradient w.r.t. the input.
    pub fn backward(
        &self,
        tape: &Tape<T>,
        upstream: &[T],
        grads: &mut [T],
    ) -> Result<Vec<T>, NnError> {
        let batch = tape.batch;
        if upstream.len() != batch * self.output_width() {
            return Err(NnError::ShapeMismatch {
                expected: batch * self.output_width(),
                found: upstream.len(),
            });
        }
        if grads.len() != self.params.len() {
            return Err(NnError::ShapeMismatch {
                expected: self.params.len(),
                found: grads.len(),
            });
        }
        let mut delta = upstream.to_vec();
        for l in (0..self.n_layers()).rev() {
            let (n_in, n_out) = (self.widths[l], self.widths[l + 1]);
            let act_in: Vec<T> = if l == 0 {
                tape.input.clone()
            } else {
                tape.pre[l - 1].iter().map(|&v| silu(v)).collect()
            };
            let off = self.offset(l);
            let (gw, rest) = grads[off..].split_at_mut(n_in * n_out);
            let gb = &mut rest[..n_out];
            for d in delta.chunks(n_out) {
                axpy(T::one(), d, gb);
            }
            // dW += Xᵀ Δ, dX = Δ Wᵀ
            gemm(
                n_in,
                batch,
                n_out,
                T::one(),
                &act_in,
                true,
                &delta,
                false,
                T::one(),
                gw,
            );
            let mut d_in = vec![T::zero(); batch * n_in];
            gemm(
                batch,
                n_out,
                n_in,
                T::one(),
                &delta,
                false,
                self.weight(l),
                true,
                T::zero(),
                &mut d_in,
            );
            if l > 0 {
                for (g, &z) in d_in.iter_mut().zip(&tape.pre[l - 1]) {
                    *g *= silu_grad(z);
                }
            }
            delta = d_in;
        }
        Ok(delta)
    }

    /// Parameter and input gradients of `upstream · f(x)` for a single row.
    pub fn gradients(&self, x: &[T], upstream: &[T]) -> Result<(Vec<T>, Vec<T>), NnError> {
        let tape = self.forward_train(x, 1)?;
        let mut grads = vec![T::zero(); self.params.len()];
        let dx = self.backward(&tape, upstream, &mut grads)?;
        Ok((grads, dx))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::dot;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_layer() {
        let mut net = Mlp::<f64>::zeros(&[3, 3]);
        for i in 0..3 {
            net.weight_mut(0)[i * 3 + i] = 1.0;
        }
        assert_eq!(
            net.forward(&[0.5, -2.0, 7.0]).unwrap(),
            vec![0.5, -2.0, 7.0]
        );
    }

    #[test]
    fn zero_weights_return_bias() {
        let mut net = Mlp::<f64>::zeros(&[2, 4, 2]);
        net.bias_mut(0).copy_from_slice(&[1.0, 2.0, 3.0, 4.0]);
        net.bias_mut(1).copy_from_slice(&[-0.25, 9.0]);
        assert_eq!(net.forward(&[3.0, -1.0]).unwrap(), vec![-0.25, 9.0]);
    }

    #[test]
    fn hand_set_two_layer_net() {
        // W0 = [[1, -1], [2, 0.5]] (in × out), b0 = [0.1, 0.2]; W1 = [[1.5], [-2]], b1 = [0.3]
        let mut net = Mlp::<f64>::zeros(&[2, 2, 1]);
        net.weight_mut(0).copy_from_slice(&[1.0, -1.0, 2.0, 0.5]);
        net.bias_mut(0).copy_from_slice(&[0.1, 0.2]);
        net.weight_mut(1).copy_from_slice(&[1.5, -2.0]);
        net.bias_mut(1).copy_from_slice(&[0.3]);
        let s = |v: f64| v / (1.0 + (-v).exp());
        let h0 = s(1.0 * 1.0 + 0.0 * 2.0 + 0.1);
        let h1 = s(1.0 * -1.0 + 0.0 * 0.5 + 0.2);
        let expected = 1.5 * h0 - 2.0 * h1 + 0.3;
        let got = net.forward(&[1.0, 0.0]).unwrap()[0];
        assert!((got - expected).abs() < 1e-15);
    }

    #[test]
    fn width_mismatch_is_an_error() {
        let net = Mlp::<f64>::zeros(&[3, 2]);
        assert_eq!(
            net.forward(&[1.0, 2.0]),
            Err(NnError::WidthMismatch {
                expected: 3,
                found: 2
            })
        );
    }

    #[test]
    fn linear_layer_gradient_is_outer_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = Mlp::<f64>::new(&[3, 2], &mut rng);
        let x = [0.5, -1.0, 2.0];
        let (g, dx) = net.gradients(&x, &[1.0, 1.0]).unwrap();
        for i in 0..3 {
            for o in 0..2 {
                assert_eq!(g[i * 2 + o], x[i]);
            }
        }
        assert_eq!(&g[6..], &[1.0, 1.0]);
        let w = net.weight(0);
        for i in 0..3 {
            assert!((dx[i] - (w[i * 2] + w[i * 2 + 1])).abs() < 1e-15);
        }
    }

    #[test]
    fn silu_derivative_at_zero_is_half() {
        let mut net = Mlp::<f64>::zeros(&[2, 3, 1]);
        net.weight_mut(1).copy_from_slice(&[1.0, 2.0, 3.0]);
        let (g, _) = net.gradients(&[0.0, 0.0], &[1.0]).unwrap();
        // hidden biases come first after the (zero-gradient) first weight block
        assert_eq!(&g[6..9], &[0.5, 1.0, 1.5]);
    }

    fn finite_difference_check(widths: &[usize], seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = Mlp::<f64>::new(widths, &mut rng);
        for b in 0..net.n_layers() {
            for v in net.bias_mut(b) {
                *v = rng.random_range(-0.5..0.5);
            }
        }
        let batch = 3;
        let x: Vec<f64> = (0..batch * widths[0])
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let up: Vec<f64> = (0..batch * net.output_width())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let objective =
            |n: &Mlp<f64>, x: &[f64]| -> f64 { dot(&n.forward_batch(x, batch).unwrap(), &up) };
        let tape = net.forward_train(&x, batch).unwrap();
        let mut grads = vec![0.0; net.n_params()];
        let dx = net.backward(&tape, &up, &mut grads).unwrap();
        let h = 1e-4;
        for p in 0..net.n_params() {
            let orig = net.params[p];
            net.params[p] = orig + h;
            let fp = objective(&net, &x);
            net.params[p] = orig - h;
            let fm = objective(&net, &x);
            net.params[p] = orig;
            let fd = (fp - fm) / (2.0 * h);
            let err = (fd - grads[p]).abs() / fd.abs().max(grads[p].abs()).max(1e-6);
            assert!(err < 1e-3, "param {p}: fd {fd} vs {}", grads[p]);
        }
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp[i] += h;
            let mut xm = x.clone();
            xm[i] -= h;
            let fd = (objective(&net, &xp) - objective(&net, &xm)) / (2.0 * h);
            let err = (fd - dx[i]).abs() / fd.abs().max(dx[i].abs()).max(1e-6);
            assert!(err < 1e-3, "input {i}: fd {fd} vs {}", dx[i]);
        }
    }

    #[test]
    fn backprop_matches_central_differences() {
        finite_difference_check(&[4, 6, 5, 3], 1);
        finite_difference_check(&[2, 8, 1], 2);
        finite_difference_check(&[5, 3], 3);
    }

    #[test]
    fn f32_forward_tracks_f64() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net64 = Mlp::<f64>::new(&[4, 8, 2], &mut rng);
        let net32 = Mlp::<f32>::from_params(
            net64.widths(),
            net64.params().iter().map(|&p| p as f32).collect(),
        )
        .unwrap();
        let y64 = net64.forward(&[0.1, 0.2, 0.3, 0.4]).unwrap();
        let y32 = net32.forward(&[0.1, 0.2, 0.3, 0.4]).unwrap();
        for (a, b) in y64.iter().zip(&y32) {
            assert!((a - *b as f64).abs() < 1e-5);
        }
    }
}
