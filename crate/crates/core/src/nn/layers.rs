//! Stateless forward and backward kernels for the four layer kinds.
//!
//! Conv weights are laid out `[kernel × in_channels × out_channels]`, dense
//! weights `[inputs × outputs]`. Convolutions are always "same"-padded with
//! `⌊K/2⌋` zeros on the left and `K − 1 − ⌊K/2⌋` on the right, so the output
//! keeps the input's time length.

use super::tensor::{Scalar, Tensor2D};
use crate::error::{Error, Result};

/// Static shape of a convolution kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvShape {
    pub kernel_width: usize,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl ConvShape {
    pub fn weight_len(&self) -> usize {
        self.kernel_width * self.in_channels * self.out_channels
    }

    #[inline]
    fn pad_left(&self) -> usize {
        self.kernel_width / 2
    }

    fn check(&self, input_cols: usize, weights: usize, bias: usize) -> Result<()> {
        if input_cols != self.in_channels {
            return Err(Error::dim(format!(
                "conv expects {} input channels, got {input_cols}",
                self.in_channels
            )));
        }
        if weights != self.weight_len() || bias != self.out_channels {
            return Err(Error::dim(format!(
                "conv {}x{}x{} kernel given {weights} weights and {bias} biases",
                self.kernel_width, self.in_channels, self.out_channels
            )));
        }
        Ok(())
    }
}

/// `out[i] += w · src[i]`.
#[inline]
fn axpy<S: Scalar>(out: &mut [S], w: S, src: &[S]) {
    for (o, &x) in out.iter_mut().zip(src) {
        *o += w * x;
    }
}

/// Dot product with eight independent accumulators so the loop vectorizes;
/// the summation order is fixed, hence deterministic.
#[inline]
fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    let mut lanes = [S::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let mut tail = S::zero();
    for (&x, &y) in ca.remainder().iter().zip(cb.remainder()) {
        tail += x * y;
    }
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            lanes[i] += x[i] * y[i];
        }
    }
    lanes.iter().fold(tail, |acc, &v| acc + v)
}

/// Channel-major copy of `input` with the same-padding zeros in place:
/// channel `c` occupies `[c·(T+K−1), (c+1)·(T+K−1))`.
fn padded_channels<S: Scalar>(input: &Tensor2D<S>, shape: ConvShape) -> Vec<S> {
    let (len, ci) = input.shape();
    let stride = len + shape.kernel_width - 1;
    let pad = shape.pad_left();
    let mut xp = vec![S::zero(); ci * stride];
    for (t, row) in input.data().chunks_exact(ci).enumerate() {
        for (c, &v) in row.iter().enumerate() {
            xp[c * stride + pad + t] = v;
        }
    }
    xp
}

pub fn conv1d_forward<S: Scalar>(
    input: &Tensor2D<S>,
    shape: ConvShape,
    weights: &[S],
    bias: &[S],
) -> Result<Tensor2D<S>> {
    shape.check(input.cols(), weights.len(), bias.len())?;
    if input.rows() == 0 {
        return Err(Error::dim("conv input has zero time steps"));
    }
    let len = input.rows();
    let (k_w, ci, co) = (shape.kernel_width, shape.in_channels, shape.out_channels);
    let stride = len + k_w - 1;
    let xp = padded_channels(input, shape);
    // Accumulate channel-major so every inner loop runs along time.
    let mut acc = vec![S::zero(); co * len];
    for (o, out) in acc.chunks_exact_mut(len).enumerate() {
        out.fill(bias[o]);
        for c in 0..ci {
            let xc = &xp[c * stride..(c + 1) * stride];
            for k in 0..k_w {
                axpy(out, weights[(k * ci + c) * co + o], &xc[k..k + len]);
            }
        }
    }
    let mut out = vec![S::zero(); len * co];
    for (o, col) in acc.chunks_exact(len).enumerate() {
        for (t, &v) in col.iter().enumerate() {
            out[t * co + o] = v;
        }
    }
    Tensor2D::from_vec(len, co, out)
}

/// Accumulates weight and bias gradients for `grad_out` (the gradient with
/// respect to the pre-activation output) and optionally returns the gradient
/// with respect to the input.
pub fn conv1d_backward<S: Scalar>(
    input: &Tensor2D<S>,
    shape: ConvShape,
    weights: &[S],
    grad_out: &Tensor2D<S>,
    grad_weights: &mut [S],
    grad_bias: &mut [S],
    need_input_grad: bool,
) -> Result<Option<Tensor2D<S>>> {
    shape.check(input.cols(), grad_weights.len(), grad_bias.len())?;
    if grad_out.shape() != (input.rows(), shape.out_channels) {
        return Err(Error::dim(format!(
            "conv output gradient {:?} does not match {}x{}",
            grad_out.shape(),
            input.rows(),
            shape.out_channels
        )));
    }
    let len = input.rows();
    let (k_w, ci, co) = (shape.kernel_width, shape.in_channels, shape.out_channels);
    let stride = len + k_w - 1;
    let xp = padded_channels(input, shape);
    let mut dz = vec![S::zero(); co * len];
    for (t, row) in grad_out.data().chunks_exact(co).enumerate() {
        for (o, &g) in row.iter().enumerate() {
            dz[o * len + t] = g;
        }
    }
    let mut dxp = if need_input_grad {
        vec![S::zero(); ci * stride]
    } else {
        Vec::new()
    };
    let ones = vec![S::one(); len];
    for (o, g) in dz.chunks_exact(len).enumerate() {
        grad_bias[o] += dot(g, &ones);
        for c in 0..ci {
            let xc = &xp[c * stride..(c + 1) * stride];
            for k in 0..k_w {
                let wi = (k * ci + c) * co + o;
                grad_weights[wi] += dot(&xc[k..k + len], g);
                if need_input_grad {
                    axpy(&mut dxp[c * stride + k..c * stride + k + len], weights[wi], g);
                }
            }
        }
    }
    if !need_input_grad {
        return Ok(None);
    }
    let pad = shape.pad_left();
    let mut dx = vec![S::zero(); len * ci];
    for (t, row) in dx.chunks_exact_mut(ci).enumerate() {
        for (c, d) in row.iter_mut().enumerate() {
            *d = dxp[c * stride + pad + t];
        }
    }
    Ok(Some(Tensor2D::from_vec(len, ci, dx)?))
}

/// `y = Wᵀx + b` with `W` stored `[inputs × outputs]`.
pub fn dense_forward<S: Scalar>(input: &[S], weights: &[S], bias: &[S]) -> Result<Vec<S>> {
    let n = input.len();
    let m = bias.len();
    if weights.len() != n * m {
        return Err(Error::dim(format!(
            "dense layer with {m} outputs has {} weights, input has {n} values",
            weights.len()
        )));
    }
    let mut y = bias.to_vec();
    for (i, &xv) in input.iter().enumerate() {
        for (o, &wv) in y.iter_mut().zip(&weights[i * m..(i + 1) * m]) {
            *o += xv * wv;
        }
    }
    Ok(y)
}

pub fn dense_backward<S: Scalar>(
    input: &[S],
    weights: &[S],
    grad_out: &[S],
    grad_weights: &mut [S],
    grad_bias: &mut [S],
    need_input_grad: bool,
) -> Result<Option<Vec<S>>> {
    let n = input.len();
    let m = grad_out.len();
    if weights.len() != n * m || grad_weights.len() != n * m || grad_bias.len() != m {
        return Err(Error::dim("dense backward buffers disagree with layer shape"));
    }
    for (b, &g) in grad_bias.iter_mut().zip(grad_out) {
        *b += g;
    }
    for (i, &xv) in input.iter().enumerate() {
        for (acc, &g) in grad_weights[i * m..(i + 1) * m].iter_mut().zip(grad_out) {
            *acc += xv * g;
        }
    }
    if !need_input_grad {
        return Ok(None);
    }
    let dx = (0..n)
        .map(|i| {
            weights[i * m..(i + 1) * m]
                .iter()
                .zip(grad_out)
                .fold(S::zero(), |acc, (&w, &g)| acc + w * g)
        })
        .collect();
    Ok(Some(dx))
}

/// Mean over time for every channel.
pub fn global_avg_pool<S: Scalar>(input: &Tensor2D<S>) -> Result<Vec<S>> {
    if input.rows() == 0 {
        return Err(Error::dim("cannot pool an empty sequence"));
    }
    let c = input.cols();
    let mut out = vec![S::zero(); c];
    for t in 0..input.rows() {
        for (o, &v) in out.iter_mut().zip(input.row(t)) {
            *o += v;
        }
    }
    let inv = S::one() / S::from_usize(input.rows()).unwrap();
    out.iter_mut().for_each(|v| *v = *v * inv);
    Ok(out)
}

pub fn global_avg_pool_backward<S: Scalar>(grad_out: &[S], time_steps: usize) -> Tensor2D<S> {
    let inv = S::one() / S::from_usize(time_steps).unwrap();
    let row: Vec<S> = grad_out.iter().map(|&g| g * inv).collect();
    let mut data = Vec::with_capacity(time_steps * row.len());
    for _ in 0..time_steps {
        data.extend_from_slice(&row);
    }
    Tensor2D::from_vec(time_steps, row.len(), data).expect("pool gradient shape")
}

#[inline]
pub fn leaky_relu_scalar<S: Scalar>(x: S, slope: S) -> S {
    if x >= S::zero() {
        x
    } else {
        slope * x
    }
}

pub fn leaky_relu<S: Scalar>(x: &Tensor2D<S>, slope: S) -> Tensor2D<S> {
    x.map(|v| leaky_relu_scalar(v, slope))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn shape(k: usize, ci: usize, co: usize) -> ConvShape {
        ConvShape {
            kernel_width: k,
            in_channels: ci,
            out_channels: co,
        }
    }

    /// Direct summation over an explicitly zero-padded copy of the input.
    fn conv_oracle(x: &[f64], len: usize, ci: usize, w: &[f64], b: &[f64], k: usize) -> Vec<f64> {
        let co = b.len();
        let pl = k / 2;
        let pr = k - 1 - pl;
        let padded_len = len + pl + pr;
        let mut padded = vec![0.0; padded_len * ci];
        padded[pl * ci..(pl + len) * ci].copy_from_slice(x);
        let mut out = vec![0.0; len * co];
        for t in 0..len {
            for o in 0..co {
                let mut s = b[o];
                for kk in 0..k {
                    for c in 0..ci {
                        s += padded[(t + kk) * ci + c] * w[(kk * ci + c) * co + o];
                    }
                }
                out[t * co + o] = s;
            }
        }
        out
    }

    #[test]
    fn zero_input_passes_bias() {
        let x = Tensor2D::<f32>::zeros(4, 1);
        let y = conv1d_forward(&x, shape(3, 1, 1), &[0.3, -1.0, 2.0], &[0.5]).unwrap();
        assert_eq!(y.data(), &[0.5; 4]);
    }

    #[test]
    fn unit_kernel_is_pointwise_scale() {
        let x = Tensor2D::column(vec![1.0f32, 2.0, 3.0, 4.0]);
        let y = conv1d_forward(&x, shape(1, 1, 1), &[2.0], &[0.0]).unwrap();
        assert_eq!(y.data(), &[2.0, 4.0, 6.0, 8.0]);
    }

    #[test]
    fn box_kernel_same_padding() {
        let x = Tensor2D::column(vec![1.0f32, 2.0, 3.0]);
        let y = conv1d_forward(&x, shape(3, 1, 1), &[1.0, 1.0, 1.0], &[0.0]).unwrap();
        let oracle = conv_oracle(&[1.0, 2.0, 3.0], 3, 1, &[1.0, 1.0, 1.0], &[0.0], 3);
        assert_eq!(oracle, vec![3.0, 6.0, 5.0]);
        assert_eq!(y.data(), &[3.0, 6.0, 5.0]);
    }

    #[test]
    fn conv_matches_direct_summation() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &(len, k, ci, co) in &[(9, 4, 2, 3), (5, 7, 1, 2), (12, 1, 3, 1), (3, 6, 2, 2)] {
            let x: Vec<f64> = (0..len * ci).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let w: Vec<f64> = (0..k * ci * co).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let b: Vec<f64> = (0..co).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let input = Tensor2D::from_vec(len, ci, x.clone()).unwrap();
            let got = conv1d_forward(&input, shape(k, ci, co), &w, &b).unwrap();
            let want = conv_oracle(&x, len, ci, &w, &b, k);
            assert_eq!(got.rows(), len);
            for (g, w) in got.data().iter().zip(&want) {
                assert!((g - w).abs() < 1e-12, "{g} vs {w}");
            }
        }
    }

    #[test]
    fn conv_rejects_channel_mismatch() {
        let x = Tensor2D::<f32>::zeros(4, 2);
        let err = conv1d_forward(&x, shape(3, 1, 1), &[0.0; 3], &[0.0]).unwrap_err();
        assert!(matches!(err, Error::Dimension(_)));
    }

    #[test]
    fn conv_is_linear_without_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f32> = (0..20).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let w: Vec<f32> = (0..5 * 2 * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let s = shape(5, 2, 3);
        let base = conv1d_forward(&Tensor2D::from_vec(10, 2, x.clone()).unwrap(), s, &w, &[0.0; 3]).unwrap();
        let scaled_in: Vec<f32> = x.iter().map(|v| v * 2.5).collect();
        let scaled = conv1d_forward(&Tensor2D::from_vec(10, 2, scaled_in).unwrap(), s, &w, &[0.0; 3]).unwrap();
        for (a, b) in base.data().iter().zip(scaled.data()) {
            assert!((a * 2.5 - b).abs() <= 1e-5 * b.abs().max(1.0));
        }
    }

    #[test]
    fn leaky_relu_definition() {
        assert_eq!(leaky_relu_scalar(0.0f32, 0.01), 0.0);
        assert_eq!(leaky_relu_scalar(2.0f32, 0.01), 2.0);
        assert!((leaky_relu_scalar(-3.0f32, 0.01) + 0.03).abs() < 1e-7);
    }

    #[test]
    fn dense_examples() {
        assert_eq!(
            dense_forward(&[3.0f32, 7.0], &[1.0, 0.0, 0.0, 1.0], &[0.0, 0.0]).unwrap(),
            vec![3.0, 7.0]
        );
        assert_eq!(dense_forward(&[2.0f32, 3.0], &[1.0, 1.0], &[1.0]).unwrap(), vec![6.0]);
        assert!(dense_forward(&[1.0f32, 2.0, 3.0], &[1.0, 1.0], &[1.0]).is_err());
    }

    #[test]
    fn dense_matches_brute_force_dot_products() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let w: Vec<f64> = (0..6).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let b: Vec<f64> = (0..2).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let y = dense_forward(&x, &w, &b).unwrap();
        for j in 0..2 {
            let dot: f64 = (0..3).map(|i| x[i] * w[i * 2 + j]).sum::<f64>() + b[j];
            assert!((y[j] - dot).abs() < 1e-12);
        }
    }

    #[test]
    fn pool_examples() {
        let t = Tensor2D::filled(10, 3, 5.0f32);
        assert_eq!(global_avg_pool(&t).unwrap(), vec![5.0; 3]);
        let t = Tensor2D::column(vec![1.0f32, 3.0]);
        assert_eq!(global_avg_pool(&t).unwrap(), vec![2.0]);

        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let data: Vec<f64> = (0..28).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let t = Tensor2D::from_vec(7, 4, data.clone()).unwrap();
        let pooled = global_avg_pool(&t).unwrap();
        for c in 0..4 {
            let mean = (0..7).map(|r| data[r * 4 + c]).sum::<f64>() / 7.0;
            assert!((pooled[c] - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_backward_input_grad_is_adjoint() {
        // <conv(x), g> without bias equals <x, conv_backward(g)>.
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let s = shape(4, 2, 3);
        let len = 7;
        let x: Vec<f64> = (0..len * 2).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let w: Vec<f64> = (0..s.weight_len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let g: Vec<f64> = (0..len * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let input = Tensor2D::from_vec(len, 2, x.clone()).unwrap();
        let y = conv1d_forward(&input, s, &w, &[0.0; 3]).unwrap();
        let lhs: f64 = y.data().iter().zip(&g).map(|(a, b)| a * b).sum();
        let mut gw = vec![0.0; s.weight_len()];
        let mut gb = vec![0.0; 3];
        let dx = conv1d_backward(
            &input,
            s,
            &w,
            &Tensor2D::from_vec(len, 3, g).unwrap(),
            &mut gw,
            &mut gb,
            true,
        )
        .unwrap()
        .unwrap();
        let rhs: f64 = dx.data().iter().zip(&x).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
        let wdot: f64 = gw.iter().zip(&w).map(|(a, b)| a * b).sum();
        assert!((lhs - wdot).abs() < 1e-12);
    }
}
