use rand::Rng;
use rand_distr::StandardNormal;

use crate::nn::{Matrix, ParameterSet};
use crate::real::Real;

/// Affine layer `y = x W + b` with `W` stored as `[in][out]`.
///
/// The input-major layout lets the forward pass skip zero inputs, which is
/// most of a one-hot observation.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: usize,
    pub bias: usize,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    /// Orthogonal weights scaled by `gain`, zero bias.
    pub fn new<T: Real, R: Rng + ?Sized>(
        params: &mut ParameterSet<T>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        gain: f64,
        rng: &mut R,
    ) -> Self {
        let w = orthogonal(in_dim, out_dim, gain, rng);
        let weight = params.add(
            format!("{name}.weight"),
            vec![in_dim, out_dim],
            w.into_iter().map(T::c).collect(),
        );
        let bias = params.add(format!("{name}.bias"), vec![out_dim], vec![T::zero(); out_dim]);
        Self {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    pub fn forward<T: Real>(&self, params: &ParameterSet<T>, x: &Matrix<T>) -> Matrix<T> {
        debug_assert_eq!(x.cols(), self.in_dim);
        let w = &params.tensor(self.weight).value;
        let b = &params.tensor(self.bias).value;
        let out = self.out_dim;
        let mut y = Matrix::zeros(x.rows(), out);
        for r in 0..x.rows() {
            let yr = y.row_mut(r);
            yr.copy_from_slice(b);
            for (i, &xi) in x.row(r).iter().enumerate() {
                if xi == T::zero() {
                    continue;
                }
                for (o, &wv) in yr.iter_mut().zip(&w[i * out..(i + 1) * out]) {
                    *o += xi * wv;
                }
            }
        }
        y
    }

    /// Accumulates parameter gradients for upstream gradient `dy` and returns
    /// the input gradient when `want_dx` is set.
    pub fn backward<T: Real>(
        &self,
        params: &mut ParameterSet<T>,
        x: &Matrix<T>,
        dy: &Matrix<T>,
        want_dx: bool,
    ) -> Option<Matrix<T>> {
        let out = self.out_dim;
        {
            let gw = params.tensor_mut(self.weight);
            gw.touched = true;
            let mut r = 0;
            while r + 4 <= x.rows() {
                let (d0, d1, d2, d3) = (dy.row(r), dy.row(r + 1), dy.row(r + 2), dy.row(r + 3));
                let (x0, x1, x2, x3) = (x.row(r), x.row(r + 1), x.row(r + 2), x.row(r + 3));
                for i in 0..self.in_dim {
                    let (a, b, c, e) = (x0[i], x1[i], x2[i], x3[i]);
                    if a == T::zero() && b == T::zero() && c == T::zero() && e == T::zero() {
                        continue;
                    }
                    let g = &mut gw.grad[i * out..(i + 1) * out];
                    for o in 0..out {
                        g[o] += (a * d0[o] + b * d1[o]) + (c * d2[o] + e * d3[o]);
                    }
                }
                r += 4;
            }
            for r in r..x.rows() {
                let dyr = dy.row(r);
                for (i, &xi) in x.row(r).iter().enumerate() {
                    if xi == T::zero() {
                        continue;
                    }
                    for (g, &d) in gw.grad[i * out..(i + 1) * out].iter_mut().zip(dyr) {
                        *g += xi * d;
                    }
                }
            }
        }
        {
            let gb = params.tensor_mut(self.bias);
            gb.touched = true;
            for r in 0..dy.rows() {
                for (g, &d) in gb.grad.iter_mut().zip(dy.row(r)) {
                    *g += d;
                }
            }
        }
        if !want_dx {
            return None;
        }
        let w = &params.tensor(self.weight).value;
        let mut dx = Matrix::zeros(x.rows(), self.in_dim);
        for r in 0..x.rows() {
            let dyr = dy.row(r);
            for (i, v) in dx.row_mut(r).iter_mut().enumerate() {
                *v = dot(&w[i * out..(i + 1) * out], dyr);
            }
        }
        Some(dx)
    }
}

/// Dot product with eight independent accumulators, so it vectorizes while
/// staying deterministic.
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail: T = ca.remainder().iter().zip(cb.remainder()).map(|(&x, &y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    let s = ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]));
    s + tail
}

/// Stack of `Linear` layers, each followed by tanh.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub in_dim: usize,
}

impl Mlp {
    pub fn new<T: Real, R: Rng + ?Sized>(
        params: &mut ParameterSet<T>,
        name: &str,
        in_dim: usize,
        hidden: &[usize],
        rng: &mut R,
    ) -> Self {
        let mut layers = Vec::with_capacity(hidden.len());
        let mut d = in_dim;
        for (i, &h) in hidden.iter().enumerate() {
            layers.push(Linear::new(
                params,
                &format!("{name}.{i}"),
                d,
                h,
                std::f64::consts::SQRT_2,
                rng,
            ));
            d = h;
        }
        Self { layers, in_dim }
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(self.in_dim, |l| l.out_dim)
    }

    /// Returns every activation: `acts[0]` is the input, `acts[i + 1]` the
    /// output of layer `i`.
    pub fn forward<T: Real>(&self, params: &ParameterSet<T>, x: &Matrix<T>) -> Vec<Matrix<T>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.clone());
        for layer in &self.layers {
            let mut h = layer.forward(params, acts.last().unwrap());
            h.as_mut_slice().iter_mut().for_each(|v| *v = v.tanh());
            acts.push(h);
        }
        acts
    }

    /// Backpropagates `d_out` (gradient wrt the last activation). The input
    /// gradient is never needed, so the first layer skips it.
    pub fn backward<T: Real>(
        &self,
        params: &mut ParameterSet<T>,
        acts: &[Matrix<T>],
        d_out: Matrix<T>,
    ) {
        let mut d = d_out;
        for (i, layer) in self.layers.iter().enumerate().rev() {
            for (g, &y) in d.as_mut_slice().iter_mut().zip(acts[i + 1].as_slice()) {
                *g *= T::one() - y * y;
            }
            match layer.backward(params, &acts[i], &d, i > 0) {
                Some(dx) => d = dx,
                None => break,
            }
        }
    }
}

/// Orthogonal `[rows x cols]` matrix (row-major) times `gain`.
pub fn orthogonal<R: Rng + ?Sized>(rows: usize, cols: usize, gain: f64, rng: &mut R) -> Vec<f64> {
    // Orthonormalize the columns of a tall Gaussian matrix, then transpose
    // back if the requested shape is wide.
    let (tall_r, tall_c) = if rows >= cols { (rows, cols) } else { (cols, rows) };
    let mut q: Vec<Vec<f64>> = (0..tall_c)
        .map(|_| (0..tall_r).map(|_| rng.sample(StandardNormal)).collect())
        .collect();
    for j in 0..tall_c {
        for k in 0..j {
            let (done, rest) = q.split_at_mut(j);
            let dot: f64 = done[k].iter().zip(&rest[0]).map(|(a, b)| a * b).sum();
            for (v, u) in rest[0].iter_mut().zip(&done[k]) {
                *v -= dot * u;
            }
        }
        let norm = q[j].iter().map(|v| v * v).sum::<f64>().sqrt();
        q[j].iter_mut().for_each(|v| *v /= norm);
    }
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            let v = if rows >= cols { q[c][r] } else { q[r][c] };
            out[r * cols + c] = gain * v;
        }
    }
    out
}
