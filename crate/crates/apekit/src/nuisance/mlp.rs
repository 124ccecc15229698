//! Fully connected ReLU regression network trained with Adam on shuffled
//! minibatches. Inputs and target are standardised on the training rows.
//! Matrix products go through `matrixmultiply::dgemm`; everything is f64.

use crate::numkit::Matrix;
use crate::rng::{rng_from, Rng};
use rand::Rng as _;

/// Row-major `C = beta C + op(A) op(B)` with `op(A)` of shape `m x k`.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    ta: bool,
    b: &[f64],
    tb: bool,
    beta: f64,
    c: &mut [f64],
) {
    // stored shapes: A is m x k (or k x m when transposed), B is k x n (or n x k)
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: strides above describe dense row-major buffers whose lengths are
    // checked in debug builds; the output does not alias the inputs.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Network parameters. `w[l]` is `dims[l] x dims[l+1]`, row-major.
#[derive(Debug, Clone)]
pub struct Mlp {
    dims: Vec<usize>,
    w: Vec<Vec<f64>>,
    b: Vec<Vec<f64>>,
}

/// Buffers reused across minibatches.
struct Workspace {
    /// post-activation per layer, `acts[0]` is the input batch
    acts: Vec<Vec<f64>>,
    /// pre-activation per layer after the input
    pre: Vec<Vec<f64>>,
    delta: Vec<Vec<f64>>,
}

impl Workspace {
    fn new(dims: &[usize], bsz: usize) -> Self {
        Workspace {
            acts: dims.iter().map(|&d| vec![0.0; d * bsz]).collect(),
            pre: dims.iter().map(|&d| vec![0.0; d * bsz]).collect(),
            delta: dims.iter().map(|&d| vec![0.0; d * bsz]).collect(),
        }
    }
}

impl Mlp {
    /// Glorot-uniform weights, zero biases.
    pub fn init(d_in: usize, layers: usize, width: usize, rng: &mut Rng) -> Mlp {
        let mut dims = vec![d_in];
        dims.extend(std::iter::repeat_n(width, layers));
        dims.push(1);
        let mut w = Vec::new();
        let mut b = Vec::new();
        for l in 0..dims.len() - 1 {
            let lim = (6.0 / (dims[l] + dims[l + 1]) as f64).sqrt();
            w.push(
                (0..dims[l] * dims[l + 1])
                    .map(|_| lim * (2.0 * rng.random::<f64>() - 1.0))
                    .collect(),
            );
            b.push(vec![0.0; dims[l + 1]]);
        }
        Mlp { dims, w, b }
    }

    pub fn n_params(&self) -> usize {
        self.w.iter().chain(&self.b).map(Vec::len).sum()
    }

    /// Layer by layer: weights then biases.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.n_params());
        for l in 0..self.w.len() {
            p.extend_from_slice(&self.w[l]);
            p.extend_from_slice(&self.b[l]);
        }
        p
    }

    pub fn set_params_flat(&mut self, p: &[f64]) {
        let mut o = 0;
        for l in 0..self.w.len() {
            let nw = self.w[l].len();
            self.w[l].copy_from_slice(&p[o..o + nw]);
            o += nw;
            let nb = self.b[l].len();
            self.b[l].copy_from_slice(&p[o..o + nb]);
            o += nb;
        }
    }

    fn forward(&self, ws: &mut Workspace, bsz: usize) {
        let nl = self.w.len();
        for l in 0..nl {
            let (din, dout) = (self.dims[l], self.dims[l + 1]);
            let z = &mut ws.pre[l + 1][..bsz * dout];
            for row in z.chunks_exact_mut(dout) {
                row.copy_from_slice(&self.b[l]);
            }
            gemm(
                bsz,
                din,
                dout,
                &ws.acts[l][..bsz * din],
                false,
                &self.w[l],
                false,
                1.0,
                z,
            );
            let (pre, act) = (&ws.pre[l + 1], &mut ws.acts[l + 1]);
            if l + 1 < nl {
                for (a, &p) in act[..bsz * dout].iter_mut().zip(&pre[..bsz * dout]) {
                    *a = p.max(0.0);
                }
            } else {
                act[..bsz * dout].copy_from_slice(&pre[..bsz * dout]);
            }
        }
    }

    /// Mean of `0.5 (yhat - y)^2` over the batch and its gradient (same layout
    /// as `params_flat`). `x` is the batch, row-major `bsz x d_in`.
    pub fn loss_and_grad(&self, x: &[f64], y: &[f64]) -> (f64, Vec<f64>) {
        let bsz = y.len();
        let mut ws = Workspace::new(&self.dims, bsz);
        ws.acts[0][..x.len()].copy_from_slice(x);
        let mut gw: Vec<Vec<f64>> = self.w.iter().map(|w| vec![0.0; w.len()]).collect();
        let mut gb: Vec<Vec<f64>> = self.b.iter().map(|b| vec![0.0; b.len()]).collect();
        let loss = self.backprop(&mut ws, y, &mut gw, &mut gb);
        let mut g = Vec::with_capacity(self.n_params());
        for l in 0..gw.len() {
            g.extend_from_slice(&gw[l]);
            g.extend_from_slice(&gb[l]);
        }
        (loss, g)
    }

    fn backprop(
        &self,
        ws: &mut Workspace,
        y: &[f64],
        gw: &mut [Vec<f64>],
        gb: &mut [Vec<f64>],
    ) -> f64 {
        let bsz = y.len();
        self.forward(ws, bsz);
        let nl = self.w.len();
        let out = &ws.acts[nl][..bsz];
        let mut loss = 0.0;
        for i in 0..bsz {
            let e = out[i] - y[i];
            loss += 0.5 * e * e;
            ws.delta[nl][i] = e / bsz as f64;
        }
        for l in (0..nl).rev() {
            let (din, dout) = (self.dims[l], self.dims[l + 1]);
            let d = &ws.delta[l + 1][..bsz * dout];
            gemm(
                din,
                bsz,
                dout,
                &ws.acts[l][..bsz * din],
                true,
                d,
                false,
                0.0,
                &mut gw[l],
            );
            gb[l].fill(0.0);
            for row in d.chunks_exact(dout) {
                for (g, v) in gb[l].iter_mut().zip(row) {
                    *g += v;
                }
            }
            if l > 0 {
                let (lo, hi) = ws.delta.split_at_mut(l + 1);
                let dprev = &mut lo[l][..bsz * din];
                gemm(
                    bsz,
                    dout,
                    din,
                    &hi[0][..bsz * dout],
                    false,
                    &self.w[l],
                    true,
                    0.0,
                    dprev,
                );
                for (dp, &p) in dprev.iter_mut().zip(&ws.pre[l][..bsz * din]) {
                    if p <= 0.0 {
                        *dp = 0.0;
                    }
                }
            }
        }
        loss / bsz as f64
    }

    pub fn predict_rows(&self, x: &[f64], nrows: usize) -> Vec<f64> {
        let chunk = 512;
        let mut ws = Workspace::new(&self.dims, chunk);
        let d = self.dims[0];
        let mut out = Vec::with_capacity(nrows);
        let nl = self.w.len();
        for start in (0..nrows).step_by(chunk) {
            let b = chunk.min(nrows - start);
            ws.acts[0][..b * d].copy_from_slice(&x[start * d..(start + b) * d]);
            self.forward(&mut ws, b);
            out.extend_from_slice(&ws.acts[nl][..b]);
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct MlpRegressor {
    net: Mlp,
    x_mean: Vec<f64>,
    x_sd: Vec<f64>,
    y_mean: f64,
    y_sd: f64,
}

fn standardised_rows(z: &Matrix, mean: &[f64], sd: &[f64]) -> Vec<f64> {
    let (n, d) = (z.nrows(), z.ncols());
    let mut x = vec![0.0; n * d];
    for j in 0..d {
        for (i, &v) in z.col(j).iter().enumerate() {
            x[i * d + j] = (v - mean[j]) / sd[j];
        }
    }
    x
}

pub struct MlpConfig {
    pub layers: usize,
    pub width: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch: usize,
}

impl MlpRegressor {
    pub fn fit(z: &Matrix, t: &[f64], cfg: &MlpConfig, seed: u64) -> MlpRegressor {
        let (n, d) = (z.nrows(), z.ncols());
        let stats = |c: &[f64]| {
            let m = c.iter().sum::<f64>() / c.len() as f64;
            let v = c.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / c.len() as f64;
            (m, if v > 0.0 { v.sqrt() } else { 1.0 })
        };
        let (x_mean, x_sd): (Vec<f64>, Vec<f64>) = z.columns().map(stats).unzip();
        let (y_mean, y_sd) = stats(t);
        let xs = standardised_rows(z, &x_mean, &x_sd);
        let ys: Vec<f64> = t.iter().map(|v| (v - y_mean) / y_sd).collect();

        let mut rng = rng_from(seed);
        let mut net = Mlp::init(d, cfg.layers, cfg.width, &mut rng);
        let bsz = cfg.batch.min(n);
        let mut ws = Workspace::new(&net.dims, bsz);
        let mut gw: Vec<Vec<f64>> = net.w.iter().map(|w| vec![0.0; w.len()]).collect();
        let mut gb: Vec<Vec<f64>> = net.b.iter().map(|b| vec![0.0; b.len()]).collect();
        let mut adam = Adam::new(&net, cfg.learning_rate);
        let mut order: Vec<usize> = (0..n).collect();
        let mut yb = vec![0.0; bsz];
        for _ in 0..cfg.epochs {
            for i in (1..n).rev() {
                let j = rng.random_range(0..=i);
                order.swap(i, j);
            }
            for chunk in order.chunks(bsz) {
                let b = chunk.len();
                for (r, &i) in chunk.iter().enumerate() {
                    ws.acts[0][r * d..(r + 1) * d].copy_from_slice(&xs[i * d..(i + 1) * d]);
                    yb[r] = ys[i];
                }
                net.backprop(&mut ws, &yb[..b], &mut gw, &mut gb);
                adam.step(&mut net, &gw, &gb);
            }
        }
        MlpRegressor {
            net,
            x_mean,
            x_sd,
            y_mean,
            y_sd,
        }
    }

    pub fn predict(&self, z: &Matrix) -> Vec<f64> {
        let x = standardised_rows(z, &self.x_mean, &self.x_sd);
        self.net
            .predict_rows(&x, z.nrows())
            .into_iter()
            .map(|v| self.y_mean + self.y_sd * v)
            .collect()
    }
}

struct Adam {
    lr: f64,
    t: i32,
    mw: Vec<Vec<f64>>,
    vw: Vec<Vec<f64>>,
    mb: Vec<Vec<f64>>,
    vb: Vec<Vec<f64>>,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(net: &Mlp, lr: f64) -> Self {
        let z = |v: &Vec<Vec<f64>>| v.iter().map(|x| vec![0.0; x.len()]).collect::<Vec<_>>();
        Adam {
            lr,
            t: 0,
            mw: z(&net.w),
            vw: z(&net.w),
            mb: z(&net.b),
            vb: z(&net.b),
        }
    }

    fn step(&mut self, net: &mut Mlp, gw: &[Vec<f64>], gb: &[Vec<f64>]) {
        self.t += 1;
        let a = self.lr * (1.0 - Self::B2.powi(self.t)).sqrt() / (1.0 - Self::B1.powi(self.t));
        let upd = |p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
            for i in 0..p.len() {
                m[i] = Self::B1 * m[i] + (1.0 - Self::B1) * g[i];
                v[i] = Self::B2 * v[i] + (1.0 - Self::B2) * g[i] * g[i];
                p[i] -= a * m[i] / (v[i].sqrt() + Self::EPS);
            }
        };
        for l in 0..net.w.len() {
            upd(&mut net.w[l], &gw[l], &mut self.mw[l], &mut self.vw[l]);
            upd(&mut net.b[l], &gb[l], &mut self.mb[l], &mut self.vb[l]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = rng_from(11);
        let mut net = Mlp::init(2, 2, 5, &mut rng);
        // nudge biases off zero so no unit sits exactly at the ReLU kink
        let mut p = net.params_flat();
        for v in p.iter_mut() {
            *v += 0.05 * (2.0 * rng.random::<f64>() - 1.0);
        }
        net.set_params_flat(&p);
        let x: Vec<f64> = (0..40).map(|_| 2.0 * rng.random::<f64>() - 1.0).collect();
        let y: Vec<f64> = (0..20)
            .map(|i| (x[2 * i] * 3.0).sin() + x[2 * i + 1])
            .collect();
        let (_, g) = net.loss_and_grad(&x, &y);
        let h = 1e-6;
        for k in 0..p.len() {
            let mut q = p.clone();
            q[k] += h;
            net.set_params_flat(&q);
            let lp = net.loss_and_grad(&x, &y).0;
            q[k] -= 2.0 * h;
            net.set_params_flat(&q);
            let lm = net.loss_and_grad(&x, &y).0;
            let fd = (lp - lm) / (2.0 * h);
            let scale = g[k].abs().max(fd.abs()).max(1e-6);
            assert!(
                (fd - g[k]).abs() / scale < 1e-4,
                "param {k}: analytic {} vs fd {fd}",
                g[k]
            );
        }
    }

    #[test]
    fn training_reduces_loss() {
        let n = 200;
        let mut rng = rng_from(5);
        let zc: Vec<f64> = (0..n).map(|_| 4.0 * rng.random::<f64>() - 2.0).collect();
        let t: Vec<f64> = zc.iter().map(|v| v * v).collect();
        let z = Matrix::from_columns(n, &[zc]).unwrap();
        let cfg = MlpConfig {
            layers: 2,
            width: 16,
            epochs: 200,
            learning_rate: 0.01,
            batch: 32,
        };
        let m = MlpRegressor::fit(&z, &t, &cfg, 1);
        let p = m.predict(&z);
        let mse = p
            .iter()
            .zip(&t)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / n as f64;
        assert!(mse < 0.05, "mse {mse}");
    }
}
