use super::matrix::{dot, Matrix};
use super::DesignMatrix;
use crate::error::{ApeError, Result};

/// Householder QR with column pivoting, `A P = Q R`.
///
/// Rank is declared deficient when the largest remaining partial column norm
/// falls to `n * eps * max_j ||A_j||`. Partial norms are recomputed exactly at
/// every step instead of downdated, which costs the same order as the
/// factorisation itself and avoids the usual cancellation trouble.
#[derive(Debug, Clone)]
pub struct PivotedQr {
    n: usize,
    q: usize,
    /// Householder vectors, `vs[k]` has length `n - k`.
    vs: Vec<Vec<f64>>,
    betas: Vec<f64>,
    /// Upper triangle, column-major `q x q`.
    r: Matrix,
    perm: Vec<usize>,
}

impl PivotedQr {
    pub fn factor(a: &Matrix, labels: &[String]) -> Result<Self> {
        let (n, q) = (a.nrows(), a.ncols());
        let mut w = a.clone();
        let max_norm = (0..q)
            .map(|j| dot(a.col(j), a.col(j)).sqrt())
            .fold(0.0, f64::max);
        let tol = n as f64 * f64::EPSILON * max_norm;
        let mut perm: Vec<usize> = (0..q).collect();
        let mut vs = Vec::with_capacity(q);
        let mut betas = Vec::with_capacity(q);
        let mut r = Matrix::zeros(q, q);

        for k in 0..q {
            let mut best = k;
            let mut best_norm = -1.0;
            for j in k..q {
                let c = &w.col(j)[k.min(n)..];
                let nj = dot(c, c).sqrt();
                if nj > best_norm {
                    best_norm = nj;
                    best = j;
                }
            }
            if k >= n || best_norm <= tol || best_norm == 0.0 {
                let dependent = perm[k..].iter().copied().max().unwrap_or(k);
                let column = labels
                    .get(dependent)
                    .cloned()
                    .unwrap_or_else(|| format!("#{dependent}"));
                return Err(ApeError::Singular { column });
            }
            if best != k {
                perm.swap(k, best);
                // swap whole columns in the working copy and in R's filled rows
                for i in 0..n {
                    let (x, y) = (w.get(i, k), w.get(i, best));
                    w.set(i, k, y);
                    w.set(i, best, x);
                }
                for i in 0..k {
                    let (x, y) = (r.get(i, k), r.get(i, best));
                    r.set(i, k, y);
                    r.set(i, best, x);
                }
            }
            let x0 = w.get(k, k);
            let alpha = if x0 >= 0.0 { -best_norm } else { best_norm };
            let mut v: Vec<f64> = w.col(k)[k..].to_vec();
            v[0] -= alpha;
            let vtv = dot(&v, &v);
            let beta = if vtv > 0.0 { 2.0 / vtv } else { 0.0 };
            r.set(k, k, alpha);
            for j in k + 1..q {
                let cj = &mut w.col_mut(j)[k..];
                let s = beta * dot(&v, cj);
                for (c, vi) in cj.iter_mut().zip(&v) {
                    *c -= s * vi;
                }
                r.set(k, j, cj[0]);
            }
            vs.push(v);
            betas.push(beta);
        }
        Ok(PivotedQr {
            n,
            q,
            vs,
            betas,
            r,
            perm,
        })
    }

    /// Apply `Q^T` in place.
    fn apply_qt(&self, y: &mut [f64]) {
        for (k, (v, &beta)) in self.vs.iter().zip(&self.betas).enumerate() {
            let seg = &mut y[k..];
            let s = beta * dot(v, seg);
            for (c, vi) in seg.iter_mut().zip(v) {
                *c -= s * vi;
            }
        }
    }

    /// Apply `Q` in place.
    fn apply_q(&self, y: &mut [f64]) {
        for (k, (v, &beta)) in self.vs.iter().zip(&self.betas).enumerate().rev() {
            let seg = &mut y[k..];
            let s = beta * dot(v, seg);
            for (c, vi) in seg.iter_mut().zip(v) {
                *c -= s * vi;
            }
        }
    }

    /// Thin `n x q` orthonormal factor.
    pub fn thin_q(&self) -> Matrix {
        let mut qm = Matrix::zeros(self.n, self.q);
        for j in 0..self.q {
            let c = qm.col_mut(j);
            c[j] = 1.0;
            self.apply_q(c);
        }
        qm
    }

    /// Solve `R x = b` by back substitution.
    fn solve_r(&self, b: &mut [f64]) {
        for k in (0..self.q).rev() {
            let mut s = b[k];
            for j in k + 1..self.q {
                s -= self.r.get(k, j) * b[j];
            }
            b[k] = s / self.r.get(k, k);
        }
    }

    /// Least-squares coefficients in the original column order.
    pub fn solve(&self, y: &[f64]) -> Vec<f64> {
        let mut qty = y.to_vec();
        self.apply_qt(&mut qty);
        let mut c = qty[..self.q].to_vec();
        self.solve_r(&mut c);
        let mut coef = vec![0.0; self.q];
        for (k, &p) in self.perm.iter().enumerate() {
            coef[p] = c[k];
        }
        coef
    }

    pub fn perm(&self) -> &[usize] {
        &self.perm
    }

    /// `R^{-1} S R^{-T}` for symmetric `S`, returned in original column order.
    fn sandwich_core(&self, s: &Matrix) -> Matrix {
        let q = self.q;
        let mut x = Matrix::zeros(q, q);
        for j in 0..q {
            let mut c = s.col(j).to_vec();
            self.solve_r(&mut c);
            x.col_mut(j).copy_from_slice(&c);
        }
        let xt = x.transpose();
        let mut t = Matrix::zeros(q, q);
        for j in 0..q {
            let mut c = xt.col(j).to_vec();
            self.solve_r(&mut c);
            t.col_mut(j).copy_from_slice(&c);
        }
        // t currently holds (R^{-1} S R^{-T})^T, which is the same matrix
        let mut v = Matrix::zeros(q, q);
        for a in 0..q {
            for b in 0..q {
                v.set(self.perm[a], self.perm[b], t.get(a, b));
            }
        }
        v
    }
}

#[derive(Debug, Clone)]
pub struct LeastSquaresFit {
    pub coefficients: Vec<f64>,
    pub residuals: Vec<f64>,
    pub fitted: Vec<f64>,
}

pub fn solve_ls(design: &DesignMatrix, y: &[f64]) -> Result<LeastSquaresFit> {
    let a = design.values();
    if y.len() != a.nrows() {
        return Err(ApeError::Shape(format!(
            "y has length {}, design has {} rows",
            y.len(),
            a.nrows()
        )));
    }
    let qr = PivotedQr::factor(a, design.labels())?;
    let coefficients = qr.solve(y);
    let fitted = a.matvec(&coefficients);
    let residuals = y.iter().zip(&fitted).map(|(yi, fi)| yi - fi).collect();
    Ok(LeastSquaresFit {
        coefficients,
        residuals,
        fitted,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HcKind {
    #[default]
    Hc0,
    /// HC0 scaled by `n / (n - q)`.
    Hc1,
}

#[derive(Debug, Clone)]
pub struct SandwichCovariance {
    pub matrix: Matrix,
    pub df_note: String,
}

impl SandwichCovariance {
    pub fn std_errors(&self) -> Vec<f64> {
        (0..self.matrix.ncols())
            .map(|j| self.matrix.get(j, j).max(0.0).sqrt())
            .collect()
    }

    pub fn std_error(&self, j: usize) -> f64 {
        self.matrix.get(j, j).max(0.0).sqrt()
    }
}

/// HC0 coefficient covariance `(X'X)^{-1} (sum_i x_i x_i' u_i^2) (X'X)^{-1}`.
pub fn sandwich_variance(
    design: &DesignMatrix,
    fit: &LeastSquaresFit,
) -> Result<SandwichCovariance> {
    sandwich_variance_with(design, fit, HcKind::Hc0)
}

/// Computed through the QR factor: with `X P = Q R`,
/// `V = P R^{-1} (Q' diag(u^2) Q) R^{-T} P'`, which never forms `X'X`.
pub fn sandwich_variance_with(
    design: &DesignMatrix,
    fit: &LeastSquaresFit,
    kind: HcKind,
) -> Result<SandwichCovariance> {
    let a = design.values();
    let (n, q) = (a.nrows(), a.ncols());
    if fit.residuals.len() != n || fit.coefficients.len() != q {
        return Err(ApeError::Shape("fit does not belong to this design".into()));
    }
    if n <= q {
        return Err(ApeError::Size(format!(
            "sandwich needs n > q, got n={n}, q={q}"
        )));
    }
    let qr = PivotedQr::factor(a, design.labels())?;
    let qm = qr.thin_q();
    let u2: Vec<f64> = fit.residuals.iter().map(|u| u * u).collect();
    let mut s = Matrix::zeros(q, q);
    for a_ in 0..q {
        let ca = qm.col(a_);
        for b in 0..=a_ {
            let cb = qm.col(b);
            let mut acc = 0.0;
            for i in 0..n {
                acc += ca[i] * cb[i] * u2[i];
            }
            s.set(a_, b, acc);
            s.set(b, a_, acc);
        }
    }
    let mut v = qr.sandwich_core(&s);
    let scale = match kind {
        HcKind::Hc0 => 1.0,
        HcKind::Hc1 => n as f64 / (n - q) as f64,
    };
    for a_ in 0..q {
        for b in 0..=a_ {
            let m = 0.5 * (v.get(a_, b) + v.get(b, a_)) * scale;
            v.set(a_, b, m);
            v.set(b, a_, m);
        }
    }
    let df_note = match kind {
        HcKind::Hc0 => "HC0".to_string(),
        HcKind::Hc1 => format!("HC1 (n/(n-q) = {n}/{})", n - q),
    };
    Ok(SandwichCovariance { matrix: v, df_note })
}
