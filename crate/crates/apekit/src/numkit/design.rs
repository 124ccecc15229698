use super::matrix::{quantile_sorted, sorted_copy, Matrix};
use super::DesignMatrix;
use crate::error::{ApeError, Result};

/// Exponent tuples of every monomial in `v` variables with total degree
/// `<= degree`, graded then lexicographically descending: for (x, z) and
/// degree 2 this is 1, x, z, x^2, xz, z^2.
pub fn polynomial_terms(v: usize, degree: usize) -> Vec<Vec<u32>> {
    fn fill(v: usize, left: usize, prefix: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if prefix.len() + 1 == v {
            prefix.push(left as u32);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for a in (0..=left).rev() {
            prefix.push(a as u32);
            fill(v, left - a, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    if v == 0 {
        out.push(Vec::new());
        return out;
    }
    for d in 0..=degree {
        fill(v, d, &mut Vec::with_capacity(v), &mut out);
    }
    out
}

fn monomial_label(names: &[String], e: &[u32]) -> String {
    let parts: Vec<String> = names
        .iter()
        .zip(e)
        .filter(|(_, &p)| p > 0)
        .map(|(nm, &p)| {
            if p == 1 {
                nm.clone()
            } else {
                format!("{nm}^{p}")
            }
        })
        .collect();
    if parts.is_empty() {
        "1".to_string()
    } else {
        parts.join("*")
    }
}

pub fn polynomial_labels(names: &[String], degree: usize) -> Vec<String> {
    polynomial_terms(names.len(), degree)
        .iter()
        .map(|e| monomial_label(names, e))
        .collect()
}

/// Full polynomial expansion of a fixed variable list.
#[derive(Debug, Clone)]
pub struct PolyBasis {
    pub names: Vec<String>,
    pub terms: Vec<Vec<u32>>,
    pub degree: usize,
}

impl PolyBasis {
    pub fn new(names: Vec<String>, degree: usize) -> Result<Self> {
        if degree == 0 {
            return Err(ApeError::Parameter("polynomial degree must be >= 1".into()));
        }
        let terms = polynomial_terms(names.len(), degree);
        Ok(PolyBasis {
            names,
            terms,
            degree,
        })
    }

    pub fn labels(&self) -> Vec<String> {
        self.terms
            .iter()
            .map(|e| monomial_label(&self.names, e))
            .collect()
    }

    /// Evaluate on variables given as columns.
    pub fn design(&self, vars: &[&[f64]]) -> Result<DesignMatrix> {
        if vars.len() != self.names.len() {
            return Err(ApeError::Shape(format!(
                "{} variables for a {}-variable basis",
                vars.len(),
                self.names.len()
            )));
        }
        let n = vars.first().map_or(0, |c| c.len());
        if vars.iter().any(|c| c.len() != n) {
            return Err(ApeError::Shape("variables differ in length".into()));
        }
        // powers[v][p] is column v raised to p
        let powers: Vec<Vec<Vec<f64>>> = vars
            .iter()
            .map(|c| {
                let mut ps = vec![vec![1.0; n]];
                for p in 1..=self.degree {
                    let prev = &ps[p - 1];
                    let next = prev.iter().zip(c.iter()).map(|(a, b)| a * b).collect();
                    ps.push(next);
                }
                ps
            })
            .collect();
        let mut m = Matrix::zeros(n, self.terms.len());
        for (j, e) in self.terms.iter().enumerate() {
            let col = m.col_mut(j);
            col.iter_mut().for_each(|c| *c = 1.0);
            for (v, &p) in e.iter().enumerate() {
                if p > 0 {
                    for (c, w) in col.iter_mut().zip(&powers[v][p as usize]) {
                        *c *= w;
                    }
                }
            }
        }
        DesignMatrix::new(m, self.labels())
    }
}

/// All monomials in `[x, z_1, .., z_K]` up to `degree`, intercept included.
pub fn polynomial_design(x: &[f64], z: &Matrix, degree: usize) -> Result<DesignMatrix> {
    if z.nrows() != x.len() {
        return Err(ApeError::Shape(format!(
            "x has {} rows, z has {}",
            x.len(),
            z.nrows()
        )));
    }
    let mut names = vec!["x".to_string()];
    names.extend((1..=z.ncols()).map(|k| format!("z{k}")));
    let basis = PolyBasis::new(names, degree)?;
    let mut vars: Vec<&[f64]> = vec![x];
    vars.extend(z.columns());
    basis.design(&vars)
}

/// Clamped B-spline basis on one variable, interior knots at empirical quantiles.
#[derive(Debug, Clone)]
pub struct BSplineBasis {
    degree: usize,
    /// Full knot vector: boundary knots repeated `degree + 1` times.
    knots: Vec<f64>,
    lo: f64,
    hi: f64,
}

impl BSplineBasis {
    pub fn fit(values: &[f64], degree: usize, interior: usize) -> Result<Self> {
        if degree == 0 {
            return Err(ApeError::Parameter("spline degree must be >= 1".into()));
        }
        if interior < 2 {
            return Err(ApeError::Parameter("need at least 2 interior knots".into()));
        }
        let s = sorted_copy(values);
        let mut distinct = 1;
        for w in s.windows(2) {
            if w[1] > w[0] {
                distinct += 1;
            }
        }
        if distinct < interior.max(2) {
            return Err(ApeError::Knot(format!(
                "{distinct} distinct values cannot support {interior} knots"
            )));
        }
        let (lo, hi) = (s[0], s[s.len() - 1]);
        let inner: Vec<f64> = (1..=interior)
            .map(|j| quantile_sorted(&s, j as f64 / (interior + 1) as f64))
            .collect();
        let mut prev = lo;
        for &t in &inner {
            if t <= prev || t >= hi {
                return Err(ApeError::Knot(format!(
                    "quantile knots are not strictly inside the data range (tied values near {t})"
                )));
            }
            prev = t;
        }
        let mut knots = vec![lo; degree + 1];
        knots.extend(inner);
        knots.extend(std::iter::repeat_n(hi, degree + 1));
        Ok(BSplineBasis {
            degree,
            knots,
            lo,
            hi,
        })
    }

    pub fn n_basis(&self) -> usize {
        self.knots.len() - self.degree - 1
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// All basis values at `x` (clamped to the training range). Sums to one.
    pub fn eval(&self, x: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.n_basis()];
        let (span, vals) = self.eval_nonzero(x);
        for (r, v) in vals.into_iter().enumerate() {
            out[span - self.degree + r] = v;
        }
        out
    }

    /// Index of the knot span and the `degree + 1` non-zero basis values.
    fn eval_nonzero(&self, x: f64) -> (usize, Vec<f64>) {
        let d = self.degree;
        let t = &self.knots;
        let x = x.clamp(self.lo, self.hi);
        let nb = self.n_basis();
        // largest span with t[span] <= x < t[span+1]; right end folds into the last span
        let span = if x >= self.hi {
            nb - 1
        } else {
            let mut s = d;
            while s + 1 < nb && t[s + 1] <= x {
                s += 1;
            }
            s
        };
        let mut n = vec![0.0; d + 1];
        let mut left = vec![0.0; d + 1];
        let mut right = vec![0.0; d + 1];
        n[0] = 1.0;
        for j in 1..=d {
            left[j] = x - t[span + 1 - j];
            right[j] = t[span + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                let temp = n[r] / (right[r + 1] + left[j - r]);
                n[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            n[j] = saved;
        }
        (span, n)
    }
}

/// Additive spline expansion of several controls sharing one intercept.
/// The first basis function of each variable is dropped for identification.
#[derive(Debug, Clone)]
pub struct AdditiveSplineBasis {
    bases: Vec<BSplineBasis>,
}

impl AdditiveSplineBasis {
    pub fn fit(z: &Matrix, degree: usize, interior: usize) -> Result<Self> {
        let bases = z
            .columns()
            .enumerate()
            .map(|(k, c)| {
                BSplineBasis::fit(c, degree, interior).map_err(|e| match e {
                    ApeError::Knot(m) => ApeError::Knot(format!("control z{}: {m}", k + 1)),
                    other => other,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(AdditiveSplineBasis { bases })
    }

    pub fn ncols(&self) -> usize {
        1 + self.bases.iter().map(|b| b.n_basis() - 1).sum::<usize>()
    }

    pub fn bases(&self) -> &[BSplineBasis] {
        &self.bases
    }

    pub fn labels(&self) -> Vec<String> {
        let mut l = vec!["1".to_string()];
        for (k, b) in self.bases.iter().enumerate() {
            l.extend((1..b.n_basis()).map(|j| format!("bs(z{})_{j}", k + 1)));
        }
        l
    }

    /// Design rows for `z`, which may differ from the training controls.
    pub fn design(&self, z: &Matrix) -> Result<DesignMatrix> {
        if z.ncols() != self.bases.len() {
            return Err(ApeError::Shape(format!(
                "{} controls for a {}-control basis",
                z.ncols(),
                self.bases.len()
            )));
        }
        let n = z.nrows();
        let mut m = Matrix::zeros(n, self.ncols());
        m.col_mut(0).iter_mut().for_each(|v| *v = 1.0);
        let mut offset = 1;
        for (k, b) in self.bases.iter().enumerate() {
            let zc = z.col(k);
            for (i, &zi) in zc.iter().enumerate() {
                let (span, vals) = b.eval_nonzero(zi);
                for (r, v) in vals.into_iter().enumerate() {
                    let j = span - b.degree + r;
                    if j > 0 {
                        m.set(i, offset + j - 1, v);
                    }
                }
            }
            offset += b.n_basis() - 1;
        }
        DesignMatrix::new(m, self.labels())
    }
}

/// Additive B-spline design on the controls with one shared intercept.
pub fn bspline_design(z: &Matrix, spline_degree: usize, knots: usize) -> Result<DesignMatrix> {
    AdditiveSplineBasis::fit(z, spline_degree, knots)?.design(z)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn graded_order_for_two_variables() {
        let x = [2.0, 3.0];
        let z = Matrix::from_columns(2, &[vec![5.0, 7.0]]).unwrap();
        let d = polynomial_design(&x, &z, 2).unwrap();
        assert_eq!(d.labels(), &["1", "x", "z1", "x^2", "x*z1", "z1^2"]);
        assert_eq!(d.values().row(1), vec![1.0, 3.0, 7.0, 9.0, 21.0, 49.0]);
    }

    #[test]
    fn three_variable_cubic_has_twenty_columns() {
        let x = [1.0; 4];
        let z = Matrix::from_columns(4, &[vec![1.0; 4], vec![2.0; 4]]).unwrap();
        assert_eq!(polynomial_design(&x, &z, 3).unwrap().ncols(), 20);
    }

    #[test]
    fn degree_zero_rejected() {
        let z = Matrix::zeros(3, 1);
        assert!(matches!(
            polynomial_design(&[1.0, 2.0, 3.0], &z, 0),
            Err(ApeError::Parameter(_))
        ));
    }

    #[test]
    fn constant_control_is_knot_error() {
        let z = Matrix::from_columns(10, &[vec![4.0; 10]]).unwrap();
        assert!(matches!(bspline_design(&z, 3, 5), Err(ApeError::Knot(_))));
    }

    #[test]
    fn two_controls_no_cross_terms() {
        let a: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let b: Vec<f64> = (0..50).map(|i| ((i * 37) % 50) as f64 * 0.1).collect();
        let z = Matrix::from_columns(50, &[a, b]).unwrap();
        let d = bspline_design(&z, 3, 4).unwrap();
        assert_eq!(d.ncols(), 1 + 7 + 7);
        assert!(d
            .labels()
            .iter()
            .all(|l| !l.contains("z1") || !l.contains("z2")));
    }
}
