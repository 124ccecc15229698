use crate::datamodel::Dataset;
use crate::error::{ApeError, Result};
use crate::numkit::Matrix;
use crate::rng::{derive_seed, rng_from, tags};
use rand::Rng as _;
use rand_distr::StandardNormal;

use super::dgp::{derivative_part, systematic_part};

/// First stage `X = r(W) + zeta`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum IvTreatment {
    /// `r(W) = c W`
    Linear(f64),
    /// `r(W) = W + W^2`
    Quadratic,
}

impl IvTreatment {
    pub fn eval(&self, w: f64) -> f64 {
        match *self {
            IvTreatment::Linear(c) => c * w,
            IvTreatment::Quadratic => w + w * w,
        }
    }
}

/// Shape of the outcome coefficients `g_m(Z)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IvOutcome {
    /// `g_m = 1` for every power.
    Constant,
    /// `g_m = Z1 Z2`
    Simple,
    /// `g_m = cos(Z1) sin(Z2)`
    Complex,
}

/// `W, zeta ~ N(0,1)` independent, `Z ~ N(1,1)` (two controls),
/// `eps = rho zeta + sqrt(1 - rho^2) e`, `Y = sum_m X^m g_m(Z) + eps`.
#[derive(Debug, Clone, PartialEq)]
pub struct IvDgpSpec {
    pub treatment: IvTreatment,
    pub outcome: IvOutcome,
    pub m: usize,
    pub rho: f64,
    pub n: usize,
}

impl IvDgpSpec {
    pub fn new(
        treatment: IvTreatment,
        outcome: IvOutcome,
        m: usize,
        rho: f64,
        n: usize,
    ) -> Result<Self> {
        let s = IvDgpSpec {
            treatment,
            outcome,
            m,
            rho,
            n,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(ApeError::Parameter("IV design needs M >= 1".into()));
        }
        if self.n < 2 {
            return Err(ApeError::Parameter(format!(
                "n must be >= 2, got {}",
                self.n
            )));
        }
        if !(self.rho.abs() < 1.0) {
            return Err(ApeError::Parameter(format!(
                "rho must lie in (-1, 1), got {}",
                self.rho
            )));
        }
        if let IvTreatment::Linear(c) = self.treatment {
            if c == 0.0 || !c.is_finite() {
                return Err(ApeError::Parameter(
                    "linear first stage needs a nonzero finite slope".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn g_of(&self, _m: usize, z: &[f64]) -> f64 {
        match self.outcome {
            IvOutcome::Constant => 1.0,
            IvOutcome::Simple => z[0] * z[1],
            IvOutcome::Complex => z[0].cos() * z[1].sin(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct IvDraw {
    /// Carries `W` as the instrument column.
    pub dataset: Dataset,
    pub w: Vec<f64>,
    pub zeta: Vec<f64>,
    pub r_of_w: Vec<f64>,
    pub g_components: Matrix,
    pub ape_contrib: Vec<f64>,
}

pub fn draw_iv(spec: &IvDgpSpec, seed: u64) -> Result<IvDraw> {
    spec.validate()?;
    let n = spec.n;
    let mut wr = rng_from(derive_seed(seed, tags::INSTRUMENT, 0));
    let mut nr = rng_from(derive_seed(seed, tags::NU, 0));
    let mut er = rng_from(derive_seed(seed, tags::EPS, 0));
    let mut cr = rng_from(derive_seed(seed, tags::CONTROLS, 0));
    let s = (1.0 - spec.rho * spec.rho).sqrt();
    let mut z = Matrix::zeros(n, 2);
    let mut g = Matrix::zeros(n, spec.m + 1);
    let (mut w, mut zeta, mut r) = (
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
    );
    let (mut x, mut y, mut ape) = (
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
    );
    let mut grow = vec![0.0; spec.m + 1];
    for i in 0..n {
        let zi = [
            1.0 + cr.sample::<f64, _>(StandardNormal),
            1.0 + cr.sample::<f64, _>(StandardNormal),
        ];
        z.set(i, 0, zi[0]);
        z.set(i, 1, zi[1]);
        let wi: f64 = wr.sample(StandardNormal);
        let ze: f64 = nr.sample(StandardNormal);
        let eps = spec.rho * ze + s * er.sample::<f64, _>(StandardNormal);
        for (m, gv) in grow.iter_mut().enumerate() {
            *gv = spec.g_of(m, &zi);
            g.set(i, m, *gv);
        }
        let ri = spec.treatment.eval(wi);
        let xi = ri + ze;
        w.push(wi);
        zeta.push(ze);
        r.push(ri);
        x.push(xi);
        y.push(systematic_part(xi, &grow) + eps);
        ape.push(derivative_part(xi, &grow));
    }
    let dataset = Dataset::new(y, x, z, Some(w.clone()), None)?;
    Ok(IvDraw {
        dataset,
        w,
        zeta,
        r_of_w: r,
        g_components: g,
        ape_contrib: ape,
    })
}
