use crate::distributions::split_call;
use crate::error::{ApeError, Result};
use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, PartialEq)]
pub enum LearnerKind {
    PolyRidge {
        degree: usize,
        lambda: f64,
    },
    SplineAdditive {
        degree: usize,
        knots: usize,
    },
    Gbt {
        trees: usize,
        depth: usize,
        learning_rate: f64,
        min_leaf: usize,
    },
    Mlp {
        layers: usize,
        width: usize,
        epochs: usize,
        learning_rate: f64,
        batch: usize,
    },
}

/// A learner and its seed. The cross-fit engine overrides the seed per fold.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnerSpec {
    pub kind: LearnerKind,
    pub seed: u64,
}

impl LearnerSpec {
    pub fn new(kind: LearnerKind) -> Self {
        LearnerSpec { kind, seed: 0 }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        LearnerSpec {
            kind: self.kind.clone(),
            seed,
        }
    }

    pub fn poly(degree: usize, lambda: f64) -> Self {
        Self::new(LearnerKind::PolyRidge { degree, lambda })
    }

    pub fn gbt(trees: usize, depth: usize, learning_rate: f64, min_leaf: usize) -> Self {
        Self::new(LearnerKind::Gbt {
            trees,
            depth,
            learning_rate,
            min_leaf,
        })
    }

    pub fn mlp(
        layers: usize,
        width: usize,
        epochs: usize,
        learning_rate: f64,
        batch: usize,
    ) -> Self {
        Self::new(LearnerKind::Mlp {
            layers,
            width,
            epochs,
            learning_rate,
            batch,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(ApeError::Parameter(format!("{self}: {what}")));
        match self.kind {
            LearnerKind::PolyRidge { degree, lambda } => {
                if degree == 0 {
                    return bad("degree must be >= 1");
                }
                if !(lambda >= 0.0 && lambda.is_finite()) {
                    return bad("lambda must be >= 0");
                }
            }
            LearnerKind::SplineAdditive { degree, knots } => {
                if degree == 0 || knots < 2 {
                    return bad("need degree >= 1 and knots >= 2");
                }
            }
            LearnerKind::Gbt {
                trees,
                depth,
                learning_rate,
                min_leaf,
            } => {
                if trees == 0
                    || depth == 0
                    || min_leaf == 0
                    || !(learning_rate > 0.0 && learning_rate.is_finite())
                {
                    return bad("all hyperparameters must be positive");
                }
            }
            LearnerKind::Mlp {
                layers,
                width,
                epochs,
                learning_rate,
                batch,
            } => {
                if layers == 0
                    || width == 0
                    || epochs == 0
                    || batch == 0
                    || !(learning_rate > 0.0 && learning_rate.is_finite())
                {
                    return bad("all hyperparameters must be positive");
                }
            }
        }
        Ok(())
    }
}

impl fmt::Display for LearnerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            LearnerKind::PolyRidge { degree, lambda } => {
                write!(f, "poly(degree={degree},lambda={lambda})")
            }
            LearnerKind::SplineAdditive { degree, knots } => {
                write!(f, "spline(degree={degree},knots={knots})")
            }
            LearnerKind::Gbt {
                trees,
                depth,
                learning_rate,
                min_leaf,
            } => {
                write!(
                    f,
                    "gbt(trees={trees},depth={depth},lr={learning_rate},min_leaf={min_leaf})"
                )
            }
            LearnerKind::Mlp {
                layers,
                width,
                epochs,
                learning_rate,
                batch,
            } => {
                write!(f, "mlp(layers={layers},width={width},epochs={epochs},lr={learning_rate},batch={batch})")
            }
        }
    }
}

impl FromStr for LearnerSpec {
    type Err = ApeError;

    /// Keys may appear in any order; omitted keys take the defaults shown by
    /// `Display` on [`LearnerSpec::default_for`].
    fn from_str(s: &str) -> Result<Self> {
        let bad = |why: String| ApeError::Parameter(format!("cannot parse learner `{s}`: {why}"));
        let (name, args) =
            split_call(s).ok_or_else(|| bad("expected name(key=value,..)".into()))?;
        let mut spec = LearnerSpec::default_for(name)
            .ok_or_else(|| bad(format!("unknown learner `{name}`")))?;
        for a in args {
            let (k, v) = a
                .split_once('=')
                .ok_or_else(|| bad(format!("`{a}` is not key=value")))?;
            let (k, v) = (k.trim(), v.trim());
            let int = || {
                v.parse::<usize>()
                    .map_err(|_| bad(format!("`{k}` needs an integer")))
            };
            let real = || {
                v.parse::<f64>()
                    .map_err(|_| bad(format!("`{k}` needs a number")))
            };
            if k == "seed" {
                spec.seed = v
                    .parse()
                    .map_err(|_| bad("`seed` needs an unsigned integer".into()))?;
                continue;
            }
            match (&mut spec.kind, k) {
                (LearnerKind::PolyRidge { degree, .. }, "degree") => *degree = int()?,
                (LearnerKind::PolyRidge { lambda, .. }, "lambda") => *lambda = real()?,
                (LearnerKind::SplineAdditive { degree, .. }, "degree") => *degree = int()?,
                (LearnerKind::SplineAdditive { knots, .. }, "knots") => *knots = int()?,
                (LearnerKind::Gbt { trees, .. }, "trees") => *trees = int()?,
                (LearnerKind::Gbt { depth, .. }, "depth") => *depth = int()?,
                (LearnerKind::Gbt { learning_rate, .. }, "lr") => *learning_rate = real()?,
                (LearnerKind::Gbt { min_leaf, .. }, "min_leaf") => *min_leaf = int()?,
                (LearnerKind::Mlp { layers, .. }, "layers") => *layers = int()?,
                (LearnerKind::Mlp { width, .. }, "width") => *width = int()?,
                (LearnerKind::Mlp { epochs, .. }, "epochs") => *epochs = int()?,
                (LearnerKind::Mlp { learning_rate, .. }, "lr") => *learning_rate = real()?,
                (LearnerKind::Mlp { batch, .. }, "batch") => *batch = int()?,
                _ => return Err(bad(format!("unknown key `{k}`"))),
            }
        }
        spec.validate()?;
        Ok(spec)
    }
}

impl LearnerSpec {
    pub fn default_for(name: &str) -> Option<Self> {
        let kind = match name.to_ascii_lowercase().as_str() {
            "poly" | "poly_ridge" => LearnerKind::PolyRidge {
                degree: 3,
                lambda: 0.0,
            },
            "spline" => LearnerKind::SplineAdditive {
                degree: 3,
                knots: 5,
            },
            "gbt" => LearnerKind::Gbt {
                trees: 300,
                depth: 3,
                learning_rate: 0.1,
                min_leaf: 20,
            },
            "mlp" => LearnerKind::Mlp {
                layers: 3,
                width: 64,
                epochs: 500,
                learning_rate: 0.001,
                batch: 64,
            },
            _ => return None,
        };
        Some(LearnerSpec::new(kind))
    }
}
