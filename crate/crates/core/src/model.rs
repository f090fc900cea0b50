//! Linear mixed model structure, data layout, and censoring representation.
//!
//! The model is `y = X beta + Z u + eps` with fixed effects `beta` (p), random
//! effects `u` (q per subject, r subjects) and i.i.d. residual errors. In MEAFT
//! mode responses are log survival times and censoring intervals are stored on
//! the log scale.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dist::{ErrorFamily, RandomEffectsLaw};
use crate::error::{Error, Result};
use crate::priors::PriorSpec;

/// Relative tolerance for rank determination (times the largest column norm).
pub const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Censoring {
    Exact,
    /// Finite interval (l, u) with l < u.
    Interval(f64, f64),
    /// Right-censored at l: the response exceeds l.
    Right(f64),
    /// Left-censored at u: the response is below u.
    Left(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    /// Response value (log survival time in MEAFT mode). For censored rows this
    /// is a representative value; the likelihood uses the censoring bounds.
    pub value: f64,
    pub censor: Censoring,
    /// Row index into the design matrices.
    pub row: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Longitudinal,
    Meaft,
}

/// Design matrices and subject layout.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DesignData {
    pub x: DMatrix<f64>,
    pub z: DMatrix<f64>,
    /// Per-row subject index in 0..r.
    pub subject_index: Vec<usize>,
    pub n: usize,
    pub p: usize,
    pub q: usize,
    pub r: usize,
    /// Whether Z respects the per-subject block structure.
    pub block_structured: bool,
}

impl DesignData {
    /// Build from X, Z, and the per-row subject index; checks dimensions and
    /// detects whether Z is block structured (nonzeros only in each row's own
    /// subject block).
    pub fn new(
        x: DMatrix<f64>,
        z: DMatrix<f64>,
        subject_index: Vec<usize>,
        q: usize,
    ) -> Result<Self> {
        let n = x.nrows();
        let p = x.ncols();
        if n == 0 || p == 0 {
            return Err(Error::EmptyData);
        }
        if z.nrows() != n {
            return Err(Error::DimensionMismatch(format!(
                "Z has {} rows, X has {}",
                z.nrows(),
                n
            )));
        }
        if subject_index.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "subject index length {} != n = {}",
                subject_index.len(),
                n
            )));
        }
        let r = subject_index.iter().max().map(|m| m + 1).unwrap_or(0);
        if q == 0 || z.ncols() != q * r {
            return Err(Error::DimensionMismatch(format!(
                "Z has {} columns, expected q*r = {}*{}",
                z.ncols(),
                q,
                r
            )));
        }
        let mut block_structured = true;
        'rows: for (i, &s) in subject_index.iter().enumerate() {
            for j in 0..q * r {
                if (j < s * q || j >= (s + 1) * q) && z[(i, j)] != 0.0 {
                    block_structured = false;
                    break 'rows;
                }
            }
        }
        Ok(DesignData {
            x,
            z,
            subject_index,
            n,
            p,
            q,
            r,
            block_structured,
        })
    }

    /// Per-subject repeat counts.
    pub fn counts(&self) -> Vec<usize> {
        let mut n_i = vec![0usize; self.r];
        for &s in &self.subject_index {
            n_i[s] += 1;
        }
        n_i
    }

    /// The n x (p + q r) concatenated design matrix (X : Z).
    pub fn full_design(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.p + self.q * self.r);
        m.view_mut((0, 0), (self.n, self.p)).copy_from(&self.x);
        m.view_mut((0, self.p), (self.n, self.q * self.r))
            .copy_from(&self.z);
        m
    }
}

/// Numerical rank with the crate-wide tolerance rule.
pub fn matrix_rank(m: &DMatrix<f64>) -> usize {
    let max_col_norm = (0..m.ncols())
        .map(|j| m.column(j).norm())
        .fold(0.0f64, f64::max);
    if max_col_norm == 0.0 {
        return 0;
    }
    let svd = m.clone().svd(false, false);
    let tol = RANK_TOL * max_col_norm;
    svd.singular_values.iter().filter(|&&s| s > tol).count()
}

/// Current values of every free quantity in the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterVector {
    pub beta: DVector<f64>,
    pub sigma_eps: f64,
    pub delta_eps: Option<f64>,
    pub gamma_eps: Option<f64>,
    /// Random-effects hyperparameters, flattened in the law's declared order.
    pub theta_u: Vec<f64>,
    /// Random effects, subject-major (q entries per subject).
    pub u: DVector<f64>,
}

/// A complete, validated model: data, error law, random-effects law, prior.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelSpec {
    pub data: DesignData,
    pub observations: Vec<Observation>,
    pub error: ErrorFamily,
    pub random_effects: RandomEffectsLaw,
    pub prior: PriorSpec,
    pub mode: Mode,
}

/// Validate and assemble a model. In MEAFT mode censoring bounds and responses
/// arrive on the original time scale and are log-transformed here, once.
pub fn build_model(
    data: DesignData,
    observations: Vec<Observation>,
    error: ErrorFamily,
    random_effects: RandomEffectsLaw,
    prior: PriorSpec,
    mode: Mode,
) -> Result<ModelSpec> {
    if observations.is_empty() {
        return Err(Error::EmptyData);
    }
    if observations.len() != data.n {
        return Err(Error::DimensionMismatch(format!(
            "{} observations for {} design rows",
            observations.len(),
            data.n
        )));
    }
    for obs in &observations {
        if obs.row >= data.n {
            return Err(Error::DimensionMismatch(format!(
                "observation row {} out of range",
                obs.row
            )));
        }
        if let Censoring::Interval(l, u) = obs.censor {
            if !(l < u) || !l.is_finite() || !u.is_finite() {
                return Err(Error::UnorderedInterval(l, u));
            }
        }
    }
    let rank_x = matrix_rank(&data.x);
    if rank_x < data.p {
        return Err(Error::RankDeficientX {
            rank: rank_x,
            p: data.p,
        });
    }
    if random_effects.dimension() != data.q {
        return Err(Error::DimensionMismatch(format!(
            "random-effects law has dimension {}, design has q = {}",
            random_effects.dimension(),
            data.q
        )));
    }
    let observations = if mode == Mode::Meaft {
        observations
            .into_iter()
            .map(|obs| log_transform(obs))
            .collect::<Result<Vec<_>>>()?
    } else {
        observations
    };
    Ok(ModelSpec {
        data,
        observations,
        error,
        random_effects,
        prior,
        mode,
    })
}

fn log_transform(obs: Observation) -> Result<Observation> {
    let check = |t: f64| {
        if t > 0.0 {
            Ok(t.ln())
        } else {
            Err(Error::NonPositiveSurvivalTime(t))
        }
    };
    let censor = match obs.censor {
        Censoring::Exact => Censoring::Exact,
        Censoring::Interval(l, u) => {
            if !(l < u) {
                return Err(Error::UnorderedInterval(l, u));
            }
            Censoring::Interval(check(l)?, check(u)?)
        }
        Censoring::Right(l) => Censoring::Right(check(l)?),
        Censoring::Left(u) => Censoring::Left(check(u)?),
    };
    let value = match obs.censor {
        Censoring::Exact => check(obs.value)?,
        _ => {
            if obs.value > 0.0 {
                obs.value.ln()
            } else {
                obs.value
            }
        }
    };
    Ok(Observation {
        value,
        censor,
        row: obs.row,
    })
}

/// Rowwise X beta + Z u.
pub fn linear_predictor(spec: &ModelSpec, params: &ParameterVector) -> Result<DVector<f64>> {
    predictor_raw(&spec.data, &params.beta, &params.u)
}

pub(crate) fn predictor_raw(
    data: &DesignData,
    beta: &DVector<f64>,
    u: &DVector<f64>,
) -> Result<DVector<f64>> {
    if beta.len() != data.p {
        return Err(Error::DimensionMismatch(format!(
            "beta has length {}, p = {}",
            beta.len(),
            data.p
        )));
    }
    if u.len() != data.q * data.r {
        return Err(Error::DimensionMismatch(format!(
            "u has length {}, q*r = {}",
            u.len(),
            data.q * data.r
        )));
    }
    Ok(&data.x * beta + &data.z * u)
}

/// Subject-indicator Z for a random-intercept model (q = 1).
pub fn intercept_z(subject_index: &[usize], r: usize) -> DMatrix<f64> {
    let n = subject_index.len();
    let mut z = DMatrix::zeros(n, r);
    for (i, &s) in subject_index.iter().enumerate() {
        z[(i, s)] = 1.0;
    }
    z
}
