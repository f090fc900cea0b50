//! Model comparison from posterior samples: Savage-Dickey Bayes factors for
//! point hypotheses, posterior odds on tail heaviness, and LPML via
//! per-subject conditional predictive ordinates.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::likelihood::loglik;
use crate::model::ModelSpec;
use crate::numeric;
use crate::priors::ProperPrior;
use crate::sampler::{draw_to_params, PosteriorSample};

/// Minimum number of draws for density estimation.
pub const MIN_DRAWS: usize = 100;
/// Harmonic-mean terms more than this far below the maximum are clamped.
pub const CPO_CLAMP: f64 = 700.0;

/// Everything the `select` pipeline reports.
#[derive(Debug, Clone, Serialize)]
pub struct SelectionReport {
    /// (hypothesis label, Bayes factor in favour of the point hypothesis).
    pub bayes_factors: Vec<(String, f64)>,
    /// Posterior odds of delta_eps exceeding 10, when delta_eps is sampled.
    pub odds_delta_gt_10: Option<f64>,
    pub lpml: Option<f64>,
    pub cpo: Vec<f64>,
    /// Degenerate-estimate warnings (harmonic-mean clamping etc).
    pub flags: Vec<String>,
}

/// Map a bounded or half-bounded support onto the real line so the Gaussian
/// KDE sees unbounded data; identity on the whole line.
#[derive(Debug, Clone, Copy)]
enum SupportMap {
    Identity,
    /// t = ln(x - lo)
    LogShift { lo: f64 },
    /// t = ln(hi - x)
    NegLogShift { hi: f64 },
    /// t = atanh(2 (x - lo) / (hi - lo) - 1)
    ScaledAtanh { lo: f64, hi: f64 },
}

impl SupportMap {
    fn from_support(lo: f64, hi: f64) -> Self {
        match (lo.is_finite(), hi.is_finite()) {
            (false, false) => SupportMap::Identity,
            (true, false) => SupportMap::LogShift { lo },
            (false, true) => SupportMap::NegLogShift { hi },
            (true, true) => SupportMap::ScaledAtanh { lo, hi },
        }
    }

    fn forward(self, x: f64) -> f64 {
        match self {
            SupportMap::Identity => x,
            SupportMap::LogShift { lo } => (x - lo).max(f64::MIN_POSITIVE).ln(),
            SupportMap::NegLogShift { hi } => (hi - x).max(f64::MIN_POSITIVE).ln(),
            SupportMap::ScaledAtanh { lo, hi } => {
                let s = (2.0 * (x - lo) / (hi - lo) - 1.0).clamp(-1.0 + 1e-12, 1.0 - 1e-12);
                s.atanh()
            }
        }
    }

    /// log |dt/dx| at x.
    fn log_deriv(self, x: f64) -> f64 {
        match self {
            SupportMap::Identity => 0.0,
            SupportMap::LogShift { lo } => -((x - lo).max(f64::MIN_POSITIVE).ln()),
            SupportMap::NegLogShift { hi } => -((hi - x).max(f64::MIN_POSITIVE).ln()),
            SupportMap::ScaledAtanh { lo, hi } => {
                let w = hi - lo;
                let s = 2.0 * (x - lo) / w - 1.0;
                ((2.0 / w) / (1.0 - s * s).max(f64::MIN_POSITIVE)).ln()
            }
        }
    }
}

/// Gaussian KDE with Silverman's bandwidth on already-transformed draws.
struct Kde {
    points: Vec<f64>,
    bandwidth: f64,
}

impl Kde {
    fn new(points: Vec<f64>) -> Result<Self> {
        let n = points.len();
        if n < MIN_DRAWS {
            return Err(Error::TooFewDraws(n));
        }
        let mean = points.iter().sum::<f64>() / n as f64;
        let sd = (points.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>()
            / (n as f64 - 1.0))
            .sqrt();
        let iqr = crate::sampler::quantile(&points, 0.75) - crate::sampler::quantile(&points, 0.25);
        let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
        let bandwidth = 0.9 * spread * (n as f64).powf(-0.2);
        if !(bandwidth > 0.0) {
            // all draws identical: fall back to a nominal width so density
            // queries stay finite
            return Ok(Kde {
                points,
                bandwidth: 1e-8,
            });
        }
        Ok(Kde { points, bandwidth })
    }

    fn density(&self, t: f64) -> f64 {
        let h = self.bandwidth;
        let mut s = 0.0;
        for &p in &self.points {
            s += numeric::norm_logpdf((t - p) / h).exp();
        }
        s / (h * self.points.len() as f64)
    }
}

/// Savage-Dickey Bayes factor for the point hypothesis `param = point`: the
/// marginal posterior density at the point (Gaussian KDE, draws transformed to
/// the real line when the prior support is bounded) over the prior density.
pub fn savage_dickey(
    sample: &PosteriorSample,
    param: &str,
    point: f64,
    prior: &ProperPrior,
) -> Result<f64> {
    if !prior.contains(point) {
        return Err(Error::PointOutsideSupport(point));
    }
    let draws = sample.column(param)?;
    let (lo, hi) = prior.support();
    let map = SupportMap::from_support(lo, hi);
    let kde = Kde::new(draws.iter().map(|&x| map.forward(x)).collect())?;
    let posterior = kde.density(map.forward(point)) * map.log_deriv(point).exp();
    let prior_density = prior.logpdf(point).exp();
    Ok(posterior / prior_density)
}

/// Posterior odds p / (1 - p) with p the fraction of draws above `threshold`;
/// 0 and infinity are reported faithfully.
pub fn tail_odds(sample: &PosteriorSample, param: &str, threshold: f64) -> Result<f64> {
    let draws = sample.column(param)?;
    if draws.is_empty() {
        return Err(Error::EmptySample);
    }
    let above = draws.iter().filter(|&&d| d > threshold).count();
    let p = above as f64 / draws.len() as f64;
    if above == draws.len() {
        Ok(f64::INFINITY)
    } else {
        Ok(p / (1.0 - p))
    }
}

/// LPML pieces computed from a per-draw, per-subject log-likelihood matrix.
pub struct LpmlResult {
    pub lpml: f64,
    pub cpo: Vec<f64>,
    /// log CPO per subject; the quantity LPML actually sums, kept in log
    /// space so extreme subjects do not underflow.
    pub log_cpo: Vec<f64>,
    /// Number of clamped harmonic-mean terms, per subject.
    pub clamped: Vec<usize>,
}

/// Harmonic-mean CPO estimator: CPO_i = [ (1/S) sum_s exp(-l_is) ]^{-1},
/// evaluated in log space; terms further than CPO_CLAMP below the per-subject
/// maximum of -l are clamped and counted.
pub fn lpml_from_loglik(per_draw_per_subject: &[Vec<f64>]) -> Result<LpmlResult> {
    let s = per_draw_per_subject.len();
    if s == 0 {
        return Err(Error::EmptySample);
    }
    let r = per_draw_per_subject[0].len();
    let mut log_cpo = Vec::with_capacity(r);
    let mut clamped = vec![0usize; r];
    for i in 0..r {
        let neg: Vec<f64> = per_draw_per_subject.iter().map(|row| -row[i]).collect();
        let m = neg.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let floor = m - CPO_CLAMP;
        let adjusted: Vec<f64> = neg
            .iter()
            .map(|&v| {
                if v < floor {
                    clamped[i] += 1;
                    floor
                } else {
                    v
                }
            })
            .collect();
        let log_mean_inv = numeric::log_sum_exp(&adjusted) - (s as f64).ln();
        log_cpo.push(-log_mean_inv);
    }
    let lpml = log_cpo.iter().sum();
    let cpo = log_cpo.iter().map(|l| l.exp()).collect();
    Ok(LpmlResult {
        lpml,
        cpo,
        log_cpo,
        clamped,
    })
}

/// LPML for a model and its posterior sample: re-evaluates the per-subject
/// log-likelihood at every retained draw.
pub fn lpml(spec: &ModelSpec, sample: &PosteriorSample) -> Result<LpmlResult> {
    if sample.is_empty() {
        return Err(Error::EmptySample);
    }
    let mut per_draw = Vec::with_capacity(sample.len());
    for idx in 0..sample.len() {
        let pv = draw_to_params(spec, sample, idx)?;
        per_draw.push(loglik(spec, &pv)?.per_subject);
    }
    lpml_from_loglik(&per_draw)
}

/// Full selection report: Savage-Dickey factors for the given (parameter,
/// point) hypotheses using the matching priors declared in the model, tail
/// odds on delta_eps when sampled, and LPML.
pub fn select(
    spec: &ModelSpec,
    sample: &PosteriorSample,
    hypotheses: &[(&str, f64)],
) -> Result<SelectionReport> {
    let mut bayes_factors = Vec::new();
    let mut flags = Vec::new();
    for &(param, point) in hypotheses {
        let prior = prior_for(spec, param).ok_or_else(|| {
            Error::Config(format!(
                "Savage-Dickey needs an independent proper prior for {param}"
            ))
        })?;
        let bf = savage_dickey(sample, param, point, prior)?;
        bayes_factors.push((format!("{param} = {point}"), bf));
    }
    let odds_delta_gt_10 = if sample.column_index("delta_eps").is_ok() {
        Some(tail_odds(sample, "delta_eps", 10.0)?)
    } else {
        None
    };
    let lp = lpml(spec, sample)?;
    let n_clamped: usize = lp.clamped.iter().sum();
    if n_clamped > 0 {
        flags.push(format!(
            "{n_clamped} harmonic-mean terms clamped; consider a longer chain"
        ));
    }
    Ok(SelectionReport {
        bayes_factors,
        odds_delta_gt_10,
        lpml: Some(lp.lpml),
        cpo: lp.cpo,
        flags,
    })
}

/// The proper prior a sampled parameter was declared with, if any.
pub fn prior_for<'a>(spec: &'a ModelSpec, param: &str) -> Option<&'a ProperPrior> {
    match param {
        "delta_eps" => spec.prior.delta_eps_prior.as_ref(),
        "gamma_eps" => spec.prior.gamma_eps_prior.as_ref(),
        _ => spec.prior.hyperprior(param),
    }
}
