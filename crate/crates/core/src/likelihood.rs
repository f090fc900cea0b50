//! Exact log-likelihood with censoring, the joint target for the sampler, and
//! the single-mixer marginal-likelihood factorisation demonstration.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::dist::MixingKind;
use crate::error::{Error, Result};
use crate::model::{Censoring, DesignData, ModelSpec, ParameterVector};
use crate::numeric;
use crate::priors::log_prior;
use crate::propriety::{check_mixing_moment, ParamLaw};

/// Censored contributions below this log-probability are floored.
pub const CENSOR_LOG_FLOOR: f64 = -700.0;

/// Log-likelihood with per-observation and per-subject breakdowns.
#[derive(Debug, Clone)]
pub struct LogLikelihoodBreakdown {
    /// Log-density for exact rows, log-probability for censored rows.
    pub per_observation: Vec<f64>,
    /// Per-subject sums, used by CPO.
    pub per_subject: Vec<f64>,
    pub total: f64,
    /// True when any censored contribution hit the floor.
    pub floored: bool,
}

/// Evaluate the exact log-likelihood of the model at a parameter vector.
pub fn loglik(spec: &ModelSpec, params: &ParameterVector) -> Result<LogLikelihoodBreakdown> {
    let pred = crate::model::linear_predictor(spec, params)?;
    let sigma = params.sigma_eps;
    let delta = params.delta_eps;
    let gamma = params.gamma_eps;
    let mut per_observation = Vec::with_capacity(spec.observations.len());
    let mut floored = false;
    let cdf = |x: f64| spec.error.cdf(x, sigma, delta, gamma);
    for obs in &spec.observations {
        let m = pred[obs.row];
        let term = match obs.censor {
            Censoring::Exact => spec.error.logpdf(obs.value - m, sigma, delta, gamma)?,
            Censoring::Interval(l, u) => {
                let p = cdf(u - m)? - cdf(l - m)?;
                floor_log(p, &mut floored)
            }
            Censoring::Right(l) => floor_log(1.0 - cdf(l - m)?, &mut floored),
            Censoring::Left(u) => floor_log(cdf(u - m)?, &mut floored),
        };
        per_observation.push(term);
    }
    let mut per_subject = vec![0.0; spec.data.r];
    for (obs, &term) in spec.observations.iter().zip(&per_observation) {
        per_subject[spec.data.subject_index[obs.row]] += term;
    }
    let total = numeric::pairwise_sum(&per_observation);
    Ok(LogLikelihoodBreakdown {
        per_observation,
        per_subject,
        total,
        floored,
    })
}

fn floor_log(p: f64, floored: &mut bool) -> f64 {
    if p.is_nan() {
        *floored = true;
        return CENSOR_LOG_FLOOR;
    }
    let lp = p.max(0.0).ln();
    if lp < CENSOR_LOG_FLOOR {
        *floored = true;
        CENSOR_LOG_FLOOR
    } else {
        lp
    }
}

/// Random-effects log-density at `u`, summed over subjects.
pub fn log_raneff(spec: &ModelSpec, params: &ParameterVector) -> Result<f64> {
    let law = spec.random_effects.resolve(&params.theta_u)?;
    let q = spec.data.q;
    let mut total = 0.0;
    let mut u_s = vec![0.0; q];
    for s in 0..spec.data.r {
        for j in 0..q {
            u_s[j] = params.u[s * q + j];
        }
        total += law.logpdf(&u_s)?;
    }
    if spec.random_effects.nonnegative_support {
        let zu = &spec.data.z * &params.u;
        if zu.iter().any(|&v| v < 0.0) {
            return Ok(f64::NEG_INFINITY);
        }
    }
    Ok(total)
}

/// Unnormalised log posterior: likelihood + random effects + prior.
pub fn log_joint(spec: &ModelSpec, params: &ParameterVector) -> Result<f64> {
    let lp = log_prior(&spec.prior, params);
    if lp == f64::NEG_INFINITY {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(loglik(spec, params)?.total + log_raneff(spec, params)? + lp)
}

/// Like [`log_joint`] but maps out-of-domain parameter values to -inf so a
/// sampler can reject them instead of aborting.
pub fn log_joint_soft(spec: &ModelSpec, params: &ParameterVector) -> Result<f64> {
    match log_joint(spec, params) {
        Ok(v) => Ok(v),
        Err(
            Error::NonPositiveSigma(_)
            | Error::NonPositiveDelta(_)
            | Error::GammaOutOfDomain { .. }
            | Error::CorrelationOutOfDomain(_)
            | Error::OutOfDomain(_),
        ) => Ok(f64::NEG_INFINITY),
        Err(e) => Err(e),
    }
}

/// Outcome of the single-mixer marginal-likelihood demonstration on two
/// mixing models and two datasets sharing one design.
#[derive(Debug, Clone, Serialize)]
pub struct PathologyReport {
    pub b: f64,
    /// Marginal likelihood of the single-mixer model, [model][dataset].
    pub marginal_single: [[f64; 2]; 2],
    /// Marginal likelihood under normal errors, per dataset.
    pub marginal_normal: [f64; 2],
    /// Data-free correction factors, per model.
    pub correction: [f64; 2],
    /// Relative gap of marginal_single vs marginal_normal * correction.
    pub factorisation_gap: [[f64; 2]; 2],
    /// Single-mixer Bayes factor model1 / model2, per dataset.
    pub bf_single: [f64; 2],
    /// Same Bayes factor under the one-mixer-per-observation model.
    pub bf_per_observation: [f64; 2],
    pub marginal_per_observation: [[f64; 2]; 2],
}

/// Per-observation mixing: the product of univariate SMN densities.
fn per_observation_logpdf(e: &[f64], sigma: f64, kind: MixingKind, delta: f64) -> Result<f64> {
    let mix = crate::dist::MixingDistribution::new(kind, delta)?;
    let mut total = 0.0;
    for &v in e {
        total += crate::dist::smn_logpdf(v, sigma, &mix)?;
    }
    Ok(total)
}

const LN_2PI: f64 = 1.837_877_066_409_345_4;
// log-sigma window and grid for the demonstration marginals
const DEMO_LOG_SIGMA: (f64, f64) = (-12.0, 12.0);
const DEMO_PEROBS_LOG_SIGMA: (f64, f64) = (-5.0, 4.0);
const DEMO_PEROBS_SIGMA_CELLS: usize = 9;
const DEMO_PEROBS_XI_CELLS: usize = 2;
const DEMO_PEROBS_XI_SCALE: f64 = 2.0;
const DEMO_PEROBS_XI_MAX: f64 = 12.0;

/// Marginal density of y given the residual standard deviation s, with beta
/// flat and standard normal random intercepts, integrated in closed form.
pub(crate) fn gaussian_marginal_log(data: &DesignData, yv: &DVector<f64>, s: f64) -> f64 {
    let n = data.n;
    let mut v = &data.z * data.z.transpose();
    for i in 0..n {
        v[(i, i)] += s * s;
    }
    let chol = match nalgebra::Cholesky::new(v) {
        Some(c) => c,
        // singular covariance only arises in the s -> 0 limit where the
        // marginal vanishes (y is outside the random-effect column space)
        None => return f64::NEG_INFINITY,
    };
    let x = data.x.column(0).into_owned();
    let vinv_x = chol.solve(&x);
    let vinv_y = chol.solve(yv);
    let xvx = x.dot(&vinv_x);
    let xvy = x.dot(&vinv_y);
    let yvy = yv.dot(&vinv_y);
    let logdet = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let quad_form = yvy - xvy * xvy / xvx;
    -0.5 * (n as f64 - 1.0) * LN_2PI - 0.5 * logdet - 0.5 * xvx.ln() - 0.5 * quad_form
}

/// Adaptive quadrature split over unit cells so a narrow peak inside a wide
/// window cannot slip between the nodes of the first refinement pass.
fn quad_over_units<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64) -> Result<f64> {
    let mut total = 0.0;
    let mut a = lo;
    while a < hi {
        let b = (a + 1.0).min(hi);
        total += numeric::quad(&f, a, b)?;
        a = b;
    }
    Ok(total)
}

/// Marginal likelihood under normal errors: one quadrature over log sigma.
fn normal_marginal(data: &DesignData, yv: &DVector<f64>, b: f64) -> Result<f64> {
    quad_over_units(
        |s_log| (gaussian_marginal_log(data, yv, s_log.exp()) - b * s_log).exp(),
        DEMO_LOG_SIGMA.0,
        DEMO_LOG_SIGMA.1,
    )
}

/// Marginal likelihood under a single shared mixing variable: nested
/// quadrature over log sigma (outer) and the mixing variable (inner), with
/// beta and the random intercepts integrated in closed form given both.
fn single_mixer_marginal(
    data: &DesignData,
    yv: &DVector<f64>,
    b: f64,
    kind: MixingKind,
    delta: f64,
) -> Result<f64> {
    let mix = crate::dist::MixingDistribution::new(kind, delta)?;
    let failure = std::cell::RefCell::new(None);
    let value = quad_over_units(
        |s_log| {
            let sigma = s_log.exp();
            let cond = |tau: f64| {
                gaussian_marginal_log(data, yv, sigma / tau.sqrt()).exp()
                    * mix.log_density(tau).exp()
            };
            // integrate in t = ln tau over unit cells: the integrand peaks
            // near tau = (sigma / s_opt)^2 for an O(1) residual scale s_opt,
            // far outside any fixed window when sigma is extreme
            let t_peak = 2.0 * s_log;
            let inner = match kind {
                MixingKind::PointMass => Ok(gaussian_marginal_log(data, yv, sigma).exp()),
                MixingKind::Beta => quad_over_units(
                    |t| cond(t.exp()) * t.exp(),
                    t_peak.min(0.0) - 40.0,
                    0.0,
                ),
                _ => quad_over_units(
                    |t| cond(t.exp()) * t.exp(),
                    t_peak.min(0.0) - 40.0,
                    t_peak.max(0.0) + 40.0,
                ),
            };
            match inner {
                Ok(v) => v * (-b * s_log).exp(),
                Err(e) => {
                    *failure.borrow_mut() = Some(e);
                    0.0
                }
            }
        },
        DEMO_LOG_SIGMA.0,
        DEMO_LOG_SIGMA.1,
    )?;
    if let Some(e) = failure.into_inner() {
        return Err(e);
    }
    Ok(value)
}

/// Marginal likelihood by fixed-grid quadrature over (beta, u) in coordinates
/// standardised by the Gaussian posterior at each sigma; in those coordinates
/// the integrand keeps unit width however small sigma gets. Used for the
/// one-mixer-per-observation model, which has no closed-form (beta, u)
/// marginalisation, and as an independent cross-check of the analytic path.
fn standardised_marginal(
    data: &DesignData,
    yv: &DVector<f64>,
    b: f64,
    logdens: &dyn Fn(&[f64], f64) -> Result<f64>,
) -> Result<f64> {
    assert!(data.p == 1 && data.q == 1 && data.r <= 2, "demo model too large");
    let dims = 1 + data.r;
    let mut a_mat = DMatrix::zeros(data.n, dims);
    a_mat.set_column(0, &data.x.column(0));
    for j in 0..data.r {
        a_mat.set_column(1 + j, &data.z.column(j));
    }
    let ata = a_mat.transpose() * &a_mat;
    let aty = a_mat.transpose() * yv;
    let t_max = (DEMO_PEROBS_XI_MAX / DEMO_PEROBS_XI_SCALE).asinh();
    let failure = std::cell::RefCell::new(None);
    let value = numeric::fixed_quad(
        |s_log| {
            let sigma = s_log.exp();
            // Gaussian-case posterior of (beta, u): flat beta, N(0,1) u
            let mut prec = &ata / (sigma * sigma);
            for j in 1..dims {
                prec[(j, j)] += 1.0;
            }
            let chol = match nalgebra::Cholesky::new(prec) {
                Some(c) => c,
                None => return 0.0,
            };
            let mean = chol.solve(&(&aty / (sigma * sigma)));
            let cov = chol.inverse();
            let l = match nalgebra::Cholesky::new(cov) {
                Some(c) => c.unpack(),
                None => return 0.0,
            };
            let log_det_l = l.diagonal().iter().map(|d| d.ln()).sum::<f64>();
            let eval = |t: &[f64]| -> f64 {
                let mut xi = DVector::zeros(dims);
                let mut log_jac = log_det_l;
                for (j, &tj) in t.iter().enumerate() {
                    xi[j] = DEMO_PEROBS_XI_SCALE * tj.sinh();
                    log_jac += (DEMO_PEROBS_XI_SCALE * tj.cosh()).ln();
                }
                let theta = &mean + &l * xi;
                let e = yv - &a_mat * &theta;
                let resid: Vec<f64> = e.iter().copied().collect();
                let mut lp = match logdens(&resid, sigma) {
                    Ok(v) => v + log_jac,
                    Err(err) => {
                        *failure.borrow_mut() = Some(err);
                        return 0.0;
                    }
                };
                for j in 1..dims {
                    lp += numeric::norm_logpdf(theta[j]);
                }
                lp.exp()
            };
            let inner = numeric::fixed_quad(
                |t0| {
                    numeric::fixed_quad(
                        |t1| {
                            if dims == 2 {
                                eval(&[t0, t1])
                            } else {
                                numeric::fixed_quad(
                                    |t2| eval(&[t0, t1, t2]),
                                    -t_max,
                                    t_max,
                                    DEMO_PEROBS_XI_CELLS,
                                )
                            }
                        },
                        -t_max,
                        t_max,
                        DEMO_PEROBS_XI_CELLS,
                    )
                },
                -t_max,
                t_max,
                DEMO_PEROBS_XI_CELLS,
            );
            inner * (-b * s_log).exp()
        },
        DEMO_PEROBS_LOG_SIGMA.0,
        DEMO_PEROBS_LOG_SIGMA.1,
        DEMO_PEROBS_SIGMA_CELLS,
    );
    if let Some(e) = failure.into_inner() {
        return Err(e);
    }
    Ok(value)
}

/// Demonstrate that under a single shared mixing variable the marginal
/// likelihood factorises into the normal-model marginal times a data-free
/// correction, so Bayes factors between mixing choices ignore the data; the
/// one-mixer-per-observation model does not share this defect.
pub fn demo_single_mixer_factorisation(
    data: &DesignData,
    y1: &[f64],
    y2: &[f64],
    b: f64,
    model1: (MixingKind, f64),
    model2: (MixingKind, f64),
) -> Result<PathologyReport> {
    if y1.len() != data.n || y2.len() != data.n {
        return Err(Error::DimensionMismatch(format!(
            "datasets of length {}/{} for {} design rows",
            y1.len(),
            y2.len(),
            data.n
        )));
    }
    let models = [model1, model2];
    let datasets = [y1, y2];
    let mut marginal_single = [[0.0; 2]; 2];
    let mut marginal_per_observation = [[0.0; 2]; 2];
    let mut correction = [0.0; 2];
    for (k, &(kind, delta)) in models.iter().enumerate() {
        correction[k] = check_mixing_moment(kind, b, &ParamLaw::Fixed(delta))?
            .value
            .expect("fixed-delta moment always carries a value");
        for (d, y) in datasets.iter().enumerate() {
            let yv = DVector::from_column_slice(y);
            marginal_single[k][d] = single_mixer_marginal(data, &yv, b, kind, delta)?;
            marginal_per_observation[k][d] = standardised_marginal(data, &yv, b, &|e, sigma| {
                per_observation_logpdf(e, sigma, kind, delta)
            })?;
        }
    }
    let mut normal = [0.0; 2];
    for (d, y) in datasets.iter().enumerate() {
        let yv = DVector::from_column_slice(y);
        normal[d] = normal_marginal(data, &yv, b)?;
    }
    let marginal_normal = normal;
    let mut factorisation_gap = [[0.0; 2]; 2];
    for k in 0..2 {
        for d in 0..2 {
            let predicted = marginal_normal[d] * correction[k];
            factorisation_gap[k][d] = (marginal_single[k][d] - predicted).abs() / predicted.abs();
        }
    }
    let bf_single = [
        marginal_single[0][0] / marginal_single[1][0],
        marginal_single[0][1] / marginal_single[1][1],
    ];
    let bf_per_observation = [
        marginal_per_observation[0][0] / marginal_per_observation[1][0],
        marginal_per_observation[0][1] / marginal_per_observation[1][1],
    ];
    Ok(PathologyReport {
        b,
        marginal_single,
        marginal_normal,
        correction,
        factorisation_gap,
        bf_single,
        bf_per_observation,
        marginal_per_observation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::{ErrorFamily, Param, RandomEffectsLaw, SkewSpec, TwoPieceParameterisation};
    use crate::model::{build_model, intercept_z, Mode, Observation};
    use crate::priors::PriorSpec;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn design(r: usize, reps: usize) -> DesignData {
        let n = r * reps;
        let x = DMatrix::from_fn(n, 1, |i, _| 1.0 + i as f64 * 0.3);
        let subj: Vec<usize> = (0..n).map(|i| i / reps).collect();
        let z = intercept_z(&subj, r);
        DesignData::new(x, z, subj, 1).unwrap()
    }

    fn exact_obs(values: &[f64]) -> Vec<Observation> {
        values
            .iter()
            .enumerate()
            .map(|(i, &v)| Observation {
                value: v,
                censor: Censoring::Exact,
                row: i,
            })
            .collect()
    }

    fn normal_spec(data: DesignData, obs: Vec<Observation>) -> ModelSpec {
        build_model(
            data,
            obs,
            ErrorFamily::normal(),
            RandomEffectsLaw::std_normal_iid(1),
            PriorSpec::reference(),
            Mode::Longitudinal,
        )
        .unwrap()
    }

    fn params(beta: f64, sigma: f64, u: &[f64]) -> ParameterVector {
        ParameterVector {
            beta: DVector::from_vec(vec![beta]),
            sigma_eps: sigma,
            delta_eps: None,
            gamma_eps: None,
            theta_u: vec![],
            u: DVector::from_column_slice(u),
        }
    }

    #[test]
    fn exact_normal_matches_naive_loop() {
        let data = design(2, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let y: Vec<f64> = (0..6).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let spec = normal_spec(data, exact_obs(&y));
        let pv = params(0.7, 1.3, &[0.4, -0.2]);
        let got = loglik(&spec, &pv).unwrap();
        let mut expect = 0.0;
        for i in 0..6 {
            let m = spec.data.x[(i, 0)] * 0.7 + if i < 3 { 0.4 } else { -0.2 };
            let z = (y[i] - m) / 1.3;
            expect += numeric::norm_logpdf(z) - 1.3f64.ln();
        }
        assert_relative_eq!(got.total, expect, max_relative = 1e-12);
        assert_relative_eq!(
            got.total,
            got.per_subject.iter().sum::<f64>(),
            max_relative = 1e-12
        );
        assert!(!got.floored);
    }

    #[test]
    fn interval_one_sigma_mass() {
        let data = design(1, 2);
        let mut obs = exact_obs(&[0.0, 0.0]);
        // centre the interval on the predictor of row 0
        let pv = params(0.0, 1.0, &[0.0]);
        obs[0].censor = Censoring::Interval(-1.0, 1.0);
        let spec = normal_spec(data, obs);
        let got = loglik(&spec, &pv).unwrap();
        assert_relative_eq!(
            got.per_observation[0],
            0.6826895f64.ln(),
            max_relative = 1e-6
        );
    }

    #[test]
    fn two_piece_mode_mass() {
        // epsilon-skew gamma = 0.5 puts mass b/(a+b) = 0.75 left of the mode
        let error = ErrorFamily {
            mixing: MixingKind::PointMass,
            delta: Param::Fixed(1.0),
            skew: Some(SkewSpec {
                parameterisation: TwoPieceParameterisation::EpsilonSkew,
                gamma: Param::Fixed(0.5),
            }),
        };
        assert_relative_eq!(
            error.cdf(0.0, 1.0, None, None).unwrap(),
            0.75,
            max_relative = 1e-12
        );
    }

    #[test]
    fn censored_contributions_nonpositive() {
        let data = design(2, 2);
        let mut obs = exact_obs(&[0.1, -0.4, 0.8, 0.2]);
        obs[0].censor = Censoring::Right(0.1);
        obs[1].censor = Censoring::Left(-0.4);
        obs[2].censor = Censoring::Interval(0.0, 1.6);
        let spec = normal_spec(data, obs);
        let got = loglik(&spec, &params(0.0, 1.0, &[0.0, 0.0])).unwrap();
        for i in 0..3 {
            assert!(got.per_observation[i] <= 0.0);
        }
    }

    #[test]
    fn far_tail_interval_floors() {
        let data = design(1, 2);
        let mut obs = exact_obs(&[0.0, 0.0]);
        obs[0].censor = Censoring::Interval(60.0, 61.0);
        let spec = normal_spec(data, obs);
        let got = loglik(&spec, &params(0.0, 1.0, &[0.0])).unwrap();
        assert!(got.floored);
        assert_eq!(got.per_observation[0], CENSOR_LOG_FLOOR);
        assert!(got.total.is_finite());
    }

    #[test]
    fn row_permutation_invariance() {
        let data = design(2, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let y: Vec<f64> = (0..6).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let mut obs = exact_obs(&y);
        obs[4].censor = Censoring::Right(y[4]);
        let spec = normal_spec(data.clone(), obs.clone());
        let pv = params(0.3, 0.9, &[0.5, -0.7]);
        let base = loglik(&spec, &pv).unwrap();
        obs.reverse();
        let spec2 = normal_spec(data, obs);
        let perm = loglik(&spec2, &pv).unwrap();
        assert_relative_eq!(base.total, perm.total, max_relative = 1e-12);
        for s in 0..2 {
            assert_relative_eq!(
                base.per_subject[s],
                perm.per_subject[s],
                max_relative = 1e-12
            );
        }
    }

    #[test]
    fn interval_shrinks_to_exact_density() {
        let data = design(1, 2);
        let pv = params(0.0, 1.0, &[0.0]);
        let t = 0.6;
        let exact = {
            let spec = normal_spec(data.clone(), exact_obs(&[t, 0.0]));
            loglik(&spec, &pv).unwrap().per_observation[0]
        };
        let mut prev_gap = f64::INFINITY;
        for &h in &[0.1, 0.01, 0.001] {
            let mut obs = exact_obs(&[t, 0.0]);
            obs[0].censor = Censoring::Interval(t - h, t + h);
            let spec = normal_spec(data.clone(), obs);
            let cens = loglik(&spec, &pv).unwrap().per_observation[0];
            let approx_density = cens - (2.0 * h).ln();
            let gap = (approx_density - exact).abs();
            assert!(gap < prev_gap);
            prev_gap = gap;
        }
        assert!(prev_gap < 1e-3);
    }

    #[test]
    fn location_scale_equivariance() {
        let data = design(2, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let y: Vec<f64> = (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let c = 2.7;
        let yc: Vec<f64> = y.iter().map(|v| v * c).collect();
        let spec = normal_spec(data.clone(), exact_obs(&y));
        let spec_c = normal_spec(data, exact_obs(&yc));
        let pv = params(0.4, 0.8, &[0.1, -0.3]);
        let pv_c = params(0.4 * c, 0.8 * c, &[0.1 * c, -0.3 * c]);
        let l1 = loglik(&spec, &pv).unwrap().total;
        let l2 = loglik(&spec_c, &pv_c).unwrap().total;
        assert_relative_eq!(l2, l1 - 4.0 * c.ln(), max_relative = 1e-10);
    }

    #[test]
    fn two_piece_gamma_zero_equals_base() {
        let data = design(2, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let y: Vec<f64> = (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let skewed = ErrorFamily {
            mixing: MixingKind::Gamma,
            delta: Param::Fixed(5.0),
            skew: Some(SkewSpec {
                parameterisation: TwoPieceParameterisation::EpsilonSkew,
                gamma: Param::Fixed(0.0),
            }),
        };
        let plain = ErrorFamily {
            mixing: MixingKind::Gamma,
            delta: Param::Fixed(5.0),
            skew: None,
        };
        let mk = |error: ErrorFamily| {
            build_model(
                data.clone(),
                exact_obs(&y),
                error,
                RandomEffectsLaw::std_normal_iid(1),
                PriorSpec::reference(),
                Mode::Longitudinal,
            )
            .unwrap()
        };
        let pv = params(0.2, 1.1, &[0.6, -0.1]);
        let a = loglik(&mk(skewed), &pv).unwrap().total;
        let b = loglik(&mk(plain), &pv).unwrap().total;
        assert_relative_eq!(a, b, max_relative = 1e-12);
    }

    #[test]
    fn log_joint_prior_decomposition() {
        let data = design(2, 2);
        let y = [0.4, -0.2, 0.9, 0.3];
        let spec = normal_spec(data, exact_obs(&y));
        let pv = params(0.2, 1.7, &[0.3, -0.4]);
        let lj = log_joint(&spec, &pv).unwrap();
        let ll = loglik(&spec, &pv).unwrap().total;
        let lu = log_raneff(&spec, &pv).unwrap();
        assert_relative_eq!(lj - ll - lu, -(1.7f64.ln()), max_relative = 1e-12);
    }

    #[test]
    fn independence_copula_matches_independent_marginals() {
        let data = design(2, 2);
        let y = [0.4, -0.2, 0.9, 0.3];
        let base = RandomEffectsLaw::std_normal_iid(1);
        let mut with_rho = base.clone();
        with_rho.copula_rho = Some(Param::Fixed(0.0));
        let mk = |law: RandomEffectsLaw| {
            build_model(
                data.clone(),
                exact_obs(&y),
                ErrorFamily::normal(),
                law,
                PriorSpec::reference(),
                Mode::Longitudinal,
            )
            .unwrap()
        };
        let pv = params(0.2, 1.0, &[0.3, -0.4]);
        let a = log_joint(&mk(base), &pv).unwrap();
        let b = log_joint(&mk(with_rho), &pv).unwrap();
        assert_relative_eq!(a, b, max_relative = 1e-10);
    }

    #[test]
    fn log_joint_compositional() {
        let data = design(2, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let y: Vec<f64> = (0..6).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let spec = normal_spec(data, exact_obs(&y));
        for _ in 0..10 {
            let pv = params(
                rng.gen_range(-2.0..2.0),
                rng.gen_range(0.3..2.0),
                &[rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)],
            );
            let lj = log_joint(&spec, &pv).unwrap();
            let parts = loglik(&spec, &pv).unwrap().total
                + log_raneff(&spec, &pv).unwrap()
                + crate::priors::log_prior(&spec.prior, &pv);
            assert_relative_eq!(lj, parts, max_relative = 1e-12);
        }
    }

    #[test]
    fn log_joint_soft_rejects_bad_sigma() {
        let data = design(2, 2);
        let spec = normal_spec(data, exact_obs(&[0.4, -0.2, 0.9, 0.3]));
        let pv = params(0.0, -1.0, &[0.0, 0.0]);
        assert_eq!(log_joint_soft(&spec, &pv).unwrap(), f64::NEG_INFINITY);
    }

    fn demo_design() -> DesignData {
        let x = DMatrix::from_column_slice(4, 1, &[1.0, 2.0, 3.0, 4.0]);
        let subj = vec![0, 0, 1, 1];
        let z = intercept_z(&subj, 2);
        DesignData::new(x, z, subj, 1).unwrap()
    }

    // residual log-density with the shared mixer integrated out analytically:
    // a multivariate t for Gamma mixing, plain normal for the point mass
    fn single_mixer_logpdf(e: &[f64], sigma: f64, kind: MixingKind, delta: f64) -> Result<f64> {
        use statrs::function::gamma::ln_gamma;
        let n = e.len() as f64;
        let ss: f64 = e.iter().map(|v| v * v).sum::<f64>() / (sigma * sigma);
        match kind {
            MixingKind::PointMass => Ok(-0.5 * n * LN_2PI - n * sigma.ln() - 0.5 * ss),
            MixingKind::Gamma => {
                let a = 0.5 * delta;
                Ok(ln_gamma(a + 0.5 * n) - ln_gamma(a)
                    - 0.5 * n * (delta * std::f64::consts::PI).ln()
                    - n * sigma.ln()
                    - (a + 0.5 * n) * (ss / delta).ln_1p())
            }
            _ => unreachable!("oracle only covers point-mass and Gamma mixing"),
        }
    }

    #[test]
    fn gaussian_marginal_matches_plain_grid() {
        // independent oracle: brute-force quadrature over (beta, u1, u2) in
        // raw coordinates at a sigma where the peak is wide enough to resolve
        let data = demo_design();
        let y = [0.3, 0.9, 1.4, 2.2];
        let yv = DVector::from_column_slice(&y);
        let sigma = 1.5;
        let dens = |beta: f64, u1: f64, u2: f64| {
            let pred = &data.x * beta + &data.z * DVector::from_vec(vec![u1, u2]);
            let mut lp = numeric::norm_logpdf(u1) + numeric::norm_logpdf(u2);
            for i in 0..4 {
                lp += numeric::norm_logpdf((y[i] - pred[i]) / sigma) - sigma.ln();
            }
            lp.exp()
        };
        let brute = numeric::fixed_quad(
            |beta| {
                numeric::fixed_quad(
                    |u1| numeric::fixed_quad(|u2| dens(beta, u1, u2), -7.0, 7.0, 14),
                    -7.0,
                    7.0,
                    14,
                )
            },
            -7.0,
            8.0,
            14,
        );
        let closed = gaussian_marginal_log(&data, &yv, sigma).exp();
        assert_relative_eq!(closed, brute, max_relative = 1e-9);
    }

    #[test]
    fn single_mixer_marginal_cross_check() {
        // the analytic (beta, u) path against the standardised-grid path fed
        // with the multivariate-t closed form of the shared-mixer density
        let data = demo_design();
        let yv = DVector::from_column_slice(&[0.3, 0.9, 1.4, 2.2]);
        let analytic = single_mixer_marginal(&data, &yv, 1.0, MixingKind::Gamma, 6.0).unwrap();
        let grid = standardised_marginal(&data, &yv, 1.0, &|e, sigma| {
            single_mixer_logpdf(e, sigma, MixingKind::Gamma, 6.0)
        })
        .unwrap();
        assert_relative_eq!(analytic, grid, max_relative = 5e-3);
    }

    #[test]
    fn demo_b_zero_correction_is_identity() {
        let data = demo_design();
        let report = demo_single_mixer_factorisation(
            &data,
            // both datasets sit well off the design column space, otherwise
            // the b = 0 marginal diverges at sigma -> 0
            &[0.3, 0.9, 1.4, 2.2],
            &[-0.5, 0.6, 0.4, 1.1],
            0.0,
            (MixingKind::Gamma, 6.0),
            (MixingKind::Gamma, 12.0),
        )
        .unwrap();
        assert_relative_eq!(report.correction[0], 1.0);
        assert_relative_eq!(report.correction[1], 1.0);
        for k in 0..2 {
            for d in 0..2 {
                assert!(
                    report.factorisation_gap[k][d] < 1e-4,
                    "gap {} at model {k}, dataset {d}",
                    report.factorisation_gap[k][d]
                );
            }
        }
        // with b = 0 the single-mixer Bayes factor collapses to exactly 1
        for d in 0..2 {
            assert_relative_eq!(report.bf_single[d], 1.0, max_relative = 1e-4);
        }
    }

    #[test]
    fn demo_b_one_bayes_factor_is_data_free() {
        let data = demo_design();
        let report = demo_single_mixer_factorisation(
            &data,
            &[0.3, 0.9, 1.4, 2.2],
            &[-1.5, 0.2, 2.4, 0.1],
            1.0,
            (MixingKind::Gamma, 6.0),
            (MixingKind::Gamma, 12.0),
        )
        .unwrap();
        // the single-mixer Bayes factor agrees across the two datasets and
        // equals the ratio of the data-free corrections
        assert_relative_eq!(
            report.bf_single[0],
            report.bf_single[1],
            max_relative = 1e-4
        );
        assert_relative_eq!(
            report.bf_single[0],
            report.correction[0] / report.correction[1],
            max_relative = 1e-4
        );
        for k in 0..2 {
            for d in 0..2 {
                assert!(report.factorisation_gap[k][d] < 1e-4);
            }
        }
        // while the per-observation mixer reacts to the data
        let rel = (report.bf_per_observation[0] - report.bf_per_observation[1]).abs()
            / report.bf_per_observation[0].abs();
        assert!(
            rel > 1e-2,
            "per-observation Bayes factors too close: {:?}",
            report.bf_per_observation
        );
    }
}
