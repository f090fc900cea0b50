//! Synthetic-data studies: scenario generators for the longitudinal and
//! censored simulation designs, fit-model catalogue, and a replicate-parallel
//! study driver that aggregates paper-style summary tables.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dist::{
    ErrorFamily, MarginalKind, MarginalSpec, MixingKind, Param, RandomEffectsLaw, ResolvedMarginal,
    SkewSpec, TwoPieceParameterisation,
};
use crate::error::{Error, Result};
use crate::model::{
    build_model, intercept_z, Censoring, DesignData, Mode, ModelSpec, Observation,
};
use crate::priors::{PriorSpec, ProperPrior};
use crate::sampler::{quantile, run_chain, SamplerConfig};
use crate::selection::select;

/// Simulation scenarios: S1-* use the two-covariate random-intercept design
/// with heavy-tailed or skewed generators, S2-* the time-mean design with
/// right censoring, C-* the skewed-error variants of the S1 design.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScenarioId {
    S1I,
    S1II,
    S1III,
    S1IV,
    S2I,
    S2II,
    CI,
    CII,
    CIII,
    CIV,
}

impl ScenarioId {
    pub const ALL: [ScenarioId; 10] = [
        ScenarioId::S1I,
        ScenarioId::S1II,
        ScenarioId::S1III,
        ScenarioId::S1IV,
        ScenarioId::S2I,
        ScenarioId::S2II,
        ScenarioId::CI,
        ScenarioId::CII,
        ScenarioId::CIII,
        ScenarioId::CIV,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ScenarioId::S1I => "S1-I",
            ScenarioId::S1II => "S1-II",
            ScenarioId::S1III => "S1-III",
            ScenarioId::S1IV => "S1-IV",
            ScenarioId::S2I => "S2-I",
            ScenarioId::S2II => "S2-II",
            ScenarioId::CI => "C-I",
            ScenarioId::CII => "C-II",
            ScenarioId::CIII => "C-III",
            ScenarioId::CIV => "C-IV",
        }
    }
}

impl std::str::FromStr for ScenarioId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ScenarioId::ALL
            .iter()
            .copied()
            .find(|id| id.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::UnknownScenario(s.to_string()))
    }
}

impl std::fmt::Display for ScenarioId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

fn t_gen(mu: f64, sigma: f64, delta: f64) -> ResolvedMarginal {
    ResolvedMarginal {
        kind: MarginalKind::StudentT,
        mu,
        sigma,
        gamma: 0.0,
        delta,
    }
}

fn n_gen(mu: f64, sigma: f64) -> ResolvedMarginal {
    ResolvedMarginal {
        kind: MarginalKind::Normal,
        mu,
        sigma,
        gamma: 0.0,
        delta: 1.0,
    }
}

fn tpn_gen(mu: f64, sigma: f64, gamma: f64) -> ResolvedMarginal {
    ResolvedMarginal {
        kind: MarginalKind::TwoPieceNormal,
        mu,
        sigma,
        gamma,
        delta: 1.0,
    }
}

/// Censoring rule: responses above this value are right-censored at it
/// (log10 of 75000 in the S2 scenarios).
pub fn s2_censor_threshold() -> f64 {
    75000f64.log10()
}

/// One generating configuration: true error and random-effect laws, true
/// regression coefficients, and the optional censoring rule.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub id: ScenarioId,
    pub error_gen: ResolvedMarginal,
    pub raneff_gen: ResolvedMarginal,
    pub beta: Vec<f64>,
    pub censor_threshold: Option<f64>,
}

impl Scenario {
    pub fn new(id: ScenarioId) -> Self {
        let (error_gen, raneff_gen) = match id {
            ScenarioId::S1I => (t_gen(0.0, 0.5, 2.0), tpn_gen(-1.5, 0.5, 0.5)),
            ScenarioId::S1II => (n_gen(0.0, 0.5), tpn_gen(-1.5, 0.5, 0.5)),
            ScenarioId::S1III => (t_gen(0.0, 0.5, 2.0), n_gen(-1.5, 0.5)),
            ScenarioId::S1IV => (n_gen(0.0, 0.5), n_gen(-1.5, 0.5)),
            ScenarioId::S2I => (n_gen(0.0, 0.5), n_gen(0.0, 0.25)),
            ScenarioId::S2II => (t_gen(0.0, 0.5, 2.0), t_gen(0.0, 0.25, 2.0)),
            ScenarioId::CI => (n_gen(0.0, 0.5), n_gen(-1.5, 0.5)),
            ScenarioId::CII => (tpn_gen(0.0, 0.5, 0.5), n_gen(-1.5, 0.5)),
            ScenarioId::CIII => (n_gen(0.0, 0.5), tpn_gen(-1.5, 0.5, 0.5)),
            ScenarioId::CIV => (tpn_gen(0.0, 0.5, 0.5), tpn_gen(-1.5, 0.5, 0.5)),
        };
        let (beta, censor_threshold) = if matches!(id, ScenarioId::S2I | ScenarioId::S2II) {
            (vec![2.5, 3.0, 3.5, 4.0, 4.5], Some(s2_censor_threshold()))
        } else {
            (vec![2.0, 1.0], None)
        };
        Scenario {
            id,
            error_gen,
            raneff_gen,
            beta,
            censor_threshold,
        }
    }

    /// The fit models the corresponding study compares.
    pub fn fit_models(&self) -> Vec<FitModel> {
        match self.id {
            ScenarioId::S1I | ScenarioId::S1II | ScenarioId::S1III | ScenarioId::S1IV => {
                vec![FitModel::TErrorTpnEffects, FitModel::NormalNormal]
            }
            ScenarioId::S2I | ScenarioId::S2II => (1..=4).map(FitModel::S2Model).collect(),
            _ => vec![FitModel::TpnErrorTpnEffects, FitModel::NormalNormal],
        }
    }
}

/// One simulated dataset, ready to be wrapped into any fit model.
#[derive(Debug, Clone)]
pub struct GeneratedData {
    pub x: DMatrix<f64>,
    pub subject_index: Vec<usize>,
    pub r: usize,
    pub observations: Vec<Observation>,
    pub u_true: Vec<f64>,
    pub censored_fraction: f64,
}

/// Simulate one replicate with `r` subjects (5 repeated measures each).
/// Deterministic given the seed.
pub fn generate(scenario: &Scenario, r: usize, seed: u64) -> Result<GeneratedData> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let reps = 5;
    let n = r * reps;
    let s2 = matches!(scenario.id, ScenarioId::S2I | ScenarioId::S2II);
    let x = if s2 {
        // indicator of measurement occasion: beta_j is the occasion mean
        DMatrix::from_fn(n, reps, |row, col| if row % reps == col { 1.0 } else { 0.0 })
    } else {
        // t_ij = j - 3 within subject, w_i = 1 for the first half of subjects
        DMatrix::from_fn(n, 2, |row, col| {
            if col == 0 {
                (row % reps) as f64 + 1.0 - 3.0
            } else if (row / reps + 1) * 2 <= r {
                1.0
            } else {
                0.0
            }
        })
    };
    let subject_index: Vec<usize> = (0..n).map(|row| row / reps).collect();
    let u_true: Vec<f64> = (0..r)
        .map(|_| scenario.raneff_gen.sample(&mut rng))
        .collect::<Result<_>>()?;
    let mut observations = Vec::with_capacity(n);
    let mut censored = 0usize;
    for row in 0..n {
        let mut mean = 0.0;
        for (j, b) in scenario.beta.iter().enumerate() {
            mean += x[(row, j)] * b;
        }
        let y = mean + u_true[row / reps] + scenario.error_gen.sample(&mut rng)?;
        let obs = match scenario.censor_threshold {
            Some(c) if y > c => {
                censored += 1;
                Observation {
                    value: c,
                    censor: Censoring::Right(c),
                    row,
                }
            }
            _ => Observation {
                value: y,
                censor: Censoring::Exact,
                row,
            },
        };
        observations.push(obs);
    }
    Ok(GeneratedData {
        x,
        subject_index,
        r,
        observations,
        u_true,
        censored_fraction: censored as f64 / n as f64,
    })
}

/// The fitting models used across the studies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitModel {
    /// t errors with free df, TPN(mu, sigma, gamma) random intercept.
    TErrorTpnEffects,
    /// Normal errors, N(mu, sigma) random intercept.
    NormalNormal,
    /// The censored-study ladder: 1 = N/N, 2 = t/N, 3 = N/t, 4 = t/t, all
    /// with zero-mean random intercepts.
    S2Model(u8),
    /// TPN errors with free skewness, TPN random intercept.
    TpnErrorTpnEffects,
}

impl FitModel {
    pub fn label(&self) -> String {
        match self {
            FitModel::TErrorTpnEffects => "t errors / TPN effects".into(),
            FitModel::NormalNormal => "normal errors / normal effects".into(),
            FitModel::S2Model(k) => format!("Model {k}"),
            FitModel::TpnErrorTpnEffects => "TPN errors / TPN effects".into(),
        }
    }

    /// Savage-Dickey point hypotheses this model reports.
    pub fn hypotheses(&self) -> Vec<(&'static str, f64)> {
        match self {
            FitModel::TErrorTpnEffects => vec![("gamma", 0.0)],
            FitModel::TpnErrorTpnEffects => vec![("gamma_eps", 0.0), ("gamma", 0.0)],
            _ => vec![],
        }
    }

    pub fn build(&self, data: &GeneratedData) -> Result<ModelSpec> {
        let design = DesignData::new(
            data.x.clone(),
            intercept_z(&data.subject_index, data.r),
            data.subject_index.clone(),
            1,
        )?;
        let uniform_mu = ProperPrior::UniformWindow {
            lo: -100.0,
            hi: 100.0,
        };
        let half_cauchy = ProperPrior::HalfCauchy { scale: 1.0 };
        let uniform_gamma = ProperPrior::UniformWindow { lo: -1.0, hi: 1.0 };
        let (error, raneff, prior) = match self {
            FitModel::TErrorTpnEffects => (
                ErrorFamily::student_t(),
                RandomEffectsLaw {
                    marginals: vec![MarginalSpec::two_piece_normal(
                        Param::Free,
                        Param::Free,
                        Param::Free,
                    )],
                    copula_rho: None,
                    nonnegative_support: false,
                },
                PriorSpec {
                    // k sized so the prior odds of delta_eps > 10 are near
                    // even: at study scale (r subjects, 5 observations each)
                    // the data cannot overcome the default k = 1.2, which
                    // stakes 4:1 prior odds against normal-like tails
                    delta_eps_prior: Some(ProperPrior::DfPrior { k: 10.0, lo: 0.0 }),
                    raneff_hyperpriors: vec![
                        ("mu".into(), uniform_mu),
                        ("sigma".into(), half_cauchy),
                        ("gamma".into(), uniform_gamma),
                    ],
                    ..PriorSpec::reference()
                },
            ),
            FitModel::NormalNormal => (
                ErrorFamily::normal(),
                RandomEffectsLaw {
                    marginals: vec![MarginalSpec::normal(Param::Free, Param::Free)],
                    copula_rho: None,
                    nonnegative_support: false,
                },
                PriorSpec {
                    raneff_hyperpriors: vec![
                        ("mu".into(), uniform_mu),
                        ("sigma".into(), half_cauchy),
                    ],
                    ..PriorSpec::reference()
                },
            ),
            FitModel::S2Model(k) => {
                let t_err = matches!(k, 2 | 4);
                let t_u = matches!(k, 3 | 4);
                let error = if t_err {
                    ErrorFamily::student_t()
                } else {
                    ErrorFamily::normal()
                };
                let marginal = if t_u {
                    MarginalSpec::student_t(Param::Fixed(0.0), Param::Free, Param::Free)
                } else {
                    MarginalSpec::normal(Param::Fixed(0.0), Param::Free)
                };
                let mut hyper = vec![("sigma".to_string(), half_cauchy)];
                if t_u {
                    hyper.push(("delta".into(), ProperPrior::df_default()));
                }
                (
                    error,
                    RandomEffectsLaw {
                        marginals: vec![marginal],
                        copula_rho: None,
                        nonnegative_support: false,
                    },
                    PriorSpec {
                        delta_eps_prior: t_err.then(ProperPrior::df_default),
                        raneff_hyperpriors: hyper,
                        ..PriorSpec::reference()
                    },
                )
            }
            FitModel::TpnErrorTpnEffects => (
                ErrorFamily {
                    mixing: MixingKind::PointMass,
                    delta: Param::Fixed(1.0),
                    skew: Some(SkewSpec {
                        parameterisation: TwoPieceParameterisation::EpsilonSkew,
                        gamma: Param::Free,
                    }),
                },
                RandomEffectsLaw {
                    marginals: vec![MarginalSpec::two_piece_normal(
                        Param::Free,
                        Param::Free,
                        Param::Free,
                    )],
                    copula_rho: None,
                    nonnegative_support: false,
                },
                PriorSpec {
                    gamma_eps_prior: Some(uniform_gamma.clone()),
                    raneff_hyperpriors: vec![
                        ("mu".into(), uniform_mu),
                        ("sigma".into(), half_cauchy),
                        ("gamma".into(), uniform_gamma),
                    ],
                    ..PriorSpec::reference()
                },
            ),
        };
        build_model(
            design,
            data.observations.clone(),
            error,
            raneff,
            prior,
            Mode::Longitudinal,
        )
    }
}

/// Study driver settings; `desk()` is sized for minutes, `paper()` for the
/// full-scale run.
#[derive(Debug, Clone)]
pub struct StudyConfig {
    pub replicates: usize,
    /// Subjects per replicate.
    pub r: usize,
    pub sampler: SamplerConfig,
    pub master_seed: u64,
}

impl StudyConfig {
    pub fn desk() -> Self {
        StudyConfig {
            replicates: 20,
            r: 20,
            sampler: SamplerConfig {
                burn_in: 2000,
                thin: 10,
                keep: 500,
                ..SamplerConfig::default()
            },
            master_seed: 20240817,
        }
    }

    pub fn paper() -> Self {
        StudyConfig {
            replicates: 100,
            r: 100,
            sampler: SamplerConfig::default(),
            master_seed: 20240817,
        }
    }
}

/// Aggregated posterior summaries for one parameter under one fit model.
/// Both readings of "intervals of the median estimators" are reported:
/// quantiles of the replicate medians, and medians of the replicate
/// interval endpoints.
#[derive(Debug, Clone, Serialize)]
pub struct ParamRow {
    pub model: String,
    pub parameter: String,
    pub median_of_medians: f64,
    pub medians_q025: f64,
    pub medians_q975: f64,
    pub median_lo95: f64,
    pub median_hi95: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct StudyResult {
    pub scenario: String,
    pub replicates_requested: usize,
    pub replicates_used: usize,
    pub rows: Vec<ParamRow>,
    /// (model, hypothesis, median Bayes factor).
    pub bayes_factor_rows: Vec<(String, String, f64)>,
    /// (model, average posterior odds of delta_eps > 10).
    pub odds_rows: Vec<(String, f64)>,
    pub odds_per_replicate: Vec<(String, Vec<f64>)>,
    /// (model, median LPML).
    pub lpml_rows: Vec<(String, f64)>,
    pub lpml_per_replicate: Vec<(String, Vec<f64>)>,
    pub censored_fractions: Vec<f64>,
    /// Per-replicate failures, logged and excluded, never silent.
    pub failures: Vec<String>,
}

struct ModelSummary {
    params: Vec<(String, f64, f64, f64)>,
    bfs: Vec<(String, f64)>,
    odds: Option<f64>,
    lpml: f64,
}

struct ReplicateSummary {
    censored_fraction: f64,
    models: Vec<ModelSummary>,
}

fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn run_replicate(
    scenario: &Scenario,
    models: &[FitModel],
    config: &StudyConfig,
    rep: u64,
) -> Result<ReplicateSummary> {
    let data = generate(scenario, config.r, mix_seed(config.master_seed, rep))?;
    let mut summaries = Vec::with_capacity(models.len());
    for (k, model) in models.iter().enumerate() {
        let spec = model.build(&data)?;
        let sampler = SamplerConfig {
            seed: mix_seed(config.master_seed, rep * 1000 + k as u64 + 1),
            ..config.sampler.clone()
        };
        let sample = run_chain(&spec, &sampler)?;
        let mut params = Vec::new();
        for (idx, name) in sample.names.iter().enumerate() {
            if crate::sampler::is_raneff_coord(name) {
                continue;
            }
            let col: Vec<f64> = sample.draws.iter().map(|row| row[idx]).collect();
            params.push((
                name.clone(),
                quantile(&col, 0.5),
                quantile(&col, 0.025),
                quantile(&col, 0.975),
            ));
        }
        let report = select(&spec, &sample, &model.hypotheses())?;
        summaries.push(ModelSummary {
            params,
            bfs: report.bayes_factors,
            odds: report.odds_delta_gt_10,
            lpml: report.lpml.unwrap_or(f64::NAN),
        });
    }
    Ok(ReplicateSummary {
        censored_fraction: data.censored_fraction,
        models: summaries,
    })
}

/// Run the full study: replicate-parallel generate / check / fit / select,
/// then deterministic aggregation in replicate order.
pub fn run_study(
    scenario: &Scenario,
    models: &[FitModel],
    config: &StudyConfig,
) -> StudyResult {
    let outcomes: Vec<(u64, Result<ReplicateSummary>)> = (0..config.replicates as u64)
        .into_par_iter()
        .map(|rep| (rep, run_replicate(scenario, models, config, rep)))
        .collect();
    let mut good = Vec::new();
    let mut failures = Vec::new();
    let mut censored_fractions = Vec::new();
    for (rep, outcome) in outcomes {
        match outcome {
            Ok(s) => {
                censored_fractions.push(s.censored_fraction);
                good.push(s);
            }
            Err(e) => failures.push(format!("replicate {rep}: {e}")),
        }
    }
    let mut rows = Vec::new();
    let mut bayes_factor_rows = Vec::new();
    let mut odds_rows = Vec::new();
    let mut odds_per_replicate = Vec::new();
    let mut lpml_rows = Vec::new();
    let mut lpml_per_replicate = Vec::new();
    for (k, model) in models.iter().enumerate() {
        let label = model.label();
        let per_model: Vec<&ModelSummary> = good.iter().map(|s| &s.models[k]).collect();
        if per_model.is_empty() {
            continue;
        }
        for (pi, (name, _, _, _)) in per_model[0].params.iter().enumerate() {
            let meds: Vec<f64> = per_model.iter().map(|m| m.params[pi].1).collect();
            let los: Vec<f64> = per_model.iter().map(|m| m.params[pi].2).collect();
            let his: Vec<f64> = per_model.iter().map(|m| m.params[pi].3).collect();
            rows.push(ParamRow {
                model: label.clone(),
                parameter: name.clone(),
                median_of_medians: quantile(&meds, 0.5),
                medians_q025: quantile(&meds, 0.025),
                medians_q975: quantile(&meds, 0.975),
                median_lo95: quantile(&los, 0.5),
                median_hi95: quantile(&his, 0.5),
            });
        }
        for (hi, (hyp, _)) in per_model[0].bfs.iter().enumerate() {
            let bfs: Vec<f64> = per_model.iter().map(|m| m.bfs[hi].1).collect();
            bayes_factor_rows.push((label.clone(), hyp.clone(), quantile(&bfs, 0.5)));
        }
        if per_model[0].odds.is_some() {
            let odds: Vec<f64> = per_model.iter().filter_map(|m| m.odds).collect();
            odds_rows.push((label.clone(), odds.iter().sum::<f64>() / odds.len() as f64));
            odds_per_replicate.push((label.clone(), odds));
        }
        let lpmls: Vec<f64> = per_model.iter().map(|m| m.lpml).collect();
        lpml_rows.push((label.clone(), quantile(&lpmls, 0.5)));
        lpml_per_replicate.push((label.clone(), lpmls));
    }
    StudyResult {
        scenario: scenario.id.to_string(),
        replicates_requested: config.replicates,
        replicates_used: good.len(),
        rows,
        bayes_factor_rows,
        odds_rows,
        odds_per_replicate,
        lpml_rows,
        lpml_per_replicate,
        censored_fractions,
        failures,
    }
}

impl StudyResult {
    /// Look up an aggregated row.
    pub fn row(&self, model_label: &str, parameter: &str) -> Option<&ParamRow> {
        self.rows
            .iter()
            .find(|r| r.model == model_label && r.parameter == parameter)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "model,quantity,agg_median,medians_q025,medians_q975,median_lo95,median_hi95\n",
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
                r.model,
                r.parameter,
                r.median_of_medians,
                r.medians_q025,
                r.medians_q975,
                r.median_lo95,
                r.median_hi95
            ));
        }
        for (model, hyp, bf) in &self.bayes_factor_rows {
            out.push_str(&format!("{model},BF[{hyp}],{bf:.6},,,,\n"));
        }
        for (model, odds) in &self.odds_rows {
            out.push_str(&format!("{model},odds[delta_eps > 10],{odds:.6},,,,\n"));
        }
        for (model, lpml) in &self.lpml_rows {
            out.push_str(&format!("{model},LPML,{lpml:.6},,,,\n"));
        }
        if !self.censored_fractions.is_empty() {
            let mean = self.censored_fractions.iter().sum::<f64>()
                / self.censored_fractions.len() as f64;
            out.push_str(&format!("-,censored_fraction_mean,{mean:.6},,,,\n"));
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "Scenario {}: {} of {} replicates used\n",
            self.scenario, self.replicates_used, self.replicates_requested
        );
        out.push_str(&format!(
            "{:<32} {:<12} {:>10} {:>24} {:>24}\n",
            "model", "parameter", "agg median", "q(2.5,97.5) of medians", "median of 95% CI"
        ));
        for r in &self.rows {
            out.push_str(&format!(
                "{:<32} {:<12} {:>10.3} {:>24} {:>24}\n",
                r.model,
                r.parameter,
                r.median_of_medians,
                format!("({:.3},{:.3})", r.medians_q025, r.medians_q975),
                format!("({:.3},{:.3})", r.median_lo95, r.median_hi95)
            ));
        }
        for (model, hyp, bf) in &self.bayes_factor_rows {
            out.push_str(&format!("{model:<32} BF[{hyp}] = {bf:.3}\n"));
        }
        for (model, odds) in &self.odds_rows {
            out.push_str(&format!("{model:<32} odds(delta_eps > 10) = {odds:.3}\n"));
        }
        for (model, lpml) in &self.lpml_rows {
            out.push_str(&format!("{model:<32} LPML = {lpml:.2}\n"));
        }
        for f in &self.failures {
            out.push_str(&format!("FAILED {f}\n"));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::DVector;

    #[test]
    fn scenario_ids_roundtrip() {
        for id in ScenarioId::ALL {
            let parsed: ScenarioId = id.as_str().parse().unwrap();
            assert_eq!(parsed, id);
        }
        assert!("S9-X".parse::<ScenarioId>().is_err());
    }

    #[test]
    fn generation_is_deterministic() {
        let sc = Scenario::new(ScenarioId::S1I);
        let a = generate(&sc, 12, 7).unwrap();
        let b = generate(&sc, 12, 7).unwrap();
        assert_eq!(a.x, b.x);
        assert_eq!(
            a.observations.iter().map(|o| o.value).collect::<Vec<_>>(),
            b.observations.iter().map(|o| o.value).collect::<Vec<_>>()
        );
        let c = generate(&sc, 12, 8).unwrap();
        assert_ne!(a.observations[0].value, c.observations[0].value);
    }

    #[test]
    fn s1_design_structure() {
        let sc = Scenario::new(ScenarioId::S1IV);
        let d = generate(&sc, 10, 1).unwrap();
        assert_eq!(d.x.nrows(), 50);
        // t_ij cycles -2..2 within each subject
        for row in 0..50 {
            assert_eq!(d.x[(row, 0)], (row % 5) as f64 - 2.0);
            let w = if row / 5 < 5 { 1.0 } else { 0.0 };
            assert_eq!(d.x[(row, 1)], w);
        }
        assert_eq!(d.censored_fraction, 0.0);
    }

    #[test]
    fn s1_iv_ols_recovers_beta1() {
        let sc = Scenario::new(ScenarioId::S1IV);
        let d = generate(&sc, 100, 42).unwrap();
        let y = DVector::from_iterator(500, d.observations.iter().map(|o| o.value));
        // least squares with an intercept column absorbing mu
        let xd = DMatrix::from_fn(500, 3, |i, j| if j == 2 { 1.0 } else { d.x[(i, j)] });
        let svd = xd.clone().svd(true, true);
        let est = svd.solve(&y, 1e-12).unwrap();
        let resid = &y - &xd * &est;
        let s2 = resid.norm_squared() / (500.0 - 3.0);
        let xtx_inv = (xd.transpose() * &xd).try_inverse().unwrap();
        let se = (s2 * xtx_inv[(0, 0)]).sqrt();
        assert!(
            (est[0] - 2.0).abs() < 3.0 * se,
            "beta1 = {} +- {se}",
            est[0]
        );
    }

    #[test]
    fn s2_censoring_fraction_in_band() {
        for id in [ScenarioId::S2I, ScenarioId::S2II] {
            let sc = Scenario::new(id);
            let mut fractions = Vec::new();
            for rep in 0..20 {
                fractions.push(generate(&sc, 100, 100 + rep).unwrap().censored_fraction);
            }
            let mean = fractions.iter().sum::<f64>() / fractions.len() as f64;
            assert!(
                (0.05..=0.20).contains(&mean),
                "{id}: mean censored fraction {mean}"
            );
        }
    }

    #[test]
    fn c_ii_error_negative_mass() {
        // TPN(0, 0.5, 0.5) puts mass (1 + gamma) / 2 below the mode
        let sc = Scenario::new(ScenarioId::CII);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let neg = (0..10_000)
            .filter(|_| sc.error_gen.sample(&mut rng).unwrap() < 0.0)
            .count();
        assert_relative_eq!(neg as f64 / 10_000.0, 0.75, epsilon = 0.02);
    }

    #[test]
    fn zero_replicates_empty_table() {
        let sc = Scenario::new(ScenarioId::S1IV);
        let config = StudyConfig {
            replicates: 0,
            ..StudyConfig::desk()
        };
        let result = run_study(&sc, &sc.fit_models(), &config);
        assert!(result.rows.is_empty());
        assert!(result.failures.is_empty());
        assert_eq!(result.replicates_used, 0);
    }

    fn tiny_config() -> StudyConfig {
        StudyConfig {
            replicates: 2,
            r: 8,
            sampler: SamplerConfig {
                burn_in: 300,
                thin: 2,
                keep: 150,
                ..SamplerConfig::default()
            },
            master_seed: 99,
        }
    }

    #[test]
    fn study_reproducible_with_same_seed() {
        let sc = Scenario::new(ScenarioId::S1IV);
        let models = [FitModel::NormalNormal];
        let a = run_study(&sc, &models, &tiny_config());
        let b = run_study(&sc, &models, &tiny_config());
        assert!(a.failures.is_empty(), "{:?}", a.failures);
        assert_eq!(a.to_csv(), b.to_csv());
    }

    #[test]
    fn truth_recovery_smoke() {
        let sc = Scenario::new(ScenarioId::S1IV);
        let config = StudyConfig {
            replicates: 3,
            r: 16,
            sampler: SamplerConfig {
                burn_in: 800,
                thin: 2,
                keep: 300,
                ..SamplerConfig::default()
            },
            master_seed: 11,
        };
        let result = run_study(&sc, &[FitModel::NormalNormal], &config);
        assert!(result.failures.is_empty(), "{:?}", result.failures);
        let b1 = result
            .row("normal errors / normal effects", "beta1")
            .unwrap();
        assert!(
            (1.9..=2.1).contains(&b1.median_of_medians),
            "beta1 aggregate {}",
            b1.median_of_medians
        );
    }
}
