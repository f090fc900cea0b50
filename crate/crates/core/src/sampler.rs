//! Adaptive Metropolis-within-Gibbs sampler: scalar Gaussian random-walk
//! updates on transformed coordinates, per-subject block updates for the
//! random effects, and batch-wise diminishing adaptation frozen after burn-in.

use nalgebra::DVector;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dist::{HyperRole, TwoPieceParameterisation};
use crate::error::{Error, Result};
use crate::likelihood::log_joint_soft;
use crate::model::{Censoring, ModelSpec, ParameterVector};
use crate::priors::ProperPrior;
use crate::propriety::{check_all, Overall, Verdict};

/// Sampler schedule and tuning knobs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub burn_in: usize,
    pub thin: usize,
    pub keep: usize,
    pub adapt_batch: usize,
    pub target_accept: f64,
    pub seed: u64,
    /// Run even when the propriety verdict is not Proper.
    #[serde(default)]
    pub skip_propriety_check: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            burn_in: 7500,
            thin: 10,
            keep: 1000,
            adapt_batch: 50,
            target_accept: 0.44,
            seed: 0,
            skip_propriety_check: false,
        }
    }
}

impl SamplerConfig {
    pub fn total_iterations(&self) -> usize {
        self.burn_in + self.thin * self.keep
    }
}

/// Bijection between a natural parameter domain and the real line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Transform {
    Identity,
    /// Natural domain (0, inf), sampled as log.
    Log,
    /// Natural domain (-1, 1), sampled as atanh.
    Atanh,
}

impl Transform {
    fn natural(self, z: f64) -> f64 {
        match self {
            Transform::Identity => z,
            Transform::Log => z.exp(),
            Transform::Atanh => z.tanh(),
        }
    }

    fn unconstrained(self, x: f64) -> f64 {
        match self {
            Transform::Identity => x,
            Transform::Log => x.ln(),
            Transform::Atanh => x.atanh(),
        }
    }

    /// log |d natural / d z|, as a function of z.
    fn log_jacobian(self, z: f64) -> f64 {
        match self {
            Transform::Identity => 0.0,
            Transform::Log => z,
            Transform::Atanh => {
                let t = z.tanh();
                (1.0 - t * t).max(f64::MIN_POSITIVE).ln()
            }
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Coord {
    pub name: String,
    pub transform: Transform,
}

#[derive(Debug, Clone)]
pub(crate) struct Block {
    pub label: String,
    pub coords: Vec<usize>,
}

/// Coordinate layout of the free parameters for a given model.
#[derive(Debug, Clone)]
pub(crate) struct Layout {
    pub coords: Vec<Coord>,
    pub blocks: Vec<Block>,
    p: usize,
    q: usize,
    r: usize,
    delta_free: bool,
    gamma_free: bool,
    n_theta: usize,
}

/// True for the per-subject random-effect coordinates u1, u2, ...; model
/// parameters never match this pattern.
pub fn is_raneff_coord(name: &str) -> bool {
    name.strip_prefix('u')
        .map(|rest| !rest.is_empty() && rest.bytes().all(|b| b.is_ascii_digit()))
        .unwrap_or(false)
}

pub(crate) fn build_layout(spec: &ModelSpec) -> Layout {
    let data = &spec.data;
    let mut coords = Vec::new();
    let mut blocks = Vec::new();
    for j in 0..data.p {
        coords.push(Coord {
            name: format!("beta{}", j + 1),
            transform: Transform::Identity,
        });
        blocks.push(Block {
            label: format!("beta{}", j + 1),
            coords: vec![coords.len() - 1],
        });
    }
    coords.push(Coord {
        name: "sigma_eps".into(),
        transform: Transform::Log,
    });
    blocks.push(Block {
        label: "sigma_eps".into(),
        coords: vec![coords.len() - 1],
    });
    let delta_free = spec.error.delta_is_free();
    if delta_free {
        coords.push(Coord {
            name: "delta_eps".into(),
            transform: Transform::Log,
        });
        blocks.push(Block {
            label: "delta_eps".into(),
            coords: vec![coords.len() - 1],
        });
    }
    let gamma_free = spec.error.gamma_is_free();
    if gamma_free {
        let par = spec.error.skew.expect("free gamma implies a skew spec").parameterisation;
        let transform = match par {
            TwoPieceParameterisation::EpsilonSkew => Transform::Atanh,
            TwoPieceParameterisation::InverseScaleFactors => Transform::Log,
        };
        coords.push(Coord {
            name: "gamma_eps".into(),
            transform,
        });
        blocks.push(Block {
            label: "gamma_eps".into(),
            coords: vec![coords.len() - 1],
        });
    }
    let hypers = spec.random_effects.hyperparams();
    for (name, role) in &hypers {
        let transform = match role {
            HyperRole::Location => Transform::Identity,
            HyperRole::Scale | HyperRole::Shape => Transform::Log,
            HyperRole::Skewness | HyperRole::Correlation => Transform::Atanh,
        };
        coords.push(Coord {
            name: name.clone(),
            transform,
        });
        blocks.push(Block {
            label: name.clone(),
            coords: vec![coords.len() - 1],
        });
    }
    debug_assert!(!coords.iter().any(|c| is_raneff_coord(&c.name)));
    for s in 0..data.r {
        let mut idx = Vec::with_capacity(data.q);
        for j in 0..data.q {
            coords.push(Coord {
                name: format!("u{}", s * data.q + j + 1),
                transform: Transform::Identity,
            });
            idx.push(coords.len() - 1);
        }
        blocks.push(Block {
            label: format!("u[{}]", s + 1),
            coords: idx,
        });
    }
    Layout {
        coords,
        blocks,
        p: data.p,
        q: data.q,
        r: data.r,
        delta_free,
        gamma_free,
        n_theta: hypers.len(),
    }
}

impl Layout {
    pub fn to_params(&self, z: &[f64]) -> ParameterVector {
        let nat = |i: usize| self.coords[i].transform.natural(z[i]);
        let mut i = 0;
        let beta = DVector::from_fn(self.p, |j, _| {
            let _ = j;
            let v = nat(i);
            i += 1;
            v
        });
        let sigma_eps = nat(i);
        i += 1;
        let delta_eps = if self.delta_free {
            let v = nat(i);
            i += 1;
            Some(v)
        } else {
            None
        };
        let gamma_eps = if self.gamma_free {
            let v = nat(i);
            i += 1;
            Some(v)
        } else {
            None
        };
        let mut theta_u = Vec::with_capacity(self.n_theta);
        for _ in 0..self.n_theta {
            theta_u.push(nat(i));
            i += 1;
        }
        let u = DVector::from_fn(self.q * self.r, |j, _| {
            let _ = j;
            let v = nat(i);
            i += 1;
            v
        });
        ParameterVector {
            beta,
            sigma_eps,
            delta_eps,
            gamma_eps,
            theta_u,
            u,
        }
    }

    pub fn from_params(&self, pv: &ParameterVector) -> Vec<f64> {
        let mut nat = Vec::with_capacity(self.coords.len());
        nat.extend(pv.beta.iter().copied());
        nat.push(pv.sigma_eps);
        if self.delta_free {
            nat.push(pv.delta_eps.expect("layout expects a free delta"));
        }
        if self.gamma_free {
            nat.push(pv.gamma_eps.expect("layout expects a free gamma"));
        }
        nat.extend(pv.theta_u.iter().copied());
        nat.extend(pv.u.iter().copied());
        nat.iter()
            .zip(&self.coords)
            .map(|(&x, c)| c.transform.unconstrained(x))
            .collect()
    }
}

/// Snapshot of the chain at the end of a run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChainState {
    pub params: ParameterVector,
    pub log_proposal_scales: Vec<f64>,
    pub iteration: usize,
    pub accept_counts: Vec<usize>,
}

/// Retained posterior draws on the natural scale, one named column per
/// parameter.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PosteriorSample {
    pub names: Vec<String>,
    /// draws[s][k] is retained draw s of parameter k.
    pub draws: Vec<Vec<f64>>,
    pub accept_rates: Vec<(String, f64)>,
    /// (iteration, log proposal scales) after each adaptation batch.
    pub scale_trace: Vec<(usize, Vec<f64>)>,
    pub final_state: ChainState,
    pub seed: u64,
}

impl PosteriorSample {
    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::ParameterAbsent(name.into()))
    }

    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let k = self.column_index(name)?;
        Ok(self.draws.iter().map(|row| row[k]).collect())
    }

    /// Write the draws as a columnar CSV with one header row.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(&self.names)?;
        for row in &self.draws {
            out.write_record(row.iter().map(|v| v.to_string()))?;
        }
        out.flush()?;
        Ok(())
    }

    /// Read draws back from CSV; run metadata is not stored in the CSV and
    /// comes back empty.
    pub fn read_csv<R: std::io::Read>(r: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
        let names: Vec<String> = rdr
            .headers()?
            .iter()
            .map(|s| s.to_string())
            .collect();
        let mut draws = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let row: std::result::Result<Vec<f64>, _> =
                rec.iter().map(|s| s.parse::<f64>()).collect();
            let row = row.map_err(|e| Error::SchemaError(format!("bad numeric cell: {e}")))?;
            if row.len() != names.len() {
                return Err(Error::SchemaError(format!(
                    "row has {} cells, header has {}",
                    row.len(),
                    names.len()
                )));
            }
            draws.push(row);
        }
        Ok(PosteriorSample {
            names,
            draws,
            accept_rates: Vec::new(),
            scale_trace: Vec::new(),
            final_state: ChainState {
                params: ParameterVector {
                    beta: DVector::zeros(0),
                    sigma_eps: 1.0,
                    delta_eps: None,
                    gamma_eps: None,
                    theta_u: vec![],
                    u: DVector::zeros(0),
                },
                log_proposal_scales: vec![],
                iteration: 0,
                accept_counts: vec![],
            },
            seed: 0,
        })
    }
}

/// Reconstruct the full parameter vector of one retained draw.
pub fn draw_to_params(spec: &ModelSpec, sample: &PosteriorSample, index: usize) -> Result<ParameterVector> {
    let layout = build_layout(spec);
    if layout.coords.len() != sample.names.len() {
        return Err(Error::DimensionMismatch(format!(
            "sample has {} columns, model has {} free parameters",
            sample.names.len(),
            layout.coords.len()
        )));
    }
    let row = sample
        .draws
        .get(index)
        .ok_or(Error::EmptySample)?;
    let z: Vec<f64> = row
        .iter()
        .zip(&layout.coords)
        .map(|(&x, c)| c.transform.unconstrained(x))
        .collect();
    Ok(layout.to_params(&z))
}

struct ChainRun {
    accepted: Vec<usize>,
    final_scales: Vec<f64>,
    scale_trace: Vec<(usize, Vec<f64>)>,
    final_z: Vec<f64>,
    iterations: usize,
}

/// Run the adaptive Metropolis-within-Gibbs kernel on an arbitrary log target
/// over unconstrained coordinates (one block per coordinate), starting from
/// `init`. Returns the retained draws; useful for validating the kernel
/// against targets with known distributions.
pub fn sample_target(
    target: impl Fn(&[f64]) -> Result<f64>,
    init: Vec<f64>,
    config: &SamplerConfig,
) -> Result<Vec<Vec<f64>>> {
    let blocks: Vec<Block> = (0..init.len())
        .map(|k| Block {
            label: format!("z{}", k + 1),
            coords: vec![k],
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut draws = Vec::with_capacity(config.keep);
    run_blocks(&|z: &[f64]| target(z), &blocks, init, config, &mut rng, |z| {
        draws.push(z.to_vec())
    })?;
    Ok(draws)
}

/// Core Metropolis-within-Gibbs loop over transformed coordinates. The target
/// closure receives the full transformed vector and must already include any
/// Jacobian terms.
fn run_blocks(
    target: &dyn Fn(&[f64]) -> Result<f64>,
    blocks: &[Block],
    mut z: Vec<f64>,
    config: &SamplerConfig,
    rng: &mut ChaCha8Rng,
    mut retain: impl FnMut(&[f64]),
) -> Result<ChainRun> {
    let mut t_cur = target(&z)?;
    if !t_cur.is_finite() {
        return Err(Error::NonFiniteLogJoint);
    }
    let mut log_scales: Vec<f64> = blocks
        .iter()
        .map(|b| (0.5 / (b.coords.len() as f64).sqrt()).ln())
        .collect();
    let mut accepted = vec![0usize; blocks.len()];
    let mut batch_accepted = vec![0usize; blocks.len()];
    let mut scale_trace = Vec::new();
    let mut batch_number = 0usize;
    let total = config.total_iterations();
    let mut proposal = z.clone();
    for it in 0..total {
        for (bi, block) in blocks.iter().enumerate() {
            let scale = log_scales[bi].exp();
            proposal.copy_from_slice(&z);
            for &ci in &block.coords {
                let step: f64 = rng.sample(StandardNormal);
                proposal[ci] += scale * step;
            }
            let t_new = target(&proposal)?;
            let lu = rng.gen_range(0.0f64..1.0).max(f64::MIN_POSITIVE).ln();
            if t_new - t_cur > lu {
                z.copy_from_slice(&proposal);
                t_cur = t_new;
                accepted[bi] += 1;
                batch_accepted[bi] += 1;
            }
        }
        let in_burn_in = it < config.burn_in;
        if in_burn_in && config.adapt_batch > 0 && (it + 1) % config.adapt_batch == 0 {
            batch_number += 1;
            let step = 0.01f64.min(1.0 / (batch_number as f64).sqrt());
            for bi in 0..blocks.len() {
                let rate = batch_accepted[bi] as f64 / config.adapt_batch as f64;
                if rate > config.target_accept {
                    log_scales[bi] += step;
                } else {
                    log_scales[bi] -= step;
                }
                batch_accepted[bi] = 0;
            }
            scale_trace.push((it + 1, log_scales.clone()));
        }
        if !in_burn_in && config.thin > 0 && (it - config.burn_in + 1) % config.thin == 0 {
            retain(&z);
        }
    }
    Ok(ChainRun {
        accepted,
        final_scales: log_scales,
        scale_trace,
        final_z: z,
        iterations: total,
    })
}

/// Starting point: least squares on imputed responses for beta, residual MAD
/// for sigma, neutral shape values (delta = 10, gamma symmetric, rho = 0),
/// random effects at zero.
pub fn initialize(spec: &ModelSpec, _rng: &mut dyn RngCore) -> ParameterVector {
    let data = &spec.data;
    let mut y = DVector::zeros(data.n);
    for obs in &spec.observations {
        y[obs.row] = match obs.censor {
            Censoring::Exact => obs.value,
            Censoring::Interval(l, u) => 0.5 * (l + u),
            Censoring::Right(l) => l + 1.0,
            Censoring::Left(u) => u - 1.0,
        };
    }
    let svd = data.x.clone().svd(true, true);
    let beta = svd
        .solve(&y, crate::model::RANK_TOL)
        .unwrap_or_else(|_| DVector::zeros(data.p));
    let resid = &y - &data.x * &beta;
    let mut abs_dev: Vec<f64> = {
        let med = median(resid.as_slice());
        resid.iter().map(|v| (v - med).abs()).collect()
    };
    let mad = median_in_place(&mut abs_dev) * 1.4826;
    let sigma_eps = if mad > 1e-3 { mad } else { 1.0 };
    let delta_eps = if spec.error.delta_is_free() {
        Some(seed_value(spec.prior.delta_eps_prior.as_ref(), 10.0))
    } else {
        None
    };
    let gamma_eps = if spec.error.gamma_is_free() {
        let par = spec.error.skew.expect("free gamma implies a skew spec").parameterisation;
        let neutral = match par {
            TwoPieceParameterisation::EpsilonSkew => 0.0,
            TwoPieceParameterisation::InverseScaleFactors => 1.0,
        };
        Some(seed_value(spec.prior.gamma_eps_prior.as_ref(), neutral))
    } else {
        None
    };
    let theta_u = spec
        .random_effects
        .hyperparams()
        .iter()
        .map(|(name, role)| {
            let neutral = match role {
                HyperRole::Location => 0.0,
                HyperRole::Scale => 1.0,
                HyperRole::Skewness => 0.0,
                HyperRole::Shape => 10.0,
                HyperRole::Correlation => 0.0,
            };
            seed_value(spec.prior.hyperprior(name), neutral)
        })
        .collect();
    ParameterVector {
        beta,
        sigma_eps,
        delta_eps,
        gamma_eps,
        theta_u,
        u: DVector::zeros(data.q * data.r),
    }
}

fn seed_value(prior: Option<&ProperPrior>, neutral: f64) -> f64 {
    match prior {
        None => neutral,
        Some(p) if p.contains(neutral) => neutral,
        Some(p) => {
            let (lo, hi) = p.support();
            if hi.is_finite() {
                0.5 * (lo + hi)
            } else {
                lo + 1.0
            }
        }
    }
}

fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    median_in_place(&mut v)
}

fn median_in_place(v: &mut [f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Run one adaptive chain for the model, retaining thinned post-burn-in draws.
pub fn run_chain(spec: &ModelSpec, config: &SamplerConfig) -> Result<PosteriorSample> {
    if !config.skip_propriety_check {
        let report = check_all(spec)?;
        if report.overall != Overall::Proper {
            let failing: Vec<String> = report
                .conditions()
                .iter()
                .filter(|(_, c)| !matches!(c.verdict, Verdict::Pass | Verdict::NotApplicable))
                .map(|(name, c)| format!("condition ({name}): {}", c.detail))
                .collect();
            return Err(Error::ProprietyRefused(format!(
                "verdict {:?} via {}; {}",
                report.overall,
                report.route,
                failing.join("; ")
            )));
        }
    }
    let layout = build_layout(spec);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let init = initialize(spec, &mut rng);
    let z0 = layout.from_params(&init);
    let target = |z: &[f64]| -> Result<f64> {
        let pv = layout.to_params(z);
        let t = log_joint_soft(spec, &pv)?;
        if t == f64::NEG_INFINITY {
            return Ok(t);
        }
        let jac: f64 = z
            .iter()
            .zip(&layout.coords)
            .map(|(&zv, c)| c.transform.log_jacobian(zv))
            .sum();
        Ok(t + jac)
    };
    let mut draws: Vec<Vec<f64>> = Vec::with_capacity(config.keep);
    let run = run_blocks(&target, &layout.blocks, z0.clone(), config, &mut rng, |z| {
        draws.push(
            z.iter()
                .zip(&layout.coords)
                .map(|(&zv, c)| c.transform.natural(zv))
                .collect(),
        );
    })?;
    if draws.is_empty() {
        // degenerate schedule: report the initial state as the only draw
        draws.push(
            z0.iter()
                .zip(&layout.coords)
                .map(|(&zv, c)| c.transform.natural(zv))
                .collect(),
        );
    }
    let names: Vec<String> = layout.coords.iter().map(|c| c.name.clone()).collect();
    let accept_rates = layout
        .blocks
        .iter()
        .zip(&run.accepted)
        .map(|(b, &a)| {
            (
                b.label.clone(),
                if run.iterations == 0 {
                    0.0
                } else {
                    a as f64 / run.iterations as f64
                },
            )
        })
        .collect();
    let final_params = layout.to_params(&run.final_z);
    Ok(PosteriorSample {
        names,
        draws,
        accept_rates,
        scale_trace: run.scale_trace,
        final_state: ChainState {
            params: final_params,
            log_proposal_scales: run.final_scales,
            iteration: run.iterations,
            accept_counts: run.accepted,
        },
        seed: config.seed,
    })
}

/// Empirical quantile with linear interpolation between order statistics.
pub fn quantile(xs: &[f64], p: f64) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    if v.is_empty() {
        return f64::NAN;
    }
    let h = (v.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let i = h.floor() as usize;
    if i + 1 >= v.len() {
        v[v.len() - 1]
    } else {
        v[i] + (h - i as f64) * (v[i + 1] - v[i])
    }
}

/// Effective sample size by the initial-positive-sequence estimator on
/// autocorrelation pairs.
pub fn effective_sample_size(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 4 {
        return n as f64;
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    let autocov = |k: usize| -> f64 {
        let mut s = 0.0;
        for i in 0..n - k {
            s += (xs[i] - mean) * (xs[i + k] - mean);
        }
        s / n as f64
    };
    let c0 = autocov(0);
    if c0 <= 0.0 {
        // constant chain: every draw is as good as an independent one
        return n as f64;
    }
    let mut tau = -1.0;
    let mut m = 0usize;
    while 2 * m + 1 < n {
        let g = autocov(2 * m) + autocov(2 * m + 1);
        if g <= 0.0 {
            break;
        }
        tau += 2.0 * g / c0;
        m += 1;
    }
    n as f64 / tau.max(1e-12)
}

/// Per-parameter posterior summary.
#[derive(Debug, Clone, Serialize)]
pub struct ParamSummary {
    pub name: String,
    pub median: f64,
    pub lo95: f64,
    pub hi95: f64,
    pub ess: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Diagnostics {
    pub params: Vec<ParamSummary>,
    pub accept_rates: Vec<(String, f64)>,
}

/// Posterior medians, central 95% intervals, and effective sample sizes.
/// Medians are reported because posterior means need not exist under the
/// improper scale prior.
pub fn diagnostics(sample: &PosteriorSample) -> Result<Diagnostics> {
    if sample.is_empty() {
        return Err(Error::EmptySample);
    }
    let params = sample
        .names
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let col: Vec<f64> = sample.draws.iter().map(|row| row[k]).collect();
            ParamSummary {
                name: name.clone(),
                median: quantile(&col, 0.5),
                lo95: quantile(&col, 0.025),
                hi95: quantile(&col, 0.975),
                ess: effective_sample_size(&col),
            }
        })
        .collect();
    Ok(Diagnostics {
        params,
        accept_rates: sample.accept_rates.clone(),
    })
}
