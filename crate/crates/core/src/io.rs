//! Data ingestion (CSV), model configuration (TOML), and run manifests
//! (JSON) tying persistent artifacts to reproducible runs.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use nalgebra::DMatrix;

use crate::dist::{ErrorFamily, RandomEffectsLaw};
use crate::error::{Error, Result};
use crate::model::{build_model, Censoring, DesignData, Mode, ModelSpec, Observation};
use crate::priors::PriorSpec;
use crate::propriety::{check_all, ProprietyReport};
use crate::sampler::{run_chain, PosteriorSample, SamplerConfig};

/// How to read a dataset file.
#[derive(Debug, Clone, Default)]
pub struct DatasetSchema {
    /// Survival (MEAFT) mode: responses are event times, validated positive.
    pub meaft: bool,
    /// Log base for MEAFT responses (natural log when absent). Times are
    /// rescaled so the model's natural-log transform lands on this base.
    pub log_base: Option<f64>,
}

/// A loaded dataset, ready for any model configuration.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub design: DesignData,
    pub observations: Vec<Observation>,
    /// Original subject labels in remapped order.
    pub subject_labels: Vec<String>,
}

/// Column contract: `subject`; `censor` (exact | right | left | interval,
/// default exact); `y` for exact rows, `l` / `u` for censoring bounds;
/// fixed covariates `x1..xp`; optional random-effect covariates `z1..zq`
/// (a random intercept when absent).
pub fn load_dataset(path: &Path, schema: &DatasetSchema) -> Result<Dataset> {
    load_dataset_from_reader(std::fs::File::open(path)?, schema)
}

pub fn load_dataset_from_reader<R: Read>(reader: R, schema: &DatasetSchema) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(|s| s.trim().to_string()).collect();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let subject_col = col("subject")
        .ok_or_else(|| Error::SchemaError("missing required column `subject`".into()))?;
    let y_col = col("y");
    let l_col = col("l");
    let u_col = col("u");
    let censor_col = col("censor");
    let numbered = |prefix: &str| -> Result<Vec<usize>> {
        let mut cols = Vec::new();
        loop {
            match col(&format!("{prefix}{}", cols.len() + 1)) {
                Some(c) => cols.push(c),
                None => break,
            }
        }
        Ok(cols)
    };
    let x_cols = numbered("x")?;
    let z_cols = numbered("z")?;
    if x_cols.is_empty() {
        return Err(Error::SchemaError(
            "no fixed covariates: need at least column `x1`".into(),
        ));
    }

    let parse = |field: &str, row: usize, name: &str| -> Result<f64> {
        field.trim().parse::<f64>().map_err(|_| {
            Error::SchemaError(format!("row {row}: cannot parse `{name}` value {field:?}"))
        })
    };
    let mut subject_labels: Vec<String> = Vec::new();
    let mut subject_index = Vec::new();
    let mut x_rows: Vec<Vec<f64>> = Vec::new();
    let mut z_rows: Vec<Vec<f64>> = Vec::new();
    let mut raw_obs: Vec<(Option<f64>, Option<f64>, Option<f64>, String)> = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let get = |c: Option<usize>| rec.get(c?).map(|s| s.trim()).filter(|s| !s.is_empty());
        let label = rec
            .get(subject_col)
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .ok_or_else(|| Error::SchemaError(format!("row {row}: empty subject id")))?;
        let s = match subject_labels.iter().position(|l| *l == label) {
            Some(s) => s,
            None => {
                subject_labels.push(label);
                subject_labels.len() - 1
            }
        };
        subject_index.push(s);
        let mut xs = Vec::with_capacity(x_cols.len());
        for (j, &c) in x_cols.iter().enumerate() {
            let field = rec.get(c).unwrap_or("");
            xs.push(parse(field, row, &format!("x{}", j + 1))?);
        }
        x_rows.push(xs);
        let mut zs = Vec::with_capacity(z_cols.len());
        for (j, &c) in z_cols.iter().enumerate() {
            let field = rec.get(c).unwrap_or("");
            zs.push(parse(field, row, &format!("z{}", j + 1))?);
        }
        z_rows.push(zs);
        let y = get(y_col).map(|f| parse(f, row, "y")).transpose()?;
        let l = get(l_col).map(|f| parse(f, row, "l")).transpose()?;
        let u = get(u_col).map(|f| parse(f, row, "u")).transpose()?;
        let censor = get(censor_col).unwrap_or("exact").to_ascii_lowercase();
        raw_obs.push((y, l, u, censor));
    }
    if raw_obs.is_empty() {
        return Err(Error::EmptyData);
    }

    let n = raw_obs.len();
    let r = subject_labels.len();
    let q = z_cols.len().max(1);
    let mut observations = Vec::with_capacity(n);
    for (row, (y, l, u, censor)) in raw_obs.into_iter().enumerate() {
        let need = |v: Option<f64>, name: &str| {
            v.ok_or_else(|| {
                Error::SchemaError(format!(
                    "row {row}: censor code `{censor}` needs column `{name}`"
                ))
            })
        };
        let (value, censoring) = match censor.as_str() {
            "exact" => (need(y, "y")?, Censoring::Exact),
            "right" => {
                let l = need(l, "l")?;
                (l, Censoring::Right(l))
            }
            "left" => {
                let u = need(u, "u")?;
                (u, Censoring::Left(u))
            }
            "interval" => {
                let l = need(l, "l")?;
                let u = need(u, "u")?;
                if !(l < u) {
                    return Err(Error::UnorderedInterval(l, u));
                }
                (0.5 * (l + u), Censoring::Interval(l, u))
            }
            other => {
                return Err(Error::SchemaError(format!(
                    "row {row}: unknown censor code {other:?}"
                )))
            }
        };
        let (value, censoring) = if schema.meaft {
            meaft_prepare(value, censoring, schema.log_base)?
        } else {
            (value, censoring)
        };
        observations.push(Observation {
            value,
            censor: censoring,
            row,
        });
    }

    let x = DMatrix::from_fn(n, x_cols.len(), |i, j| x_rows[i][j]);
    let mut z = DMatrix::zeros(n, q * r);
    for i in 0..n {
        let s = subject_index[i];
        if z_cols.is_empty() {
            z[(i, s)] = 1.0;
        } else {
            for j in 0..q {
                z[(i, s * q + j)] = z_rows[i][j];
            }
        }
    }
    let design = DesignData::new(x, z, subject_index, q)?;
    Ok(Dataset {
        design,
        observations,
        subject_labels,
    })
}

/// Validate positivity and, for a non-natural log base, rescale times so the
/// model's downstream ln(t) equals log_base(t).
fn meaft_prepare(
    value: f64,
    censoring: Censoring,
    log_base: Option<f64>,
) -> Result<(f64, Censoring)> {
    let check = |t: f64| {
        if t > 0.0 {
            Ok(t)
        } else {
            Err(Error::NonPositiveSurvivalTime(t))
        }
    };
    let pow = match log_base {
        None => 1.0,
        Some(b) => 1.0 / b.ln(),
    };
    let rescale = |t: f64| -> Result<f64> { Ok(check(t)?.powf(pow)) };
    let censoring = match censoring {
        Censoring::Exact => Censoring::Exact,
        Censoring::Right(l) => Censoring::Right(rescale(l)?),
        Censoring::Left(u) => Censoring::Left(rescale(u)?),
        Censoring::Interval(l, u) => Censoring::Interval(rescale(l)?, rescale(u)?),
    };
    Ok((rescale(value)?, censoring))
}

/// Write a dataset back out in the canonical column layout.
pub fn save_dataset(path: &Path, dataset: &Dataset) -> Result<()> {
    save_dataset_to_writer(std::fs::File::create(path)?, dataset)
}

pub fn save_dataset_to_writer<W: Write>(writer: W, dataset: &Dataset) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    let d = &dataset.design;
    let block_z = d
        .subject_index
        .iter()
        .enumerate()
        .all(|(i, &s)| d.q == 1 && d.z[(i, s)] == 1.0 && d.z.row(i).sum() == 1.0);
    let mut header = vec![
        "subject".to_string(),
        "censor".to_string(),
        "y".to_string(),
        "l".to_string(),
        "u".to_string(),
    ];
    for j in 0..d.p {
        header.push(format!("x{}", j + 1));
    }
    if !block_z {
        for j in 0..d.q {
            header.push(format!("z{}", j + 1));
        }
    }
    out.write_record(&header)?;
    for obs in &dataset.observations {
        let i = obs.row;
        let s = d.subject_index[i];
        let (code, y, l, u) = match obs.censor {
            Censoring::Exact => ("exact", Some(obs.value), None, None),
            Censoring::Right(l) => ("right", None, Some(l), None),
            Censoring::Left(u) => ("left", None, None, Some(u)),
            Censoring::Interval(l, u) => ("interval", None, Some(l), Some(u)),
        };
        let fmt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        let mut rec = vec![
            dataset.subject_labels[s].clone(),
            code.to_string(),
            fmt(y),
            fmt(l),
            fmt(u),
        ];
        for j in 0..d.p {
            rec.push(d.x[(i, j)].to_string());
        }
        if !block_z {
            for j in 0..d.q {
                rec.push(d.z[(i, s * d.q + j)].to_string());
            }
        }
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

/// Full model + run configuration, stored as TOML.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelConfig {
    pub mode: Mode,
    /// Log base for MEAFT responses; natural log when absent.
    #[serde(default)]
    pub meaft_log_base: Option<f64>,
    pub error: ErrorFamily,
    pub random_effects: RandomEffectsLaw,
    pub prior: PriorSpec,
    #[serde(default)]
    pub sampler: SamplerConfig,
}

impl ModelConfig {
    pub fn schema(&self) -> DatasetSchema {
        DatasetSchema {
            meaft: self.mode == Mode::Meaft,
            log_base: self.meaft_log_base,
        }
    }
}

pub fn load_config(path: &Path) -> Result<ModelConfig> {
    parse_config(&std::fs::read_to_string(path)?)
}

pub fn parse_config(text: &str) -> Result<ModelConfig> {
    toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
}

pub fn config_to_string(config: &ModelConfig) -> Result<String> {
    toml::to_string_pretty(config).map_err(|e| Error::Config(e.to_string()))
}

/// Assemble the validated model from a config and a loaded dataset. The
/// dataset is already on the model scale, so the builder runs in
/// longitudinal mode even for MEAFT configs when the loader transformed.
pub fn build_spec(config: &ModelConfig, dataset: &Dataset) -> Result<ModelSpec> {
    build_model(
        dataset.design.clone(),
        dataset.observations.clone(),
        config.error.clone(),
        config.random_effects.clone(),
        config.prior.clone(),
        config.mode,
    )
}

/// Everything needed to reproduce a fit bit-exactly.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub created_unix: u64,
    pub data_path: String,
    pub data_sha256: String,
    pub config_sha256: String,
    pub seed: u64,
    pub config: ModelConfig,
    pub propriety: ProprietyReport,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&std::fs::read(path)?))
}

pub fn write_manifest(path: &Path, manifest: &RunManifest) -> Result<()> {
    let text = serde_json::to_string_pretty(manifest).map_err(|e| Error::Config(e.to_string()))?;
    std::fs::write(path, text)?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<RunManifest> {
    serde_json::from_str(&std::fs::read_to_string(path)?)
        .map_err(|e| Error::Config(e.to_string()))
}

/// Run the full fit pipeline: load, validate, check propriety, sample, and
/// persist `samples.csv` + `manifest.json` into `out_dir`.
pub fn run_fit(
    config: &ModelConfig,
    data_path: &Path,
    out_dir: &Path,
) -> Result<(PosteriorSample, RunManifest)> {
    let dataset = load_dataset(data_path, &config.schema())?;
    let spec = build_spec(config, &dataset)?;
    let propriety = check_all(&spec)?;
    let sample = run_chain(&spec, &config.sampler)?;
    std::fs::create_dir_all(out_dir)?;
    let manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        created_unix: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        data_path: data_path.to_string_lossy().into_owned(),
        data_sha256: sha256_file(data_path)?,
        config_sha256: sha256_hex(config_to_string(config)?.as_bytes()),
        seed: config.sampler.seed,
        config: config.clone(),
        propriety,
    };
    sample.write_csv(std::fs::File::create(out_dir.join("samples.csv"))?)?;
    write_manifest(&out_dir.join("manifest.json"), &manifest)?;
    Ok((sample, manifest))
}

/// Re-run a finished fit from its manifest; the caller compares outputs.
pub fn replay(manifest: &RunManifest) -> Result<PosteriorSample> {
    let dataset = load_dataset(Path::new(&manifest.data_path), &manifest.config.schema())?;
    let spec = build_spec(&manifest.config, &dataset)?;
    run_chain(&spec, &manifest.config.sampler)
}
