//! C ABI for the flexlmm inference engine: load a model from a dataset and a
//! config file, check posterior propriety, fit, read draws, and run model
//! selection. All functions set a thread-local error message retrievable via
//! `flexlmm_last_error`; functions returning pointers return null on failure.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::path::Path;
use std::ptr;

use flexlmm::io::{build_spec, load_config, load_dataset, ModelConfig};
use flexlmm::propriety::check_all;
use flexlmm::sampler::{run_chain, PosteriorSample, SamplerConfig};
use flexlmm::selection::select;

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let msg = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::default());
}

/// Opaque handle: a validated model (design, observations, priors, sampler
/// defaults from the config).
pub struct FlexlmmModel {
    spec: flexlmm::model::ModelSpec,
    config: ModelConfig,
}

/// Opaque handle: retained posterior draws.
pub struct FlexlmmSample {
    sample: PosteriorSample,
}

/// The error message from the most recent failed call on this thread; an
/// empty string when the last call succeeded. Owned by the library.
#[no_mangle]
pub extern "C" fn flexlmm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

unsafe fn cstr_arg(ptr: *const c_char, name: &str) -> Result<String, String> {
    if ptr.is_null() {
        return Err(format!("{name} is null"));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map(|s| s.to_string())
        .map_err(|_| format!("{name} is not valid UTF-8"))
}

/// Load a model from a dataset CSV and a TOML model configuration.
/// Returns null on failure.
///
/// # Safety
/// Both arguments must be valid NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn flexlmm_model_load(
    data_csv_path: *const c_char,
    config_toml_path: *const c_char,
) -> *mut FlexlmmModel {
    let run = || -> Result<FlexlmmModel, String> {
        let data_path = cstr_arg(data_csv_path, "data_csv_path")?;
        let config_path = cstr_arg(config_toml_path, "config_toml_path")?;
        let config = load_config(Path::new(&config_path)).map_err(|e| e.to_string())?;
        let dataset =
            load_dataset(Path::new(&data_path), &config.schema()).map_err(|e| e.to_string())?;
        let spec = build_spec(&config, &dataset).map_err(|e| e.to_string())?;
        Ok(FlexlmmModel { spec, config })
    };
    match run() {
        Ok(model) => {
            clear_error();
            Box::into_raw(Box::new(model))
        }
        Err(e) => {
            set_error(&e);
            ptr::null_mut()
        }
    }
}

/// # Safety
/// `model` must come from `flexlmm_model_load` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn flexlmm_model_free(model: *mut FlexlmmModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

fn json_out<T: serde::Serialize>(value: &T) -> Result<*mut c_char, String> {
    let text = serde_json::to_string_pretty(value).map_err(|e| e.to_string())?;
    CString::new(text)
        .map(CString::into_raw)
        .map_err(|e| e.to_string())
}

/// Run the propriety checks and return the full report as JSON (caller frees
/// with `flexlmm_string_free`). Returns null on failure.
///
/// # Safety
/// `model` must be a live handle from `flexlmm_model_load`.
#[no_mangle]
pub unsafe extern "C" fn flexlmm_check_propriety_json(model: *const FlexlmmModel) -> *mut c_char {
    let run = || -> Result<*mut c_char, String> {
        let model = model.as_ref().ok_or("model is null")?;
        let report = check_all(&model.spec).map_err(|e| e.to_string())?;
        json_out(&report)
    };
    match run() {
        Ok(p) => {
            clear_error();
            p
        }
        Err(e) => {
            set_error(&e);
            ptr::null_mut()
        }
    }
}

/// Sample the posterior. Pass 0 for `burn_in`, `thin`, or `keep` to use the
/// config values; `seed` always overrides the config. Fails (null) when the
/// propriety verdict is not Proper.
///
/// # Safety
/// `model` must be a live handle from `flexlmm_model_load`.
#[no_mangle]
pub unsafe extern "C" fn flexlmm_fit(
    model: *const FlexlmmModel,
    seed: u64,
    burn_in: usize,
    thin: usize,
    keep: usize,
) -> *mut FlexlmmSample {
    let run = || -> Result<FlexlmmSample, String> {
        let model = model.as_ref().ok_or("model is null")?;
        let mut config: SamplerConfig = model.config.sampler.clone();
        config.seed = seed;
        if burn_in > 0 {
            config.burn_in = burn_in;
        }
        if thin > 0 {
            config.thin = thin;
        }
        if keep > 0 {
            config.keep = keep;
        }
        let sample = run_chain(&model.spec, &config).map_err(|e| e.to_string())?;
        Ok(FlexlmmSample { sample })
    };
    match run() {
        Ok(sample) => {
            clear_error();
            Box::into_raw(Box::new(sample))
        }
        Err(e) => {
            set_error(&e);
            ptr::null_mut()
        }
    }
}

/// # Safety
/// `sample` must come from `flexlmm_fit` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn flexlmm_sample_free(sample: *mut FlexlmmSample) {
    if !sample.is_null() {
        drop(Box::from_raw(sample));
    }
}

/// Number of retained draws; 0 for a null handle.
///
/// # Safety
/// `sample` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn flexlmm_sample_rows(sample: *const FlexlmmSample) -> usize {
    sample.as_ref().map(|s| s.sample.len()).unwrap_or(0)
}

/// Number of named parameters; 0 for a null handle.
///
/// # Safety
/// `sample` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn flexlmm_sample_cols(sample: *const FlexlmmSample) -> usize {
    sample.as_ref().map(|s| s.sample.names.len()).unwrap_or(0)
}

/// Name of parameter column `col` (caller frees with `flexlmm_string_free`);
/// null when out of range.
///
/// # Safety
/// `sample` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn flexlmm_sample_name(
    sample: *const FlexlmmSample,
    col: usize,
) -> *mut c_char {
    let run = || -> Result<*mut c_char, String> {
        let sample = sample.as_ref().ok_or("sample is null")?;
        let name = sample
            .sample
            .names
            .get(col)
            .ok_or_else(|| format!("column {col} out of range"))?;
        CString::new(name.as_str()).map(CString::into_raw).map_err(|e| e.to_string())
    };
    match run() {
        Ok(p) => {
            clear_error();
            p
        }
        Err(e) => {
            set_error(&e);
            ptr::null_mut()
        }
    }
}

/// Copy the draws of a named parameter into `out` (capacity `cap` doubles).
/// Returns the number of values written, or -1 on error.
///
/// # Safety
/// `sample` and `name` must be live/valid; `out` must point to at least `cap`
/// doubles.
#[no_mangle]
pub unsafe extern "C" fn flexlmm_sample_column(
    sample: *const FlexlmmSample,
    name: *const c_char,
    out: *mut f64,
    cap: usize,
) -> isize {
    let run = || -> Result<isize, String> {
        let sample = sample.as_ref().ok_or("sample is null")?;
        let name = cstr_arg(name, "name")?;
        let column = sample.sample.column(&name).map_err(|e| e.to_string())?;
        if column.len() > cap {
            return Err(format!(
                "column has {} draws but capacity is {cap}",
                column.len()
            ));
        }
        if out.is_null() {
            return Err("out is null".into());
        }
        ptr::copy_nonoverlapping(column.as_ptr(), out, column.len());
        Ok(column.len() as isize)
    };
    match run() {
        Ok(n) => {
            clear_error();
            n
        }
        Err(e) => {
            set_error(&e);
            -1
        }
    }
}

/// Run model selection: Savage-Dickey Bayes factors for `n_hypotheses` point
/// hypotheses (parallel `names` / `values` arrays), tail odds on delta_eps,
/// and LPML. Returns the report as JSON (caller frees with
/// `flexlmm_string_free`); null on failure.
///
/// # Safety
/// All pointers must be live/valid; `names` and `values` must hold
/// `n_hypotheses` entries.
#[no_mangle]
pub unsafe extern "C" fn flexlmm_select_json(
    model: *const FlexlmmModel,
    sample: *const FlexlmmSample,
    names: *const *const c_char,
    values: *const f64,
    n_hypotheses: usize,
) -> *mut c_char {
    let run = || -> Result<*mut c_char, String> {
        let model = model.as_ref().ok_or("model is null")?;
        let sample = sample.as_ref().ok_or("sample is null")?;
        let mut owned = Vec::with_capacity(n_hypotheses);
        for k in 0..n_hypotheses {
            if names.is_null() || values.is_null() {
                return Err("names/values are null but n_hypotheses > 0".into());
            }
            let name = cstr_arg(*names.add(k), "hypothesis name")?;
            owned.push((name, *values.add(k)));
        }
        let hypotheses: Vec<(&str, f64)> =
            owned.iter().map(|(n, v)| (n.as_str(), *v)).collect();
        let report =
            select(&model.spec, &sample.sample, &hypotheses).map_err(|e| e.to_string())?;
        json_out(&report)
    };
    match run() {
        Ok(p) => {
            clear_error();
            p
        }
        Err(e) => {
            set_error(&e);
            ptr::null_mut()
        }
    }
}

/// Free a string returned by this library.
///
/// # Safety
/// `s` must be null or a string returned by this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn flexlmm_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
