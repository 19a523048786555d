//! C ABI over `fdrsvm`.
//!
//! Every function returns an [`FdrsvmStatus`]; on failure the message is
//! available from [`fdrsvm_last_error`] on the same thread. Handles are
//! opaque and owned by the caller, who releases them with the matching
//! `_free` function. Labels cross the boundary as `+1` / `-1`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use fdrsvm::baselines::{train_central_dr_svm, BaselineError, CentralDrConfig};
use fdrsvm::data::{load_csv, with_intercept, DataError, MinMax};
use fdrsvm::experiment::{train_model, ExperimentConfig, ExperimentError, HyperParams, ModelKind, SavedModel};
use fdrsvm::metrics::evaluate;
use fdrsvm::solver::SolverConfig;
use fdrsvm::svm::{DatasetView, GlobalModel, Label, LabeledSample, NormKind, SvmError};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FdrsvmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Data = 4,
    Training = 5,
    Io = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FdrsvmNorm {
    L1 = 0,
    LInf = 1,
}

/// Labeled samples with raw (unscaled) features.
pub struct FdrsvmDataset(DatasetView);

pub struct FdrsvmConfig(ExperimentConfig);

/// Weights plus the feature scaling they were trained with.
pub struct FdrsvmModel(SavedModel);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Fail(FdrsvmStatus, String);

impl From<ExperimentError> for Fail {
    fn from(e: ExperimentError) -> Self {
        let status = match &e {
            ExperimentError::Config(_) => FdrsvmStatus::Config,
            ExperimentError::Data(DataError::Io { .. }) | ExperimentError::Output { .. } => FdrsvmStatus::Io,
            ExperimentError::Data(_) | ExperimentError::Svm(_) => FdrsvmStatus::Data,
            _ => FdrsvmStatus::Training,
        };
        Fail(status, e.to_string())
    }
}

impl From<DataError> for Fail {
    fn from(e: DataError) -> Self {
        let status = match e {
            DataError::Io { .. } => FdrsvmStatus::Io,
            _ => FdrsvmStatus::Data,
        };
        Fail(status, e.to_string())
    }
}

impl From<SvmError> for Fail {
    fn from(e: SvmError) -> Self {
        Fail(FdrsvmStatus::Data, e.to_string())
    }
}

impl From<BaselineError> for Fail {
    fn from(e: BaselineError) -> Self {
        let status = match e {
            BaselineError::Config(_) => FdrsvmStatus::Config,
            BaselineError::Data(_) => FdrsvmStatus::Data,
            _ => FdrsvmStatus::Training,
        };
        Fail(status, e.to_string())
    }
}

fn invalid(msg: impl Into<String>) -> Fail {
    Fail(FdrsvmStatus::InvalidArgument, msg.into())
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> FdrsvmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => FdrsvmStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(&format!("internal panic: {msg}"));
            FdrsvmStatus::Panic
        }
    }
}

unsafe fn reference<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref()
        .ok_or_else(|| Fail(FdrsvmStatus::NullPointer, format!("{what} is null")))
}

unsafe fn string<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail(FdrsvmStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("{what} is not valid UTF-8")))
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut()
        .ok_or_else(|| Fail(FdrsvmStatus::NullPointer, format!("{what} is null")))
}

unsafe fn matrix<'a>(x: *const f64, n: usize, p: usize) -> Result<&'a [f64], Fail> {
    if n == 0 || p == 0 {
        return Err(invalid("n and p must be positive"));
    }
    let len = n.checked_mul(p).ok_or_else(|| invalid("n * p overflows"))?;
    if x.is_null() {
        return Err(Fail(FdrsvmStatus::NullPointer, "x is null".into()));
    }
    Ok(std::slice::from_raw_parts(x, len))
}

/// Message of the last failed call on this thread, or NULL. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn fdrsvm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Builds a dataset from a row-major `n x p` feature matrix and `n` labels.
///
/// # Safety
/// `x` must point to `n * p` doubles, `y` to `n` ints, `out` to writable storage.
#[no_mangle]
pub unsafe extern "C" fn fdrsvm_dataset_new(
    x: *const f64,
    y: *const i32,
    n: usize,
    p: usize,
    out: *mut *mut FdrsvmDataset,
) -> FdrsvmStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let x = matrix(x, n, p)?;
        if y.is_null() {
            return Err(Fail(FdrsvmStatus::NullPointer, "y is null".into()));
        }
        let y = std::slice::from_raw_parts(y, n);
        let samples = x
            .chunks(p)
            .zip(y)
            .map(|(row, &label)| {
                let label = Label::from_sign(label as f64).map_err(|_| invalid(format!("label {label} is not +1 or -1")))?;
                Ok(LabeledSample::new(row.to_vec(), label))
            })
            .collect::<Result<Vec<_>, Fail>>()?;
        *out = Box::into_raw(Box::new(FdrsvmDataset(DatasetView::new(samples, p)?)));
        Ok(())
    })
}

/// Loads a CSV with a header row. `positive_label` marks the +1 class.
///
/// # Safety
/// String arguments must be nul-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fdrsvm_dataset_load_csv(
    path: *const c_char,
    label_column: *const c_char,
    positive_label: *const c_char,
    out: *mut *mut FdrsvmDataset,
) -> FdrsvmStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let table = load_csv(
            string(path, "path")?,
            string(label_column, "label_column")?,
            string(positive_label, "positive_label")?,
        )?;
        *out = Box::into_raw(Box::new(FdrsvmDataset(table.to_dataset()?)));
        Ok(())
    })
}

/// Number of samples, or 0 for NULL.
///
/// # Safety
/// `data` must be NULL or a live dataset handle.
#[no_mangle]
pub unsafe extern "C" fn fdrsvm_dataset_len(data: *const FdrsvmDataset) -> usize {
    data.as_ref().map_or(0, |d| d.0.len())
}

/// Number of features, or 0 for NULL.
///
/// # Safety
/// `data` must be NULL or a live dataset handle.
#[no_mangle]
pub unsafe extern "C" fn fdrsvm_dataset_dim(data: *const FdrsvmDataset) -> usize {
    data.as_ref().map_or(0, |d| d.0.dim())
}

/// # Safety
/// `data` must be NULL or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn fdrsvm_dataset_free(data: *mut FdrsvmDataset) {
    if !data.is_null() {
        drop(Box::from_raw(data));
    }
}

/// Parses an experiment config from TOML text.
///
/// # Safety
/// `toml` must be nul-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fdrsvm_config_from_toml(toml: *const c_char, out: *mut *mut FdrsvmConfig) -> FdrsvmStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let cfg = ExperimentConfig::from_toml_str(string(toml, "toml")?)?;
        *out = Box::into_raw(Box::new(FdrsvmConfig(cfg)));
        Ok(())
    })
}

/// Reads an experiment config file. Relative dataset paths resolve
/// against the current directory.
///
/// # Safety
/// `path` must be nul-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fdrsvm_config_load(path: *const c_char, out: *mut *mut FdrsvmConfig) -> FdrsvmStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let cfg = ExperimentConfig::from_file(string(path, "path")?)?;
        *out = Box::into_raw(Box::new(FdrsvmConfig(cfg)));
        Ok(())
    })
}

/// # Safety
/// `cfg` must be NULL or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn fdrsvm_config_free(cfg: *mut FdrsvmConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Runs one repetition of the configured experiment: tunes on the training
/// split of `seed`, refits and writes the held-out F1 and MCCR. `f1` and
/// `mccr` may be NULL.
///
/// # Safety
/// `cfg` must be a live handle; `out` writable; `f1`/`mccr` NULL or writable.
#[no_mangle]
pub unsafe extern "C" fn fdrsvm_train(
    cfg: *const FdrsvmConfig,
    seed: u64,
    out: *mut *mut FdrsvmModel,
    f1: *mut f64,
    mccr: *mut f64,
) -> FdrsvmStatus {
    guard(|| {
        let cfg = reference(cfg, "cfg")?;
        let out = out_ptr(out, "out")?;
        let (model, metrics) = train_model(&cfg.0, seed)?;
        if let Some(f) = f1.as_mut() {
            *f = metrics.f1;
        }
        if let Some(m) = mccr.as_mut() {
            *m = metrics.mccr;
        }
        *out = Box::into_raw(Box::new(FdrsvmModel(model)));
        Ok(())
    })
}

/// Fits the pooled distributionally robust SVM on `data` after min-max
/// scaling and appending an intercept feature.
///
/// # Safety
/// `data` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fdrsvm_train_central(
    data: *const FdrsvmDataset,
    epsilon: f64,
    kappa: f64,
    norm: FdrsvmNorm,
    out: *mut *mut FdrsvmModel,
) -> FdrsvmStatus {
    guard(|| {
        let data = reference(data, "data")?;
        let out = out_ptr(out, "out")?;
        let norm = match norm {
            FdrsvmNorm::L1 => NormKind::L1,
            FdrsvmNorm::LInf => NormKind::LInf,
        };
        let scaler = MinMax::fit(&data.0);
        let train = with_intercept(&scaler.apply(&data.0)?)?;
        let cfg = CentralDrConfig { epsilon, kappa, norm };
        let w = train_central_dr_svm(&train, &cfg, &SolverConfig::default())?;
        let model = SavedModel {
            kind: ModelKind::CentralDR,
            params: HyperParams {
                rounds: 0,
                rho: 0.0,
                gamma: 0.0,
                beta: 0.0,
                kappa,
                epsilon,
            },
            w: w.w,
            scaler,
            intercept: true,
        };
        *out = Box::into_raw(Box::new(FdrsvmModel(model)));
        Ok(())
    })
}

/// Restores a model saved as JSON (the `--model-out` format of the CLI).
///
/// # Safety
/// `json` must be nul-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fdrsvm_model_from_json(json: *const c_char, out: *mut *mut FdrsvmModel) -> FdrsvmStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let model: SavedModel = serde_json::from_str(string(json, "json")?)
            .map_err(|e| Fail(FdrsvmStatus::Data, format!("parsing the model: {e}")))?;
        *out = Box::into_raw(Box::new(FdrsvmModel(model)));
        Ok(())
    })
}

/// Serializes a model to JSON. Release the string with [`fdrsvm_string_free`].
///
/// # Safety
/// `model` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fdrsvm_model_to_json(model: *const FdrsvmModel, out: *mut *mut c_char) -> FdrsvmStatus {
    guard(|| {
        let model = reference(model, "model")?;
        let out = out_ptr(out, "out")?;
        let json = serde_json::to_string(&model.0).map_err(|e| Fail(FdrsvmStatus::Training, e.to_string()))?;
        *out = CString::new(json).expect("JSON has no nul").into_raw();
        Ok(())
    })
}

/// # Safety
/// `s` must be NULL or a string returned by this library and not freed before.
#[no_mangle]
pub unsafe extern "C" fn fdrsvm_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Number of weights, including the intercept if there is one.
///
/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fdrsvm_model_num_weights(model: *const FdrsvmModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.w.len())
}

/// Copies the weights into `out`, which must hold exactly `len` doubles.
///
/// # Safety
/// `model` must be a live handle; `out` must point to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn fdrsvm_model_weights(model: *const FdrsvmModel, out: *mut f64, len: usize) -> FdrsvmStatus {
    guard(|| {
        let model = reference(model, "model")?;
        if out.is_null() {
            return Err(Fail(FdrsvmStatus::NullPointer, "out is null".into()));
        }
        if len != model.0.w.len() {
            return Err(invalid(format!("buffer holds {len} values, model has {}", model.0.w.len())));
        }
        std::slice::from_raw_parts_mut(out, len).copy_from_slice(&model.0.w);
        Ok(())
    })
}

/// Predicts `+1` / `-1` for `n` raw feature rows of width `p`.
///
/// # Safety
/// `model` must be a live handle; `x` must hold `n * p` doubles and `out` `n` ints.
#[no_mangle]
pub unsafe extern "C" fn fdrsvm_model_predict(
    model: *const FdrsvmModel,
    x: *const f64,
    n: usize,
    p: usize,
    out: *mut i32,
) -> FdrsvmStatus {
    guard(|| {
        let model = reference(model, "model")?;
        let x = matrix(x, n, p)?;
        if out.is_null() {
            return Err(Fail(FdrsvmStatus::NullPointer, "out is null".into()));
        }
        let rows = x
            .chunks(p)
            .map(|row| LabeledSample::new(row.to_vec(), Label::Positive))
            .collect();
        let scaled = model.0.transform(&DatasetView::new(rows, p)?)?;
        let w = GlobalModel::new(model.0.w.clone());
        if scaled.dim() != w.dim() {
            return Err(Fail(
                FdrsvmStatus::Data,
                format!("model expects {} weights, rows give {}", w.dim(), scaled.dim()),
            ));
        }
        let out = std::slice::from_raw_parts_mut(out, n);
        for (o, s) in out.iter_mut().zip(scaled.samples()) {
            *o = w.predict(&s.x).sign() as i32;
        }
        Ok(())
    })
}

/// Scores the model on a dataset of raw features.
///
/// # Safety
/// `model` and `data` must be live handles; `f1`/`mccr` NULL or writable.
#[no_mangle]
pub unsafe extern "C" fn fdrsvm_model_evaluate(
    model: *const FdrsvmModel,
    data: *const FdrsvmDataset,
    f1: *mut f64,
    mccr: *mut f64,
) -> FdrsvmStatus {
    guard(|| {
        let model = reference(model, "model")?;
        let data = reference(data, "data")?;
        let scaled = model.0.transform(&data.0)?;
        let m = evaluate(&GlobalModel::new(model.0.w.clone()), &scaled)?;
        if let Some(f) = f1.as_mut() {
            *f = m.f1;
        }
        if let Some(c) = mccr.as_mut() {
            *c = m.mccr;
        }
        Ok(())
    })
}

/// # Safety
/// `model` must be NULL or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn fdrsvm_model_free(model: *mut FdrsvmModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}
