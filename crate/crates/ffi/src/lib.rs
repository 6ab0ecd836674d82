//! C ABI for the muffin fairness search engine.
//!
//! Every fallible function returns a status code (`MUFFIN_OK` on success)
//! and leaves a message retrievable with [`muffin_last_error`] on the calling
//! thread. Handles are opaque and must be released with their `_free`
//! function. Strings returned by the library are owned by the handle they
//! came from unless documented otherwise.

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use indexmap::IndexMap;
use muffin::data::{Dataset, ModelPool};
use muffin::metrics;
use muffin::report::{self, RunConfig};
use muffin::Error;

pub const MUFFIN_OK: c_int = 0;
/// I/O or validation failure (also null or malformed arguments).
pub const MUFFIN_ERR_INVALID: c_int = 1;
/// Infeasible configuration.
pub const MUFFIN_ERR_INFEASIBLE: c_int = 2;
/// Search space exceeds the enumeration guard.
pub const MUFFIN_ERR_GUARD: c_int = 3;
/// A bug inside the library; the message carries the panic payload.
pub const MUFFIN_ERR_PANIC: c_int = 4;

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn fail(err: Error) -> c_int {
    set_error(&err.to_string());
    err.exit_code()
}

/// Runs `f`, mapping errors and panics to status codes.
fn guard(f: impl FnOnce() -> muffin::Result<()>) -> c_int {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            MUFFIN_OK
        }
        Ok(Err(e)) => fail(e),
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(&format!("internal error: {msg}"));
            MUFFIN_ERR_PANIC
        }
    }
}

fn invalid(msg: &str) -> Error {
    Error::Invalid(msg.to_string())
}

unsafe fn path_arg(p: *const c_char, what: &str) -> muffin::Result<PathBuf> {
    str_arg(p, what).map(PathBuf::from)
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> muffin::Result<&'a str> {
    if p.is_null() {
        return Err(invalid(&format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(&format!("{what} is not UTF-8")))
}

unsafe fn slice_arg<'a, T>(p: *const T, n: usize, what: &str) -> muffin::Result<&'a [T]> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(invalid(&format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

fn to_usize(xs: &[u32]) -> Vec<usize> {
    xs.iter().map(|&x| x as usize).collect()
}

/// Message describing the last failure on this thread; empty after a
/// success. Valid until the next library call on the same thread.
#[no_mangle]
pub extern "C" fn muffin_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn muffin_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// A loaded dataset and model pool.
pub struct MuffinWorkspace {
    dataset: Dataset,
    pool: ModelPool,
}

/// Search output: best structure as JSON and the history as CSV.
pub struct MuffinResult {
    best_json: CString,
    history_csv: CString,
    pareto_csv: CString,
}

/// Loads a dataset, its schema and a pool manifest.
///
/// # Safety
/// Paths must be NUL-terminated strings; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn muffin_workspace_open(
    dataset_path: *const c_char,
    schema_path: *const c_char,
    manifest_path: *const c_char,
    out: *mut *mut MuffinWorkspace,
) -> c_int {
    guard(|| {
        if out.is_null() {
            return Err(invalid("output pointer is null"));
        }
        *out = ptr::null_mut();
        let dataset = Dataset::load(
            &path_arg(dataset_path, "dataset path")?,
            &path_arg(schema_path, "schema path")?,
        )?;
        let pool = ModelPool::load_manifest(&path_arg(manifest_path, "manifest path")?, &dataset)?;
        *out = Box::into_raw(Box::new(MuffinWorkspace { dataset, pool }));
        Ok(())
    })
}

/// # Safety
/// `ws` must come from [`muffin_workspace_open`] (or be null) and is
/// invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn muffin_workspace_free(ws: *mut MuffinWorkspace) {
    if !ws.is_null() {
        drop(Box::from_raw(ws));
    }
}

/// # Safety
/// `ws` must be a live workspace or null (which yields 0).
#[no_mangle]
pub unsafe extern "C" fn muffin_workspace_num_samples(ws: *const MuffinWorkspace) -> usize {
    ws.as_ref().map_or(0, |w| w.dataset.len())
}

/// # Safety
/// `ws` must be a live workspace or null (which yields 0).
#[no_mangle]
pub unsafe extern "C" fn muffin_workspace_num_models(ws: *const MuffinWorkspace) -> usize {
    ws.as_ref().map_or(0, |w| w.pool.len())
}

/// # Safety
/// `ws` must be a live workspace or null (which yields 0).
#[no_mangle]
pub unsafe extern "C" fn muffin_workspace_num_classes(ws: *const MuffinWorkspace) -> usize {
    ws.as_ref().map_or(0, |w| w.dataset.num_classes)
}

/// # Safety
/// `ws` must be a live workspace or null (which yields 0).
#[no_mangle]
pub unsafe extern "C" fn muffin_workspace_num_attributes(ws: *const MuffinWorkspace) -> usize {
    ws.as_ref().map_or(0, |w| w.dataset.schema.len())
}

/// Fraction of the `n` samples where `predicted` equals `labels`.
///
/// # Safety
/// Both arrays must hold `n` elements; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn muffin_accuracy(
    predicted: *const u32,
    labels: *const u32,
    n: usize,
    out: *mut f64,
) -> c_int {
    guard(|| {
        let p = to_usize(slice_arg(predicted, n, "predicted")?);
        let l = to_usize(slice_arg(labels, n, "labels")?);
        let out = out.as_mut().ok_or_else(|| invalid("output pointer is null"))?;
        *out = metrics::accuracy(&p, &l, None)?;
        Ok(())
    })
}

/// Unfairness of one attribute: the sum over non-empty groups of
/// |group accuracy - overall accuracy|. `groups[i]` is sample i's group.
///
/// # Safety
/// All arrays must hold `n` elements; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn muffin_unfairness(
    predicted: *const u32,
    labels: *const u32,
    groups: *const u32,
    n: usize,
    out: *mut f64,
) -> c_int {
    guard(|| {
        let p = to_usize(slice_arg(predicted, n, "predicted")?);
        let l = to_usize(slice_arg(labels, n, "labels")?);
        let g = slice_arg(groups, n, "groups")?;
        let out = out.as_mut().ok_or_else(|| invalid("output pointer is null"))?;
        let overall = metrics::accuracy(&p, &l, None)?;
        let mut members: std::collections::BTreeMap<u32, Vec<usize>> = Default::default();
        for (i, &grp) in g.iter().enumerate() {
            members.entry(grp).or_default().push(i);
        }
        let mut u = 0.0;
        for idx in members.values() {
            u += (metrics::accuracy(&p, &l, Some(idx))? - overall).abs();
        }
        *out = u;
        Ok(())
    })
}

/// Reward: the sum over `k` attributes of accuracy / max(U, epsilon).
///
/// # Safety
/// `unfairness` must hold `k` elements; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn muffin_reward(
    accuracy: f64,
    unfairness: *const f64,
    k: usize,
    epsilon: f64,
    out: *mut f64,
) -> c_int {
    guard(|| {
        let u = slice_arg(unfairness, k, "unfairness")?;
        let out = out.as_mut().ok_or_else(|| invalid("output pointer is null"))?;
        let map: IndexMap<String, f64> = u.iter().enumerate().map(|(i, &v)| (i.to_string(), v)).collect();
        *out = metrics::reward(accuracy, &map, epsilon)?;
        Ok(())
    })
}

/// Fractions of samples where both models are wrong, only `a` is right,
/// only `b` is right and both are right, written to `out[0..4]`.
///
/// # Safety
/// The three arrays must hold `n` elements; `out` must hold 4.
#[no_mangle]
pub unsafe extern "C" fn muffin_breakdown(
    model_a: *const u32,
    model_b: *const u32,
    labels: *const u32,
    n: usize,
    out: *mut f64,
) -> c_int {
    guard(|| {
        let a = to_usize(slice_arg(model_a, n, "model_a")?);
        let b = to_usize(slice_arg(model_b, n, "model_b")?);
        let l = to_usize(slice_arg(labels, n, "labels")?);
        if out.is_null() {
            return Err(invalid("output pointer is null"));
        }
        let all: Vec<usize> = (0..n).collect();
        let bd = metrics::disagreement_breakdown(&a, &b, &l, &all)?;
        let out = std::slice::from_raw_parts_mut(out, 4);
        out.copy_from_slice(&[bd.both_wrong, bd.only_a, bd.only_b, bd.both_right]);
        Ok(())
    })
}

/// Runs a search over the workspace. `config_json` is a run configuration
/// in the CLI's JSON format (input paths in it are ignored); null uses the
/// defaults.
///
/// # Safety
/// `ws` must be live; `config_json` null or NUL-terminated; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn muffin_search(
    ws: *const MuffinWorkspace,
    config_json: *const c_char,
    out: *mut *mut MuffinResult,
) -> c_int {
    guard(|| {
        if out.is_null() {
            return Err(invalid("output pointer is null"));
        }
        *out = ptr::null_mut();
        let ws = ws.as_ref().ok_or_else(|| invalid("workspace is null"))?;
        let mut config: RunConfig = if config_json.is_null() {
            RunConfig::default()
        } else {
            serde_json::from_str(str_arg(config_json, "config")?)?
        };
        // results are returned in memory, never written
        config.checkpoint_every = 0;
        let summary = report::summarize_search(&config, &ws.dataset, &ws.pool)?;
        let cstring = |s: String| CString::new(s).map_err(|_| invalid("output contains NUL"));
        *out = Box::into_raw(Box::new(MuffinResult {
            best_json: cstring(serde_json::to_string_pretty(&summary.best)?)?,
            history_csv: cstring(summary.history_csv)?,
            pareto_csv: cstring(summary.pareto_csv)?,
        }));
        Ok(())
    })
}

/// `best.json` contents; owned by the result.
///
/// # Safety
/// `res` must be a live result or null (which yields null).
#[no_mangle]
pub unsafe extern "C" fn muffin_result_best_json(res: *const MuffinResult) -> *const c_char {
    res.as_ref().map_or(ptr::null(), |r| r.best_json.as_ptr())
}

/// `history.csv` contents; owned by the result.
///
/// # Safety
/// `res` must be a live result or null (which yields null).
#[no_mangle]
pub unsafe extern "C" fn muffin_result_history_csv(res: *const MuffinResult) -> *const c_char {
    res.as_ref().map_or(ptr::null(), |r| r.history_csv.as_ptr())
}

/// `pareto.csv` contents; owned by the result.
///
/// # Safety
/// `res` must be a live result or null (which yields null).
#[no_mangle]
pub unsafe extern "C" fn muffin_result_pareto_csv(res: *const MuffinResult) -> *const c_char {
    res.as_ref().map_or(ptr::null(), |r| r.pareto_csv.as_ptr())
}

/// # Safety
/// `res` must come from [`muffin_search`] (or be null) and is invalid
/// afterwards.
#[no_mangle]
pub unsafe extern "C" fn muffin_result_free(res: *mut MuffinResult) {
    if !res.is_null() {
        drop(Box::from_raw(res));
    }
}

/// Writes a synthetic preset (dataset, schema, manifest, model outputs)
/// into `out_dir`.
///
/// # Safety
/// Strings must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn muffin_synth(preset: *const c_char, seed: u64, out_dir: *const c_char) -> c_int {
    guard(|| {
        let preset = str_arg(preset, "preset")?;
        let dir = path_arg(out_dir, "output directory")?;
        report::cmd_synth(preset, seed, None, &dir)?;
        Ok(())
    })
}
