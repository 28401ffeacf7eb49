//! C ABI over the emco library.
//!
//! Every fallible function returns an [`EmcoStatus`]; on failure a message is
//! kept per thread and can be read with [`emco_last_error_message`]. Datasets
//! are opaque handles released with [`emco_dataset_free`]. Panics never
//! cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use emco::bounds::{self, BoundsProblem, Direction, Shape};
use emco::dataset::{load_csv, Schema};
use emco::estimators::{complier_decomposition, first_stage_diffs};
use emco::inference::{default_beta, Method, MomentTest};
use emco::moments::{build_emco_moments, quantile_partition};
use emco::{Dataset, Error};

/// Opaque dataset handle.
pub struct EmcoDataset {
    inner: Dataset,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmcoStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidData = 3,
    Degenerate = 4,
    Infeasible = 5,
    Io = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmcoMethod {
    Rsw = 0,
    Cck = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmcoDirection {
    NonNegative = 0,
    NonPositive = 1,
    Positive = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct EmcoDecomposition {
    pub beta_recoded: f64,
    pub untreated_mean: f64,
    pub complier_share: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct EmcoTestSummary {
    pub statistic: f64,
    pub critical_value: f64,
    pub reject: bool,
    pub num_moments: usize,
    pub num_active: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> EmcoStatus {
    match e {
        Error::DegenerateArm(_) | Error::ZeroFirstStage(_) | Error::RankDeficientCovariates { .. } => {
            EmcoStatus::Degenerate
        }
        Error::InfeasibleProblem(_) | Error::Unbounded => EmcoStatus::Infeasible,
        Error::InvalidTuning(_) | Error::InvalidShares(_) | Error::InvalidHurdle(_) | Error::Config(_) => {
            EmcoStatus::InvalidArgument
        }
        Error::Io(_) => EmcoStatus::Io,
        _ => EmcoStatus::InvalidData,
    }
}

struct Fail(EmcoStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), format!("{}: {e}", e.code()))
    }
}

fn null(what: &str) -> Fail {
    Fail(EmcoStatus::NullPointer, format!("{what} is null"))
}

fn guard<F: FnOnce() -> Result<(), Fail>>(f: F) -> EmcoStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => EmcoStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            EmcoStatus::Panic
        }
    }
}

unsafe fn slice<'a, T>(p: *const T, n: usize, what: &str) -> Result<&'a [T], Fail> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn slice_mut<'a, T>(p: *mut T, n: usize, what: &str) -> Result<&'a mut [T], Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, n))
}

unsafe fn string(p: *const c_char, what: &str) -> Result<String, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(str::to_string)
        .map_err(|_| Fail(EmcoStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

unsafe fn dataset<'a>(ds: *const EmcoDataset) -> Result<&'a Dataset, Fail> {
    ds.as_ref().map(|d| &d.inner).ok_or_else(|| null("dataset"))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn emco_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the most recent failure on this thread, or NULL. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn emco_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Builds a dataset from `n` rows. Treatment values are relabeled to
/// ordered levels; `z` must hold 0/1.
///
/// # Safety
/// `y`, `d` and `z` must point to `n` readable elements and `out` to a
/// writable handle slot.
#[no_mangle]
pub unsafe extern "C" fn emco_dataset_from_arrays(
    y: *const f64,
    d: *const f64,
    z: *const u8,
    n: usize,
    out: *mut *mut EmcoDataset,
) -> EmcoStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let y = slice(y, n, "y")?.to_vec();
        let d = slice(d, n, "d")?;
        let z = slice(z, n, "z")?.to_vec();
        let inner = Dataset::new(y, d, z)?;
        *out = Box::into_raw(Box::new(EmcoDataset { inner }));
        Ok(())
    })
}

/// Loads a CSV file using the named outcome, treatment and instrument columns.
///
/// # Safety
/// All string arguments must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn emco_dataset_from_csv(
    path: *const c_char,
    y: *const c_char,
    d: *const c_char,
    z: *const c_char,
    out: *mut *mut EmcoDataset,
) -> EmcoStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = string(path, "path")?;
        let schema = Schema::new(&string(y, "y")?, &string(d, "d")?, &string(z, "z")?);
        let (inner, _) = load_csv(path, &schema)?;
        *out = Box::into_raw(Box::new(EmcoDataset { inner }));
        Ok(())
    })
}

/// Attaches cluster ids used by every bootstrap on this dataset.
///
/// # Safety
/// `ds` must be a live handle and `ids` must point to `n` elements.
#[no_mangle]
pub unsafe extern "C" fn emco_dataset_set_clusters(ds: *mut EmcoDataset, ids: *const u32, n: usize) -> EmcoStatus {
    guard(|| {
        let handle = ds.as_mut().ok_or_else(|| null("dataset"))?;
        let ids = slice(ids, n, "ids")?.to_vec();
        handle.inner = handle.inner.clone().with_clusters(ids)?;
        Ok(())
    })
}

/// Releases a dataset. NULL is ignored.
///
/// # Safety
/// `ds` must come from one of the constructors and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn emco_dataset_free(ds: *mut EmcoDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Number of rows, or 0 for NULL.
///
/// # Safety
/// `ds` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn emco_dataset_n(ds: *const EmcoDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.inner.n())
}

/// Number of treatment levels (`dbar + 1`), or 0 for NULL.
///
/// # Safety
/// `ds` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn emco_dataset_num_levels(ds: *const EmcoDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.inner.num_levels())
}

/// Writes `Pr(D=d|Z=1) - Pr(D=d|Z=0)` for every level into `delta_pr`
/// (capacity `len`), plus the first stages of `D` and `1(D>0)`.
///
/// # Safety
/// `delta_pr` must hold `len` doubles; the scalar outputs may be NULL.
#[no_mangle]
pub unsafe extern "C" fn emco_first_stage(
    ds: *const EmcoDataset,
    delta_pr: *mut f64,
    len: usize,
    delta_mean: *mut f64,
    delta_any: *mut f64,
) -> EmcoStatus {
    guard(|| {
        let data = dataset(ds)?;
        if len < data.num_levels() {
            return Err(Fail(EmcoStatus::BufferTooSmall, format!("need {} slots", data.num_levels())));
        }
        let fs = first_stage_diffs(data)?;
        slice_mut(delta_pr, len, "delta_pr")?[..fs.delta_pr.len()].copy_from_slice(&fs.delta_pr);
        if let Some(p) = delta_mean.as_mut() {
            *p = fs.delta_mean;
        }
        if let Some(p) = delta_any.as_mut() {
            *p = fs.delta_any;
        }
        Ok(())
    })
}

/// Complier decomposition. `shares` and `treated_means` receive levels
/// `1..=dbar` (capacity `len`); undefined treated means are NaN.
///
/// # Safety
/// `out` must be writable; the arrays must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn emco_decompose(
    ds: *const EmcoDataset,
    out: *mut EmcoDecomposition,
    shares: *mut f64,
    treated_means: *mut f64,
    len: usize,
) -> EmcoStatus {
    guard(|| {
        let data = dataset(ds)?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        if len < data.dbar() {
            return Err(Fail(EmcoStatus::BufferTooSmall, format!("need {} slots", data.dbar())));
        }
        let dec = complier_decomposition(data)?;
        let k = dec.shares.len();
        slice_mut(shares, len, "shares")?[..k].copy_from_slice(&dec.shares);
        let means = slice_mut(treated_means, len, "treated_means")?;
        for (slot, m) in means.iter_mut().zip(&dec.treated_means) {
            *slot = m.mean.unwrap_or(f64::NAN);
        }
        *out = EmcoDecomposition {
            beta_recoded: dec.beta_recoded,
            untreated_mean: dec.untreated_mean_pooled,
            complier_share: dec.total_complier_share,
        };
        Ok(())
    })
}

/// Moment-inequality test on the level and joint-mass moments, with the
/// outcome split at `outcome_bins` quantile bins. `beta <= 0` selects the
/// default `alpha / 10`.
///
/// # Safety
/// `ds` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn emco_test(
    ds: *const EmcoDataset,
    method: EmcoMethod,
    alpha: f64,
    beta: f64,
    replications: usize,
    outcome_bins: usize,
    seed: u64,
    out: *mut EmcoTestSummary,
) -> EmcoStatus {
    guard(|| {
        let data = dataset(ds)?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        if outcome_bins == 0 {
            return Err(Fail(EmcoStatus::InvalidArgument, "outcome_bins must be positive".into()));
        }
        let ms = build_emco_moments(data, &quantile_partition(data.outcome(), outcome_bins))?;
        let beta = if beta > 0.0 { beta } else { default_beta(alpha) };
        let method = match method {
            EmcoMethod::Rsw => Method::Rsw,
            EmcoMethod::Cck => Method::Cck,
        };
        let r = MomentTest::new(&ms, replications, seed)?.run(method, alpha, beta)?;
        *out = EmcoTestSummary {
            statistic: r.statistic,
            critical_value: r.critical_value,
            reject: r.reject,
            num_moments: r.num_moments,
            num_active: r.num_active,
        };
        Ok(())
    })
}

unsafe fn problem(
    shares: *const f64,
    treated_means: *const f64,
    k: usize,
    untreated_mean: f64,
    y_min: f64,
    y_max: f64,
) -> Result<BoundsProblem, Fail> {
    let shares = slice(shares, k, "shares")?.to_vec();
    let means = slice(treated_means, k, "treated_means")?.to_vec();
    Ok(BoundsProblem::new(shares, means, untreated_mean, (y_min, y_max))?)
}

/// Bounds on `Y_d^d - Y_d^0` for `k` levels. Zero-share levels get NaN.
///
/// # Safety
/// Input arrays must hold `k` doubles, `lo` and `hi` must be writable for `k`.
#[no_mangle]
pub unsafe extern "C" fn emco_effect_bounds(
    shares: *const f64,
    treated_means: *const f64,
    k: usize,
    untreated_mean: f64,
    y_min: f64,
    y_max: f64,
    decreasing_effects: bool,
    lo: *mut f64,
    hi: *mut f64,
) -> EmcoStatus {
    guard(|| {
        let shape = decreasing_effects.then_some(Shape::Decreasing);
        let p = problem(shares, treated_means, k, untreated_mean, y_min, y_max)?.with_shape(shape);
        let r = bounds::effect_bounds(&p)?;
        let lo = slice_mut(lo, k, "lo")?;
        let hi = slice_mut(hi, k, "hi")?;
        for (j, iv) in r.intervals.iter().enumerate() {
            lo[j] = iv.as_ref().map_or(f64::NAN, |i| i.lo);
            hi[j] = iv.as_ref().map_or(f64::NAN, |i| i.hi);
        }
        Ok(())
    })
}

/// Whether some `Y^0` makes every effect satisfy `direction` (with margin
/// `eps` for `Positive`). On success `witness` (capacity `k`, may be NULL)
/// receives `Y_d^0` for positive-share levels in order, NaN elsewhere.
///
/// # Safety
/// Input arrays must hold `k` doubles; `feasible` must be writable.
#[no_mangle]
pub unsafe extern "C" fn emco_joint_sign_feasible(
    shares: *const f64,
    treated_means: *const f64,
    k: usize,
    untreated_mean: f64,
    y_min: f64,
    y_max: f64,
    direction: EmcoDirection,
    eps: f64,
    feasible: *mut bool,
    witness: *mut f64,
) -> EmcoStatus {
    guard(|| {
        let feasible = feasible.as_mut().ok_or_else(|| null("feasible"))?;
        let p = problem(shares, treated_means, k, untreated_mean, y_min, y_max)?;
        let dir = match direction {
            EmcoDirection::NonNegative => Direction::NonNegative,
            EmcoDirection::NonPositive => Direction::NonPositive,
            EmcoDirection::Positive => Direction::Positive(eps),
        };
        let s = bounds::joint_sign_feasible(&p, dir)?;
        *feasible = s.feasible;
        if !witness.is_null() {
            let w = slice_mut(witness, k, "witness")?;
            w.iter_mut().for_each(|v| *v = f64::NAN);
            if let Some(vals) = &s.witness {
                for (&d, &v) in p.active().iter().zip(vals) {
                    w[d] = v;
                }
            }
        }
        Ok(())
    })
}
