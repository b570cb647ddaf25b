//! C ABI over `contrastive_lab`.
//!
//! Matrices cross the boundary as row-major `double` arrays with explicit
//! dimensions. Every function returns a [`ClabStatus`]; on failure the
//! message is available from [`clab_last_error`] on the same thread.
//! Objects are opaque handles released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use contrastive_lab::crossmodal::{retrieve_scored, EmbeddingIndex};
use contrastive_lab::encoders::{SimilarityBatch, Tilting};
use contrastive_lab::gaussian::{self, BlockGaussian};
use contrastive_lab::linalg::Matrix;
use contrastive_lab::{losses, Error};

/// Result code of every call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClabStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    NotPositiveDefinite = 4,
    DivergentNormalizer = 5,
    NoConvergence = 6,
    BufferTooSmall = 7,
    Internal = 8,
}

/// Joint Gaussian over `(u, v)` split into blocks.
pub struct ClabGaussian(BlockGaussian);

/// Embedding index for top-k retrieval.
pub struct ClabIndex(EmbeddingIndex);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

struct Fail(ClabStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::NotPositiveDefinite(_) => ClabStatus::NotPositiveDefinite,
            Error::DimensionMismatch { .. } | Error::RankOutOfRange { .. } => ClabStatus::DimensionMismatch,
            Error::DivergentNormalizer(_) => ClabStatus::DivergentNormalizer,
            Error::SolverDidNotConverge { .. } => ClabStatus::NoConvergence,
            _ => ClabStatus::InvalidArgument,
        };
        Fail(code, e.to_string())
    }
}

fn fail(code: ClabStatus, msg: impl Into<String>) -> Fail {
    Fail(code, msg.into())
}

/// Runs `f`, converting errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> ClabStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => ClabStatus::Ok,
        Ok(Err(Fail(code, msg))) => {
            set_error(&msg);
            code
        }
        Err(_) => {
            set_error("internal panic");
            ClabStatus::Internal
        }
    }
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Fail> {
    if p.is_null() {
        return Err(fail(ClabStatus::NullPointer, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut()
        .ok_or_else(|| fail(ClabStatus::NullPointer, format!("{what} is null")))
}

unsafe fn row_major(p: *const f64, rows: usize, cols: usize, what: &str) -> Result<Matrix, Fail> {
    let len = rows
        .checked_mul(cols)
        .ok_or_else(|| fail(ClabStatus::InvalidArgument, format!("{what} is too large")))?;
    Ok(Matrix::from_row_slice(rows, cols, slice(p, len, what)?))
}

fn write_row_major(m: &Matrix, dst: *mut f64, cap: usize) -> Result<(), Fail> {
    if dst.is_null() {
        return Err(fail(ClabStatus::NullPointer, "output buffer is null"));
    }
    if cap < m.len() {
        return Err(fail(
            ClabStatus::BufferTooSmall,
            format!("output needs {} entries, buffer holds {cap}", m.len()),
        ));
    }
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            // SAFETY: bounds checked against cap above
            unsafe { *dst.add(i * m.ncols() + j) = m[(i, j)] };
        }
    }
    Ok(())
}

unsafe fn gaussian<'a>(g: *const ClabGaussian) -> Result<&'a BlockGaussian, Fail> {
    g.as_ref()
        .map(|g| &g.0)
        .ok_or_else(|| fail(ClabStatus::NullPointer, "gaussian handle is null"))
}

/// Message of the last failed call on this thread. Valid until the next
/// failing call on the same thread; never null.
#[no_mangle]
pub extern "C" fn clab_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn clab_version() -> *const c_char {
    static V: &CStr = match CStr::from_bytes_with_nul(concat!(env!("CARGO_PKG_VERSION"), "\0").as_bytes()) {
        Ok(v) => v,
        Err(_) => panic!("version string"),
    };
    V.as_ptr()
}

/// Builds a block Gaussian from a row-major `dim × dim` joint covariance
/// whose first `n_x` coordinates are `u`.
///
/// # Safety
/// `cov` must point to `dim * dim` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn clab_gaussian_new(
    cov: *const f64,
    dim: usize,
    n_x: usize,
    out_handle: *mut *mut ClabGaussian,
) -> ClabStatus {
    guard(|| {
        let o = out(out_handle, "out_handle")?;
        *o = ptr::null_mut();
        let c = row_major(cov, dim, dim, "cov")?;
        let g = BlockGaussian::from_joint(&c, n_x)?;
        *o = Box::into_raw(Box::new(ClabGaussian(g)));
        Ok(())
    })
}

/// # Safety
/// `g` must come from [`clab_gaussian_new`] and not be freed twice. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn clab_gaussian_free(g: *mut ClabGaussian) {
    if !g.is_null() {
        drop(Box::from_raw(g));
    }
}

/// Sizes of the `u` and `v` blocks.
///
/// # Safety
/// `g` must be a live handle; the outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn clab_gaussian_dims(g: *const ClabGaussian, n_x: *mut usize, n_y: *mut usize) -> ClabStatus {
    guard(|| {
        let g = gaussian(g)?;
        *out(n_x, "n_x")? = g.n_x();
        *out(n_y, "n_y")? = g.n_y();
        Ok(())
    })
}

/// Which closed-form minimizer to compute.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClabObjective {
    Cond = 0,
    Joint = 1,
}

/// Writes the `n_x × n_y` minimizer `A` row-major into `a`. `rank` 0 means
/// unconstrained.
///
/// # Safety
/// `g` must be a live handle and `a` must hold `cap` doubles.
#[no_mangle]
pub unsafe extern "C" fn clab_minimizer(
    g: *const ClabGaussian,
    objective: ClabObjective,
    rank: usize,
    a: *mut f64,
    cap: usize,
) -> ClabStatus {
    guard(|| {
        let g = gaussian(g)?;
        let r = (rank > 0).then_some(rank);
        let m = match objective {
            ClabObjective::Cond => gaussian::minimizer_cond(g, r)?,
            ClabObjective::Joint => gaussian::minimizer_joint(g, r)?,
        };
        write_row_major(&m, a, cap)
    })
}

/// Population loss of the bilinear tilting `A` (row-major `n_x × n_y`).
///
/// # Safety
/// `g` must be a live handle; `a` must hold `n_x * n_y` doubles.
#[no_mangle]
pub unsafe extern "C" fn clab_closed_loss(
    g: *const ClabGaussian,
    objective: ClabObjective,
    a: *const f64,
    value: *mut f64,
) -> ClabStatus {
    guard(|| {
        let g = gaussian(g)?;
        let a = row_major(a, g.n_x(), g.n_y(), "a")?;
        *out(value, "value")? = match objective {
            ClabObjective::Cond => gaussian::cond_loss_closed(&a, g)?,
            ClabObjective::Joint => gaussian::joint_loss_closed(&a, g)?,
        };
        Ok(())
    })
}

/// Shrinkage `h(σ)` applied to singular values by the joint minimizer.
///
/// # Safety
/// `value` must be writable.
#[no_mangle]
pub unsafe extern "C" fn clab_shrinkage_h(sigma: f64, value: *mut f64) -> ClabStatus {
    guard(|| {
        *out(value, "value")? = gaussian::shrinkage_h(sigma)?;
        Ok(())
    })
}

/// Weighted conditional loss of a row-major `n × n` score matrix, rows
/// indexing `u`. With `clip` set the weights are ignored and symmetric
/// InfoNCE is returned instead.
///
/// # Safety
/// `scores` must hold `n * n` doubles; `value` must be writable.
#[no_mangle]
pub unsafe extern "C" fn clab_loss_cond(
    scores: *const f64,
    n: usize,
    lambda_u: f64,
    lambda_v: f64,
    clip: bool,
    value: *mut f64,
) -> ClabStatus {
    guard(|| {
        let s = SimilarityBatch {
            s: row_major(scores, n, n, "scores")?,
            tilting: Tilting::InnerProduct,
            tau: 1.0,
        };
        let v = if clip {
            losses::loss_clip(&s)?
        } else {
            losses::loss_cond(&s, lambda_u, lambda_v)?
        };
        *out(value, "value")? = v;
        Ok(())
    })
}

/// Joint loss: positives on the diagonal of `scores`, all `n²` entries as
/// negatives.
///
/// # Safety
/// `scores` must hold `n * n` doubles; `value` must be writable.
#[no_mangle]
pub unsafe extern "C" fn clab_loss_joint(scores: *const f64, n: usize, value: *mut f64) -> ClabStatus {
    guard(|| {
        let s = row_major(scores, n, n, "scores")?;
        let pos: Vec<f64> = s.diagonal().iter().copied().collect();
        *out(value, "value")? = losses::loss_joint(&pos, &s)?;
        Ok(())
    })
}

/// Indexes `n` row-major embeddings of width `dim`. Rows are scaled to unit
/// norm when `normalized` is set, which makes scores cosine similarities.
///
/// # Safety
/// `embeddings` must hold `n * dim` doubles; `out_handle` must be writable.
#[no_mangle]
pub unsafe extern "C" fn clab_index_new(
    embeddings: *const f64,
    n: usize,
    dim: usize,
    normalized: bool,
    out_handle: *mut *mut ClabIndex,
) -> ClabStatus {
    guard(|| {
        let o = out(out_handle, "out_handle")?;
        *o = ptr::null_mut();
        let e = row_major(embeddings, n, dim, "embeddings")?;
        *o = Box::into_raw(Box::new(ClabIndex(EmbeddingIndex::with_row_ids(e, normalized)?)));
        Ok(())
    })
}

/// # Safety
/// `index` must come from [`clab_index_new`] and not be freed twice. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn clab_index_free(index: *mut ClabIndex) {
    if !index.is_null() {
        drop(Box::from_raw(index));
    }
}

/// Top-`k` rows for `query`, best first; ties go to the lower row.
/// `scores` may be null.
///
/// # Safety
/// `index` must be live, `query` must hold `dim` doubles, `rows` (and
/// `scores` when given) must hold `k` entries.
#[no_mangle]
pub unsafe extern "C" fn clab_index_retrieve(
    index: *const ClabIndex,
    query: *const f64,
    dim: usize,
    k: usize,
    rows: *mut usize,
    scores: *mut f64,
) -> ClabStatus {
    guard(|| {
        let index = &index
            .as_ref()
            .ok_or_else(|| fail(ClabStatus::NullPointer, "index handle is null"))?
            .0;
        let q = slice(query, dim, "query")?;
        if rows.is_null() {
            return Err(fail(ClabStatus::NullPointer, "rows is null"));
        }
        for (i, (r, s)) in retrieve_scored(q, index, k)?.into_iter().enumerate() {
            *rows.add(i) = r;
            if !scores.is_null() {
                *scores.add(i) = s;
            }
        }
        Ok(())
    })
}

/// Runs the analytic self-check suite. `passed` and `total` receive the
/// counts; the status is `Ok` even when checks fail.
///
/// # Safety
/// Both outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn clab_verify(passed: *mut usize, total: *mut usize) -> ClabStatus {
    guard(|| {
        let p = out(passed, "passed")?;
        let t = out(total, "total")?;
        let r = contrastive_lab::experiments::verify();
        *p = r.iter().filter(|o| o.passed).count();
        *t = r.len();
        Ok(())
    })
}
