//! C interface to the `dlsjm` library.
//!
//! Every entry point returns a [`DlsjmStatus`]; on failure the message is
//! available from [`dlsjm_last_error_message`] on the same thread. Objects
//! are handed out as opaque pointers and must be released with the matching
//! `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use dlsjm::clustering::{build_similarity, spectral_cluster, SpectralConfig};
use dlsjm::data::{load_any, CsvOptions, ItemResponseMatrix};
use dlsjm::likelihood::PriorConfig;
use dlsjm::pipeline::{self, RunConfig};
use dlsjm::postprocess::{align_chain, posterior_distances, PosteriorSummary};
use dlsjm::sampler::{run_chain, ChainOutput, SamplerConfig};
use dlsjm::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DlsjmStatus {
    Ok = 0,
    InvalidInput = 2,
    Numerical = 3,
    Convergence = 4,
    NullPointer = 5,
    BufferTooSmall = 6,
    Panic = 7,
}

impl From<&Error> for DlsjmStatus {
    fn from(e: &Error) -> Self {
        match e.exit_code() {
            3 => DlsjmStatus::Numerical,
            4 => DlsjmStatus::Convergence,
            _ => DlsjmStatus::InvalidInput,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn fail(status: DlsjmStatus, msg: impl Into<String>) -> DlsjmStatus {
    set_error(msg.into());
    status
}

/// Runs `f`, converting errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), DlsjmStatus>) -> DlsjmStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DlsjmStatus::Ok,
        Ok(Err(s)) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            fail(DlsjmStatus::Panic, format!("internal panic: {msg}"))
        }
    }
}

fn lift(e: Error) -> DlsjmStatus {
    fail(DlsjmStatus::from(&e), e.to_string())
}

fn null(what: &str) -> DlsjmStatus {
    fail(DlsjmStatus::NullPointer, format!("{what} is null"))
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, DlsjmStatus> {
    if p.is_null() {
        return Err(null(what));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(DlsjmStatus::InvalidInput, format!("{what} is not valid UTF-8")))?;
    Ok(PathBuf::from(s))
}

unsafe fn copy_out(src: &[f64], buf: *mut f64, len: usize) -> Result<(), DlsjmStatus> {
    if buf.is_null() {
        return Err(null("output buffer"));
    }
    if len < src.len() {
        return Err(fail(
            DlsjmStatus::BufferTooSmall,
            format!("buffer holds {len} values, {} needed", src.len()),
        ));
    }
    ptr::copy_nonoverlapping(src.as_ptr(), buf, src.len());
    Ok(())
}

/// Message of the last failed call on this thread, or null. The pointer is
/// valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn dlsjm_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn dlsjm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Binary response matrix.
pub struct DlsjmMatrix(ItemResponseMatrix);

/// Builds a matrix from `n * p` row-major 0/1 bytes.
///
/// # Safety
/// `data` must point to `n * p` readable bytes and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dlsjm_matrix_new(n: usize, p: usize, data: *const u8, out: *mut *mut DlsjmMatrix) -> DlsjmStatus {
    guard(|| {
        if data.is_null() {
            return Err(null("data"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let len = n.checked_mul(p).ok_or_else(|| fail(DlsjmStatus::InvalidInput, "n * p overflows"))?;
        let x = ItemResponseMatrix::new(n, p, std::slice::from_raw_parts(data, len).to_vec()).map_err(lift)?;
        *out = Box::into_raw(Box::new(DlsjmMatrix(x)));
        Ok(())
    })
}

/// Loads a CSV (header detected automatically) or binary cache file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dlsjm_matrix_load(path: *const c_char, out: *mut *mut DlsjmMatrix) -> DlsjmStatus {
    guard(|| {
        let path = path_arg(path, "path")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let x = load_any(&path, CsvOptions::default()).map_err(lift)?;
        *out = Box::into_raw(Box::new(DlsjmMatrix(x)));
        Ok(())
    })
}

/// # Safety
/// `m` must come from this library; the out pointers may be null.
#[no_mangle]
pub unsafe extern "C" fn dlsjm_matrix_dims(m: *const DlsjmMatrix, n: *mut usize, p: *mut usize) -> DlsjmStatus {
    guard(|| {
        let m = m.as_ref().ok_or_else(|| null("matrix"))?;
        if !n.is_null() {
            *n = m.0.n();
        }
        if !p.is_null() {
            *p = m.0.p();
        }
        Ok(())
    })
}

/// # Safety
/// `m` must come from this library (or be null) and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn dlsjm_matrix_free(m: *mut DlsjmMatrix) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Sampler settings exposed across the ABI.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct DlsjmSamplerOptions {
    pub n_iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub dim: usize,
    pub adapt_window: usize,
    pub seed: u64,
    /// Nonzero to evaluate the respondent-position likelihood exactly.
    pub exact_likelihood: u8,
}

impl From<&DlsjmSamplerOptions> for SamplerConfig {
    fn from(o: &DlsjmSamplerOptions) -> Self {
        SamplerConfig {
            n_iterations: o.n_iterations,
            burn_in: o.burn_in,
            thin: o.thin,
            dim: o.dim,
            adapt_window: o.adapt_window,
            seed: o.seed,
            exact_likelihood: o.exact_likelihood != 0,
            ..SamplerConfig::default()
        }
    }
}

#[no_mangle]
pub extern "C" fn dlsjm_sampler_options_default() -> DlsjmSamplerOptions {
    let d = SamplerConfig::default();
    DlsjmSamplerOptions {
        n_iterations: d.n_iterations,
        burn_in: d.burn_in,
        thin: d.thin,
        dim: d.dim,
        adapt_window: d.adapt_window,
        seed: d.seed,
        exact_likelihood: d.exact_likelihood as u8,
    }
}

/// Chain plus its post-processed summary.
pub struct DlsjmFit {
    chain: ChainOutput,
    summary: PosteriorSummary,
}

/// Runs the sampler with default priors and post-processes the chain.
///
/// # Safety
/// `m` and `opts` must be valid, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dlsjm_fit(
    m: *const DlsjmMatrix,
    opts: *const DlsjmSamplerOptions,
    out: *mut *mut DlsjmFit,
) -> DlsjmStatus {
    guard(|| {
        let m = m.as_ref().ok_or_else(|| null("matrix"))?;
        let opts = opts.as_ref().ok_or_else(|| null("options"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let x = &m.0;
        x.check_fittable().map_err(lift)?;
        let chain = run_chain(x, PriorConfig::default(), &SamplerConfig::from(opts)).map_err(lift)?;
        let aligned = align_chain(&chain).map_err(lift)?;
        let summary = posterior_distances(&chain, &aligned, x).map_err(lift)?;
        *out = Box::into_raw(Box::new(DlsjmFit { chain, summary }));
        Ok(())
    })
}

/// # Safety
/// `f` must come from this library.
#[no_mangle]
pub unsafe extern "C" fn dlsjm_fit_sample_count(f: *const DlsjmFit) -> usize {
    f.as_ref().map_or(0, |f| f.chain.samples.len())
}

/// Number of proposal blocks reported by [`dlsjm_fit_acceptance_rates`].
///
/// # Safety
/// `f` must come from this library.
#[no_mangle]
pub unsafe extern "C" fn dlsjm_fit_block_count(f: *const DlsjmFit) -> usize {
    f.as_ref().map_or(0, |f| f.chain.ledger.blocks.len())
}

/// Post-burn-in acceptance rate per block (NaN when a block made no
/// proposals).
///
/// # Safety
/// `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn dlsjm_fit_acceptance_rates(f: *const DlsjmFit, buf: *mut f64, len: usize) -> DlsjmStatus {
    guard(|| {
        let f = f.as_ref().ok_or_else(|| null("fit"))?;
        let rates: Vec<f64> = f
            .chain
            .ledger
            .sampling_rates()
            .into_iter()
            .map(|(_, r)| r.unwrap_or(f64::NAN))
            .collect();
        copy_out(&rates, buf, len)
    })
}

/// Posterior mean respondent distances, row-major `n x n`.
///
/// # Safety
/// `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn dlsjm_fit_person_distances(f: *const DlsjmFit, buf: *mut f64, len: usize) -> DlsjmStatus {
    guard(|| copy_out(&f.as_ref().ok_or_else(|| null("fit"))?.summary.person_dist, buf, len))
}

/// Posterior mean item distances, row-major `p x p`.
///
/// # Safety
/// `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn dlsjm_fit_item_distances(f: *const DlsjmFit, buf: *mut f64, len: usize) -> DlsjmStatus {
    guard(|| copy_out(&f.as_ref().ok_or_else(|| null("fit"))?.summary.item_dist, buf, len))
}

/// Posterior mean respondent positions, row-major `n x dim`.
///
/// # Safety
/// `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn dlsjm_fit_person_positions(f: *const DlsjmFit, buf: *mut f64, len: usize) -> DlsjmStatus {
    guard(|| copy_out(&f.as_ref().ok_or_else(|| null("fit"))?.summary.z_mean, buf, len))
}

/// # Safety
/// `f` must come from this library (or be null) and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn dlsjm_fit_free(f: *mut DlsjmFit) {
    if !f.is_null() {
        drop(Box::from_raw(f));
    }
}

/// Spectral clustering of an `m x m` distance matrix into `g` groups using a
/// `k`-nearest-neighbour graph. Writes 0-based labels.
///
/// # Safety
/// `dist` must hold `m * m` doubles and `labels` `m` entries.
#[no_mangle]
pub unsafe extern "C" fn dlsjm_spectral_cluster(
    dist: *const f64,
    m: usize,
    g: usize,
    k: usize,
    seed: u64,
    labels: *mut usize,
) -> DlsjmStatus {
    guard(|| {
        if dist.is_null() {
            return Err(null("dist"));
        }
        if labels.is_null() {
            return Err(null("labels"));
        }
        let len = m.checked_mul(m).ok_or_else(|| fail(DlsjmStatus::InvalidInput, "m * m overflows"))?;
        let d = std::slice::from_raw_parts(dist, len);
        let graph = build_similarity(d, m, k).map_err(lift)?;
        let cfg = SpectralConfig {
            seed,
            ..SpectralConfig::default()
        };
        let a = spectral_cluster(&graph, g, &cfg).map_err(lift)?;
        ptr::copy_nonoverlapping(a.labels.as_ptr(), labels, m);
        Ok(())
    })
}

/// Full pipeline into a run directory, as the command-line `fit` does.
/// `config` may be null for defaults; `seed` overrides the file.
///
/// # Safety
/// Path arguments must be NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn dlsjm_run_fit(
    config: *const c_char,
    input: *const c_char,
    out_dir: *const c_char,
    seed: u64,
) -> DlsjmStatus {
    guard(|| {
        let mut cfg = if config.is_null() {
            RunConfig::default()
        } else {
            RunConfig::load(&path_arg(config, "config")?).map_err(lift)?
        };
        cfg.seed = Some(seed);
        let input = path_arg(input, "input")?;
        let out = path_arg(out_dir, "out_dir")?;
        let res = pipeline::fit(&cfg, &input, CsvOptions::default(), &out).map_err(lift)?;
        match res.guard {
            Some(g) => Err(fail(DlsjmStatus::Convergence, g)),
            None => Ok(()),
        }
    })
}
