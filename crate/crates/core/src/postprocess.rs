//! Procrustes alignment of retained draws, posterior summaries and
//! distance-trace diagnostics.

use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::ItemResponseMatrix;
use crate::error::{Error, Result};
use crate::likelihood::{item_positions, LatentConfiguration};
use crate::sampler::ChainOutput;

/// Samples per partial sum when averaging distance matrices. Fixed so the
/// reduction order does not depend on the worker count.
const REDUCE_CHUNK: usize = 64;

/// Index of the largest log posterior; the earliest index wins ties.
pub fn select_reference(log_posteriors: &[f64]) -> Result<usize> {
    if log_posteriors.is_empty() {
        return Err(Error::Dimension("cannot pick a reference from an empty chain".into()));
    }
    let mut best = 0;
    for (i, &v) in log_posteriors.iter().enumerate() {
        if v > log_posteriors[best] {
            best = i;
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProcrustesFit {
    pub aligned: LatentConfiguration,
    /// Row-major `dim x dim` orthogonal matrix applied to the centered sample.
    pub rotation: Vec<f64>,
    /// Frobenius distance between the aligned sample and the reference.
    pub disparity: f64,
    /// The cross-covariance had a (numerically) zero singular value, so the
    /// optimal rotation is not unique.
    pub rank_deficient: bool,
}

fn to_matrix(z: &LatentConfiguration) -> DMatrix<f64> {
    DMatrix::from_row_slice(z.n(), z.dim(), z.as_slice())
}

fn centered(m: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>) {
    let n = m.nrows() as f64;
    let mean: Vec<f64> = (0..m.ncols()).map(|j| m.column(j).sum() / n).collect();
    let mut c = m.clone();
    for (j, mu) in mean.iter().enumerate() {
        c.column_mut(j).add_scalar_mut(-mu);
    }
    (c, mean)
}

/// Rotation/reflection plus translation of `sample` closest to `reference`
/// in Frobenius norm. No scaling, so within-sample distances are preserved.
pub fn procrustes_align(
    sample: &LatentConfiguration,
    reference: &LatentConfiguration,
) -> Result<ProcrustesFit> {
    if sample.n() != reference.n() || sample.dim() != reference.dim() {
        return Err(Error::Dimension(format!(
            "sample is {}x{} but reference is {}x{}",
            sample.n(),
            sample.dim(),
            reference.n(),
            reference.dim()
        )));
    }
    let (a, _) = centered(&to_matrix(sample));
    let (b, b_mean) = centered(&to_matrix(reference));
    let svd = (a.transpose() * &b).svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(Error::Numerical("SVD of the cross-covariance failed".into())),
    };
    let s = &svd.singular_values;
    let smax = s.max();
    let rank_deficient = s.iter().any(|&v| v <= 1e-12 * smax.max(f64::MIN_POSITIVE));
    let r = u * v_t;
    let mut aligned = a * &r;
    for (j, mu) in b_mean.iter().enumerate() {
        aligned.column_mut(j).add_scalar_mut(*mu);
    }
    let disparity = (&aligned - to_matrix(reference)).norm();
    let dim = sample.dim();
    let mut flat = Vec::with_capacity(sample.n() * dim);
    for row in aligned.row_iter() {
        flat.extend(row.iter());
    }
    let rotation = (0..dim * dim).map(|ix| r[(ix / dim, ix % dim)]).collect();
    Ok(ProcrustesFit {
        aligned: LatentConfiguration::new(sample.n(), dim, flat)?,
        rotation,
        disparity,
        rank_deficient,
    })
}

/// Retained `Z` draws matched to the maximum-posterior draw.
#[derive(Debug, Clone)]
pub struct AlignedChain {
    pub reference: usize,
    pub samples: Vec<LatentConfiguration>,
    pub disparity: Vec<f64>,
    pub rank_deficient: Vec<bool>,
}

pub fn align_chain(chain: &ChainOutput) -> Result<AlignedChain> {
    let reference = select_reference(&chain.log_posteriors())?;
    let target = &chain.samples[reference].state.z;
    let fits: Vec<ProcrustesFit> = chain
        .samples
        .par_iter()
        .map(|s| procrustes_align(&s.state.z, target))
        .collect::<Result<_>>()?;
    let mut out = AlignedChain {
        reference,
        samples: Vec::with_capacity(fits.len()),
        disparity: Vec::with_capacity(fits.len()),
        rank_deficient: Vec::with_capacity(fits.len()),
    };
    for f in fits {
        out.samples.push(f.aligned);
        out.disparity.push(f.disparity);
        out.rank_deficient.push(f.rank_deficient);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub mean: f64,
    pub sd: f64,
    pub hpd_lo: f64,
    pub hpd_hi: f64,
}

/// Shortest interval containing `ceil(level * N)` of the sorted draws.
pub fn hpd_interval(draws: &[f64], level: f64) -> (f64, f64) {
    assert!(!draws.is_empty() && level > 0.0 && level <= 1.0);
    let mut s = draws.to_vec();
    s.sort_by(f64::total_cmp);
    let w = ((level * s.len() as f64).ceil() as usize).clamp(1, s.len());
    let mut best = 0;
    for i in 1..=(s.len() - w) {
        if s[i + w - 1] - s[i] < s[best + w - 1] - s[best] {
            best = i;
        }
    }
    (s[best], s[best + w - 1])
}

pub fn summarize(draws: &[f64], level: f64) -> ParamSummary {
    let n = draws.len() as f64;
    let mean = draws.iter().sum::<f64>() / n;
    let var = if draws.len() > 1 {
        draws.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    let (mut lo, mut hi) = hpd_interval(draws, level);
    // the mean of a skewed sample can fall just outside its shortest window
    lo = lo.min(mean);
    hi = hi.max(mean);
    ParamSummary {
        mean,
        sd: var.sqrt(),
        hpd_lo: lo,
        hpd_hi: hi,
    }
}

#[derive(Debug, Clone)]
pub struct PosteriorSummary {
    pub n: usize,
    pub p: usize,
    pub dim: usize,
    /// Posterior mean person distances, row-major `n x n`.
    pub person_dist: Vec<f64>,
    /// Posterior mean item distances, row-major `p x p`.
    pub item_dist: Vec<f64>,
    pub beta: Vec<ParamSummary>,
    pub theta: Vec<ParamSummary>,
    pub sigma_z_sq: ParamSummary,
    /// Posterior mean of the aligned positions, `n x dim`.
    pub z_mean: Vec<f64>,
    /// Posterior mean of the item positions recomputed from aligned `Z`.
    pub w_mean: Vec<f64>,
}

pub const HPD_LEVEL: f64 = 0.95;

pub fn posterior_distances(
    chain: &ChainOutput,
    aligned: &AlignedChain,
    x: &ItemResponseMatrix,
) -> Result<PosteriorSummary> {
    let (n, p, dim) = (chain.n, chain.p, chain.dim());
    if x.n() != n || x.p() != p {
        return Err(Error::Dimension("chain and response matrix disagree".into()));
    }
    if aligned.samples.len() != chain.samples.len() || aligned.samples.is_empty() {
        return Err(Error::Dimension("aligned chain does not match the chain".into()));
    }
    let width = n * n + p * p + n * dim + p * dim;
    let partials: Vec<Vec<f64>> = aligned
        .samples
        .par_chunks(REDUCE_CHUNK)
        .map(|chunk| -> Result<Vec<f64>> {
            let mut acc = vec![0.0; width];
            for z in chunk {
                let w = item_positions(z, x)?;
                let (pd, rest) = acc.split_at_mut(n * n);
                let (id, rest) = rest.split_at_mut(p * p);
                let (zm, wm) = rest.split_at_mut(n * dim);
                for (a, v) in pd.iter_mut().zip(z.distance_matrix()) {
                    *a += v;
                }
                for (a, v) in id.iter_mut().zip(w.distance_matrix()) {
                    *a += v;
                }
                for (a, v) in zm.iter_mut().zip(z.as_slice()) {
                    *a += v;
                }
                for (a, v) in wm.iter_mut().zip(&w.w) {
                    *a += v;
                }
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    let mut total = vec![0.0; width];
    for part in &partials {
        for (t, v) in total.iter_mut().zip(part) {
            *t += v;
        }
    }
    let count = aligned.samples.len() as f64;
    total.iter_mut().for_each(|v| *v /= count);
    let w_mean = total.split_off(n * n + p * p + n * dim);
    let z_mean = total.split_off(n * n + p * p);
    let item_dist = total.split_off(n * n);
    let person_dist = total;

    let column = |f: &dyn Fn(usize) -> f64| -> Vec<f64> { (0..chain.samples.len()).map(f).collect() };
    let beta = (0..p)
        .map(|i| summarize(&column(&|s| chain.samples[s].state.beta[i]), HPD_LEVEL))
        .collect();
    let theta = (0..n)
        .map(|k| summarize(&column(&|s| chain.samples[s].state.theta[k]), HPD_LEVEL))
        .collect();
    let sigma_z_sq = summarize(&column(&|s| chain.samples[s].state.sigma_z_sq), HPD_LEVEL);
    Ok(PosteriorSummary {
        n,
        p,
        dim,
        person_dist,
        item_dist,
        beta,
        theta,
        sigma_z_sq,
        z_mean,
        w_mean,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Person,
    Item,
}

impl Side {
    pub fn as_str(self) -> &'static str {
        match self {
            Side::Person => "person",
            Side::Item => "item",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistanceTrace {
    pub side: Side,
    pub a: usize,
    pub b: usize,
    pub values: Vec<f64>,
    pub lag1: f64,
    pub ess: f64,
}

/// Lag-1 autocorrelation; 0 for a constant series.
pub fn lag1_autocorrelation(xs: &[f64]) -> f64 {
    autocorrelations(xs, 1).get(1).copied().unwrap_or(0.0)
}

fn autocorrelations(xs: &[f64], max_lag: usize) -> Vec<f64> {
    let n = xs.len();
    if n < 2 {
        return vec![1.0];
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    let c: Vec<f64> = xs.iter().map(|v| v - mean).collect();
    let g0 = c.iter().map(|v| v * v).sum::<f64>() / n as f64;
    if g0 <= f64::EPSILON * mean.abs().max(1.0).powi(2) * 1e-4 {
        let mut out = vec![0.0; max_lag.min(n - 1) + 1];
        out[0] = 1.0;
        return out;
    }
    (0..=max_lag.min(n - 1))
        .map(|t| c[..n - t].iter().zip(&c[t..]).map(|(a, b)| a * b).sum::<f64>() / n as f64 / g0)
        .collect()
}

/// Effective sample size from Geyer's initial monotone sequence estimator.
/// A constant series counts as `N` independent draws; the estimate is capped
/// at `N log10 N` for strongly antithetic series.
pub fn effective_sample_size(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 4 {
        return n as f64;
    }
    let rho = autocorrelations(xs, n - 1);
    if rho.iter().skip(1).all(|&r| r == 0.0) {
        return n as f64;
    }
    let mut tau = -1.0;
    let mut prev = f64::INFINITY;
    let mut m = 0;
    while 2 * m + 1 < rho.len() {
        let pair = rho[2 * m] + rho[2 * m + 1];
        if pair <= 0.0 {
            break;
        }
        let pair = pair.min(prev);
        tau += 2.0 * pair;
        prev = pair;
        m += 1;
    }
    let cap = n as f64 * (n as f64).log10();
    (n as f64 / tau.max(f64::MIN_POSITIVE)).min(cap)
}

pub fn distance_trace(
    chain: &ChainOutput,
    x: &ItemResponseMatrix,
    side: Side,
    pairs: &[(usize, usize)],
) -> Result<Vec<DistanceTrace>> {
    let m = match side {
        Side::Person => chain.n,
        Side::Item => chain.p,
    };
    if let Some(&(a, b)) = pairs.iter().find(|&&(a, b)| a >= m || b >= m) {
        return Err(Error::Dimension(format!(
            "{} pair ({a}, {b}) out of range for {m} units",
            side.as_str()
        )));
    }
    let mut values = vec![Vec::with_capacity(chain.samples.len()); pairs.len()];
    for s in &chain.samples {
        let z = &s.state.z;
        match side {
            Side::Person => {
                for (v, &(a, b)) in values.iter_mut().zip(pairs) {
                    v.push(crate::likelihood::pair_distance(z.point(a), z.point(b)));
                }
            }
            Side::Item => {
                let w = item_positions(z, x)?;
                for (v, &(a, b)) in values.iter_mut().zip(pairs) {
                    v.push(crate::likelihood::pair_distance(w.point(a), w.point(b)));
                }
            }
        }
    }
    Ok(values
        .into_iter()
        .zip(pairs)
        .map(|(values, &(a, b))| DistanceTrace {
            side,
            a,
            b,
            lag1: lag1_autocorrelation(&values),
            ess: effective_sample_size(&values),
            values,
        })
        .collect())
}

/// A handful of pairs spread over the index range, for trace plots.
pub fn default_trace_pairs(m: usize, count: usize) -> Vec<(usize, usize)> {
    let step = (m / count.max(1)).max(1);
    let mut out: Vec<(usize, usize)> = (0..count)
        .map(|j| {
            let a = (j * step) % m;
            (a, (a + m / 2) % m)
        })
        .filter(|&(a, b)| a != b)
        .collect();
    out.dedup();
    out
}

fn fmt(v: f64) -> String {
    format!("{v}")
}

pub fn write_matrix_csv(path: &Path, m: usize, values: &[f64], labels: &[String]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec![String::new()];
    header.extend(labels.iter().cloned());
    w.write_record(&header)?;
    for a in 0..m {
        let mut row = vec![labels[a].clone()];
        row.extend(values[a * m..(a + 1) * m].iter().map(|&v| fmt(v)));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn write_param_csv(path: &Path, id: &str, labels: &[String], params: &[ParamSummary]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([id, "mean", "sd", "hpd95_lo", "hpd95_hi"])?;
    for (l, s) in labels.iter().zip(params) {
        w.write_record([l.clone(), fmt(s.mean), fmt(s.sd), fmt(s.hpd_lo), fmt(s.hpd_hi)])?;
    }
    w.flush().map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn person_labels(x: &ItemResponseMatrix) -> Vec<String> {
    x.row_ids
        .clone()
        .unwrap_or_else(|| (1..=x.n()).map(|k| format!("person{k}")).collect())
}

pub fn item_labels(x: &ItemResponseMatrix) -> Vec<String> {
    x.col_ids
        .clone()
        .unwrap_or_else(|| (1..=x.p()).map(|i| format!("item{i}")).collect())
}

/// Writes `person_dist.csv`, `item_dist.csv`, `beta_summary.csv`,
/// `theta_summary.csv` and one `traces/<side>_<a>_<b>.csv` per trace.
pub fn write_summary(
    dir: &Path,
    x: &ItemResponseMatrix,
    summary: &PosteriorSummary,
    traces: &[DistanceTrace],
) -> Result<()> {
    let persons = person_labels(x);
    let items = item_labels(x);
    write_matrix_csv(&dir.join("person_dist.csv"), summary.n, &summary.person_dist, &persons)?;
    write_matrix_csv(&dir.join("item_dist.csv"), summary.p, &summary.item_dist, &items)?;
    write_param_csv(&dir.join("beta_summary.csv"), "item", &items, &summary.beta)?;
    write_param_csv(&dir.join("theta_summary.csv"), "person", &persons, &summary.theta)?;
    let tdir = dir.join("traces");
    std::fs::create_dir_all(&tdir).map_err(|e| Error::io(format!("creating {}", tdir.display()), e))?;
    let mut diag = csv::Writer::from_path(tdir.join("diagnostics.csv"))?;
    diag.write_record(["side", "a", "b", "lag1", "ess"])?;
    for t in traces {
        let name = format!("{}_{}_{}.csv", t.side.as_str(), t.a + 1, t.b + 1);
        let path = tdir.join(name);
        let mut f = std::io::BufWriter::new(
            std::fs::File::create(&path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?,
        );
        let io = |e| Error::io(format!("writing {}", path.display()), e);
        writeln!(f, "sample,distance").map_err(io)?;
        for (s, v) in t.values.iter().enumerate() {
            writeln!(f, "{s},{}", fmt(*v)).map_err(io)?;
        }
        f.flush().map_err(io)?;
        diag.write_record([
            t.side.as_str().to_string(),
            (t.a + 1).to_string(),
            (t.b + 1).to_string(),
            fmt(t.lag1),
            fmt(t.ess),
        ])?;
    }
    diag.flush().map_err(|e| Error::io("writing trace diagnostics", e))
}
