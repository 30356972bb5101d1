//! Finite mixture of Rasch models fitted by marginal maximum likelihood.
//!
//! Class `g` has item easiness `beta_g` (summing to zero), ability
//! distribution `N(mu_g, sigma_g^2)` and weight `pi_g`. Abilities are
//! integrated out with Gauss-Hermite quadrature, so EM runs over the joint
//! latent (class, node). The M-step works in the shifted parametrization
//! `a_gi = mu_g + beta_gi` where the expected complete-data log-likelihood is
//! jointly concave in `(a_g, sigma_g)`; damped Newton steps that never lower
//! it make every iteration a generalized EM step.

use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clustering::ClusterAssignment;
use crate::data::ItemResponseMatrix;
use crate::error::{Error, Result};
use crate::likelihood::softplus::{sigmoid, softplus};

/// Respondents per partial sum in the E-step.
const PERSON_CHUNK: usize = 64;

/// Nodes and weights for `int f(t) exp(-t^2) dt` (Golub-Welsch).
pub fn gauss_hermite(order: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(order >= 1);
    let jacobi = DMatrix::from_fn(order, order, |i, j| {
        if i + 1 == j || j + 1 == i {
            ((i.max(j)) as f64 / 2.0).sqrt()
        } else {
            0.0
        }
    });
    let eig = SymmetricEigen::new(jacobi);
    let mut pairs: Vec<(f64, f64)> = (0..order)
        .map(|c| {
            let v0 = eig.eigenvectors[(0, c)];
            (eig.eigenvalues[c], std::f64::consts::PI.sqrt() * v0 * v0)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmConfig {
    pub quadrature_nodes: usize,
    pub starts: usize,
    pub max_iter: usize,
    pub rel_tol: f64,
    pub newton_steps: usize,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            quadrature_nodes: 21,
            starts: 10,
            max_iter: 2000,
            rel_tol: 1e-6,
            newton_steps: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureRaschModel {
    pub g: usize,
    pub weights: Vec<f64>,
    /// `beta[g][i]`, summing to zero over `i` within each class.
    pub beta: Vec<Vec<f64>>,
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub quadrature_nodes: usize,
    pub log_likelihood: f64,
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Starts abandoned because a class collapsed.
    pub degenerate_restarts: usize,
}

/// Standard-normal quadrature: abscissas `sqrt(2) t_q` and log weights
/// `ln(w_q / sqrt(pi))`.
fn normal_rule(order: usize) -> (Vec<f64>, Vec<f64>) {
    let (t, w) = gauss_hermite(order);
    let e = t.iter().map(|v| std::f64::consts::SQRT_2 * v).collect();
    let lw = w.iter().map(|v| (v / std::f64::consts::PI.sqrt()).ln()).collect();
    (e, lw)
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

#[derive(Clone)]
struct Params {
    log_pi: Vec<f64>,
    a: Vec<Vec<f64>>,
    sigma: Vec<f64>,
}

/// Log joint of a response pattern with each (class, node).
fn pattern_log_joint(row: &[u8], p: &Params, e: &[f64], lw: &[f64], out: &mut [f64]) {
    let nq = e.len();
    for (g, a) in p.a.iter().enumerate() {
        for q in 0..nq {
            let shift = p.sigma[g] * e[q];
            let mut ll = 0.0;
            for (x, ai) in row.iter().zip(a) {
                let eta = ai + shift;
                ll += if *x == 1 { eta } else { 0.0 } - softplus(eta);
            }
            out[g * nq + q] = p.log_pi[g] + lw[q] + ll;
        }
    }
}

struct EStep {
    loglik: f64,
    /// expected counts per (class, node)
    r: Vec<f64>,
    /// expected correct counts per (class, node, item)
    s: Vec<f64>,
}

fn e_step(x: &ItemResponseMatrix, par: &Params, e: &[f64], lw: &[f64]) -> EStep {
    let (n, p) = (x.n(), x.p());
    let gq = par.a.len() * e.len();
    let rows: Vec<usize> = (0..n).collect();
    let parts: Vec<EStep> = rows
        .par_chunks(PERSON_CHUNK)
        .map(|chunk| {
            let mut acc = EStep {
                loglik: 0.0,
                r: vec![0.0; gq],
                s: vec![0.0; gq * p],
            };
            let mut lj = vec![0.0; gq];
            for &k in chunk {
                let row = x.row(k);
                pattern_log_joint(row, par, e, lw, &mut lj);
                let lse = log_sum_exp(&lj);
                acc.loglik += lse;
                for (c, v) in lj.iter().enumerate() {
                    let w = (v - lse).exp();
                    acc.r[c] += w;
                    for (i, &xi) in row.iter().enumerate() {
                        if xi == 1 {
                            acc.s[c * p + i] += w;
                        }
                    }
                }
            }
            acc
        })
        .collect();
    let mut total = EStep {
        loglik: 0.0,
        r: vec![0.0; gq],
        s: vec![0.0; gq * p],
    };
    for part in parts {
        total.loglik += part.loglik;
        total.r.iter_mut().zip(&part.r).for_each(|(t, v)| *t += v);
        total.s.iter_mut().zip(&part.s).for_each(|(t, v)| *t += v);
    }
    total
}

/// Expected complete-data log-likelihood of one class.
fn class_q(a: &[f64], sigma: f64, r: &[f64], s: &[f64], e: &[f64]) -> f64 {
    let p = a.len();
    let mut q = 0.0;
    for (j, &ej) in e.iter().enumerate() {
        for i in 0..p {
            let eta = a[i] + sigma * ej;
            q += s[j * p + i] * eta - r[j] * softplus(eta);
        }
    }
    q
}

const MIN_SIGMA: f64 = 1e-4;

/// Damped Newton steps on `(a_g, sigma_g)`; a step is taken only if it does
/// not lower the class objective.
fn m_step_class(a: &mut [f64], sigma: &mut f64, r: &[f64], s: &[f64], e: &[f64], steps: usize) {
    let p = a.len();
    for _ in 0..steps {
        let mut grad = DVector::<f64>::zeros(p + 1);
        let mut hess = DMatrix::<f64>::zeros(p + 1, p + 1);
        for (j, &ej) in e.iter().enumerate() {
            for i in 0..p {
                let eta = a[i] + *sigma * ej;
                let pr = sigmoid(eta);
                let resid = s[j * p + i] - r[j] * pr;
                let curv = r[j] * pr * (1.0 - pr);
                grad[i] += resid;
                grad[p] += ej * resid;
                hess[(i, i)] += curv;
                hess[(i, p)] += ej * curv;
                hess[(p, p)] += ej * ej * curv;
            }
        }
        for i in 0..p {
            hess[(p, i)] = hess[(i, p)];
        }
        let scale = hess.diagonal().max().max(1e-300);
        for d in 0..=p {
            hess[(d, d)] += 1e-10 * scale;
        }
        let step = match hess.clone().cholesky() {
            Some(ch) => ch.solve(&grad),
            None => grad.clone(),
        };
        if step.iter().any(|v| !v.is_finite()) {
            return;
        }
        let before = class_q(a, *sigma, r, s, e);
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let na: Vec<f64> = a.iter().zip(step.iter()).map(|(v, d)| v + t * d).collect();
            let ns = *sigma + t * step[p];
            if ns >= MIN_SIGMA {
                let after = class_q(&na, ns, r, s, e);
                if after >= before {
                    a.copy_from_slice(&na);
                    *sigma = ns;
                    accepted = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !accepted || step.norm() * t < 1e-12 {
            return;
        }
    }
}

fn m_step(par: &mut Params, est: &EStep, e: &[f64], p: usize, n: usize, steps: usize) {
    let nq = e.len();
    for g in 0..par.a.len() {
        let r = &est.r[g * nq..(g + 1) * nq];
        let s = &est.s[g * nq * p..(g + 1) * nq * p];
        par.log_pi[g] = (r.iter().sum::<f64>() / n as f64).ln();
        let mut sigma = par.sigma[g];
        m_step_class(&mut par.a[g], &mut sigma, r, s, e, steps);
        par.sigma[g] = sigma;
    }
}

fn random_start(x: &ItemResponseMatrix, g: usize, rng: &mut ChaCha8Rng) -> Params {
    let (n, p) = (x.n(), x.p());
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..g)).collect();
    let mut a = vec![vec![0.0; p]; g];
    let mut sizes = vec![0usize; g];
    for &l in &labels {
        sizes[l] += 1;
    }
    for (c, ac) in a.iter_mut().enumerate() {
        for (i, v) in ac.iter_mut().enumerate() {
            let hits = (0..n).filter(|&k| labels[k] == c && x.get(k, i) == 1).count();
            let pr = (hits as f64 + 0.5) / (sizes[c] as f64 + 1.0);
            *v = (pr / (1.0 - pr)).ln();
        }
    }
    Params {
        log_pi: sizes.iter().map(|&s| ((s as f64 + 0.5) / (n as f64 + 0.5 * g as f64)).ln()).collect(),
        a,
        sigma: vec![1.0; g],
    }
}

struct RunResult {
    params: Params,
    trace: Vec<f64>,
    converged: bool,
    degenerate: bool,
}

fn run_em(x: &ItemResponseMatrix, start: Params, cfg: &EmConfig, e: &[f64], lw: &[f64]) -> Result<RunResult> {
    let (n, p) = (x.n(), x.p());
    let floor = 1.0 / (10.0 * n as f64);
    let mut par = start;
    let mut trace = Vec::new();
    let mut converged = false;
    for _ in 0..cfg.max_iter {
        let est = e_step(x, &par, e, lw);
        if !est.loglik.is_finite() {
            return Err(Error::Numerical("mixture log-likelihood is not finite".into()));
        }
        if let Some(&prev) = trace.last() {
            let prev: f64 = prev;
            let tol = 1e-10 * prev.abs().max(1.0);
            if est.loglik < prev - tol {
                return Err(Error::Numerical(format!(
                    "EM log-likelihood decreased from {prev} to {}",
                    est.loglik
                )));
            }
            trace.push(est.loglik);
            if ((est.loglik - prev) / prev.abs().max(f64::MIN_POSITIVE)).abs() < cfg.rel_tol {
                converged = true;
                break;
            }
        } else {
            trace.push(est.loglik);
        }
        m_step(&mut par, &est, e, p, n, cfg.newton_steps);
        if par.log_pi.iter().any(|lp| lp.exp() < floor) {
            return Ok(RunResult {
                params: par,
                trace,
                converged: false,
                degenerate: true,
            });
        }
    }
    Ok(RunResult {
        params: par,
        trace,
        converged,
        degenerate: false,
    })
}

/// Multi-start EM; returns the start with the highest final log-likelihood
/// (earliest start on ties). A start whose class weight falls below
/// `1 / (10 n)` is replaced by a fresh random start.
pub fn em_fit(x: &ItemResponseMatrix, g: usize, cfg: &EmConfig, seed: u64) -> Result<MixtureRaschModel> {
    if g == 0 {
        return Err(Error::Config("mixture needs at least one class".into()));
    }
    if cfg.starts == 0 || cfg.max_iter == 0 || cfg.quadrature_nodes == 0 {
        return Err(Error::Config("EM starts, iterations and quadrature nodes must be positive".into()));
    }
    let (e, lw) = normal_rule(cfg.quadrature_nodes);
    let max_attempts = 10;
    let runs: Vec<(RunResult, usize)> = (0..cfg.starts)
        .into_par_iter()
        .map(|s| -> Result<(RunResult, usize)> {
            let mut restarts = 0;
            loop {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(((s as u64) << 16) | restarts as u64);
                let run = run_em(x, random_start(x, g, &mut rng), cfg, &e, &lw)?;
                if !run.degenerate || restarts + 1 >= max_attempts {
                    return Ok((run, restarts));
                }
                log::info!("mixture start {s}: class weight collapsed, restarting");
                restarts += 1;
            }
        })
        .collect::<Result<_>>()?;
    let degenerate_restarts = runs.iter().map(|r| r.1).sum();
    let mut best: Option<&RunResult> = None;
    for (run, _) in &runs {
        if run.degenerate {
            continue;
        }
        let ll = *run.trace.last().unwrap();
        if best.is_none_or(|b| ll > *b.trace.last().unwrap()) {
            best = Some(run);
        }
    }
    let best = best.ok_or_else(|| {
        Error::Convergence(format!("every mixture start collapsed to fewer than {g} classes"))
    })?;
    let par = &best.params;
    let (mu, beta) = par
        .a
        .iter()
        .map(|a| {
            let m = a.iter().sum::<f64>() / a.len() as f64;
            (m, a.iter().map(|v| v - m).collect::<Vec<f64>>())
        })
        .unzip();
    let mut weights: Vec<f64> = par.log_pi.iter().map(|v| v.exp()).collect();
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    Ok(MixtureRaschModel {
        g,
        weights,
        beta,
        mu,
        sigma: par.sigma.clone(),
        quadrature_nodes: cfg.quadrature_nodes,
        log_likelihood: *best.trace.last().unwrap(),
        iterations: best.trace.len(),
        converged: best.converged,
        trace: best.trace.clone(),
        degenerate_restarts,
    })
}

impl MixtureRaschModel {
    fn params(&self) -> Params {
        Params {
            log_pi: self.weights.iter().map(|w| w.ln()).collect(),
            a: self
                .beta
                .iter()
                .zip(&self.mu)
                .map(|(b, m)| b.iter().map(|v| v + m).collect())
                .collect(),
            sigma: self.sigma.clone(),
        }
    }

    /// Marginal log-likelihood of `x` under the fitted parameters.
    pub fn log_likelihood_of(&self, x: &ItemResponseMatrix) -> f64 {
        let (e, lw) = normal_rule(self.quadrature_nodes);
        e_step(x, &self.params(), &e, &lw).loglik
    }

    /// Marginal probability of one response pattern.
    pub fn pattern_probability(&self, pattern: &[u8]) -> f64 {
        let (e, lw) = normal_rule(self.quadrature_nodes);
        let mut lj = vec![0.0; self.g * e.len()];
        pattern_log_joint(pattern, &self.params(), &e, &lw, &mut lj);
        log_sum_exp(&lj).exp()
    }

    /// Posterior class probabilities per respondent.
    pub fn class_posteriors(&self, x: &ItemResponseMatrix) -> Vec<Vec<f64>> {
        let (e, lw) = normal_rule(self.quadrature_nodes);
        let par = self.params();
        let nq = e.len();
        let mut lj = vec![0.0; self.g * nq];
        (0..x.n())
            .map(|k| {
                pattern_log_joint(x.row(k), &par, &e, &lw, &mut lj);
                let per: Vec<f64> = (0..self.g).map(|g| log_sum_exp(&lj[g * nq..(g + 1) * nq])).collect();
                let lse = log_sum_exp(&per);
                per.iter().map(|v| (v - lse).exp()).collect()
            })
            .collect()
    }

    /// The same model with classes relabeled so that new class `c` is old
    /// class `order[c]`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        let mut out = self.clone();
        out.weights = order.iter().map(|&c| self.weights[c]).collect();
        out.beta = order.iter().map(|&c| self.beta[c].clone()).collect();
        out.mu = order.iter().map(|&c| self.mu[c]).collect();
        out.sigma = order.iter().map(|&c| self.sigma[c]).collect();
        out
    }
}

/// Maximum a posteriori class per respondent; lowest index on ties.
pub fn classify_map(model: &MixtureRaschModel, x: &ItemResponseMatrix) -> ClusterAssignment {
    let labels = model
        .class_posteriors(x)
        .iter()
        .map(|row| {
            let mut best = 0;
            for (c, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect();
    ClusterAssignment {
        labels,
        g: model.g,
        explained_variance: f64::NAN,
        k_neighbors: 0,
    }
}

pub fn write_params_json(path: &Path, model: &MixtureRaschModel) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(f), model)?;
    Ok(())
}

pub fn write_classes_csv(
    path: &Path,
    labels: &[String],
    assignment: &ClusterAssignment,
    posteriors: &[Vec<f64>],
) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let g = posteriors.first().map_or(0, |r| r.len());
    let mut header = vec!["id".to_string(), "class".to_string()];
    header.extend((1..=g).map(|c| format!("p_class{c}")));
    w.write_record(&header)?;
    for ((id, l), post) in labels.iter().zip(&assignment.labels).zip(posteriors) {
        let mut row = vec![id.clone(), (l + 1).to_string()];
        row.extend(post.iter().map(|v| format!("{v}")));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(format!("writing {}", path.display()), e))
}
