//! Model math: latent positions, the item-position mapping, the joint
//! log-likelihood of both network stacks and the conditional log-posteriors
//! used by the sampler.
//!
//! The person side contributes one Bernoulli term per item layer `i` and
//! respondent pair `(k, l)` with logit `beta_i - |z_k - z_l|`. The item side
//! contributes one term per person layer `k` and item pair `(i, j)` with logit
//! `theta_k - |w_i - w_j|`, where `w_i` is the mean position of the
//! respondents who answered item `i` correctly.

pub mod softplus;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::data::{degree_profile, ItemResponseMatrix};
use crate::error::{Error, Result};
use softplus::softplus;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Respondent positions `z_k`, stored row-major as an `n x dim` matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentConfiguration {
    n: usize,
    dim: usize,
    z: Vec<f64>,
}

impl LatentConfiguration {
    pub fn new(n: usize, dim: usize, z: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("latent dimension must be at least 1".into()));
        }
        if z.len() != n * dim {
            return Err(Error::Dimension(format!(
                "expected {} coordinates for {n} points in {dim}-D, got {}",
                n * dim,
                z.len()
            )));
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite latent coordinate".into()));
        }
        Ok(Self { n, dim, z })
    }

    pub fn zeros(n: usize, dim: usize) -> Self {
        Self {
            n,
            dim,
            z: vec![0.0; n * dim],
        }
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn point(&self, k: usize) -> &[f64] {
        &self.z[k * self.dim..(k + 1) * self.dim]
    }

    #[inline]
    pub fn point_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.z[k * self.dim..(k + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.z
    }

    /// Applies `z -> Q z + t` to every point; `q` is `dim x dim` row-major.
    pub fn transformed(&self, q: &[f64], t: &[f64]) -> Self {
        let d = self.dim;
        let mut out = self.clone();
        for k in 0..self.n {
            let src = self.point(k);
            let dst = out.point_mut(k);
            for r in 0..d {
                dst[r] = t[r] + (0..d).map(|c| q[r * d + c] * src[c]).sum::<f64>();
            }
        }
        out
    }

    pub fn sum_sq(&self) -> f64 {
        self.z.iter().map(|v| v * v).sum()
    }

    /// `n x n` row-major matrix of pairwise Euclidean distances.
    pub fn distance_matrix(&self) -> Vec<f64> {
        distance_matrix(&self.z, self.n, self.dim)
    }
}

/// Item positions `w_i = f_i(Z)`, row-major `p x dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct ItemPositions {
    pub p: usize,
    pub dim: usize,
    pub w: Vec<f64>,
}

impl ItemPositions {
    #[inline]
    pub fn point(&self, i: usize) -> &[f64] {
        &self.w[i * self.dim..(i + 1) * self.dim]
    }

    pub fn distance_matrix(&self) -> Vec<f64> {
        distance_matrix(&self.w, self.p, self.dim)
    }
}

fn distance_matrix(points: &[f64], m: usize, dim: usize) -> Vec<f64> {
    let mut d = vec![0.0; m * m];
    for a in 0..m {
        for b in (a + 1)..m {
            let v = pair_distance(&points[a * dim..(a + 1) * dim], &points[b * dim..(b + 1) * dim]);
            d[a * m + b] = v;
            d[b * m + a] = v;
        }
    }
    d
}

#[inline]
pub fn pair_distance(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Mean position of the respondents who answered each item correctly.
pub fn item_positions(z: &LatentConfiguration, x: &ItemResponseMatrix) -> Result<ItemPositions> {
    if z.n() != x.n() {
        return Err(Error::Dimension(format!(
            "{} latent points for {} respondents",
            z.n(),
            x.n()
        )));
    }
    let (p, dim) = (x.p(), z.dim());
    let mut w = vec![0.0; p * dim];
    let mut counts = vec![0usize; p];
    for k in 0..x.n() {
        let zk = z.point(k);
        for (i, &v) in x.row(k).iter().enumerate() {
            if v == 1 {
                counts[i] += 1;
                for d in 0..dim {
                    w[i * dim + d] += zk[d];
                }
            }
        }
    }
    for (i, &c) in counts.iter().enumerate() {
        if c == 0 {
            return Err(Error::DegenerateItem { item: i });
        }
        for d in 0..dim {
            w[i * dim + d] /= c as f64;
        }
    }
    Ok(ItemPositions { p, dim, w })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorConfig {
    pub sigma_beta_sq: f64,
    pub sigma_theta_sq: f64,
    pub a_sigma: f64,
    pub b_sigma: f64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            sigma_beta_sq: 100.0,
            sigma_theta_sq: 100.0,
            a_sigma: 0.01,
            b_sigma: 0.01,
        }
    }
}

impl PriorConfig {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.sigma_beta_sq,
            self.sigma_theta_sq,
            self.a_sigma,
            self.b_sigma,
        ];
        if all.iter().all(|v| v.is_finite() && *v > 0.0) {
            Ok(())
        } else {
            Err(Error::Config(
                "prior variances and inverse-gamma parameters must be positive".into(),
            ))
        }
    }
}

/// How network edges enter the likelihood. The undirected networks have one
/// term per unordered pair; `Ordered` counts `(k, l)` and `(l, k)` separately,
/// which doubles every likelihood term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairConvention {
    #[default]
    Unordered,
    Ordered,
}

impl PairConvention {
    #[inline]
    pub fn weight(self) -> f64 {
        match self {
            PairConvention::Unordered => 1.0,
            PairConvention::Ordered => 2.0,
        }
    }
}

/// One point in the parameter space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub beta: Vec<f64>,
    pub theta: Vec<f64>,
    pub sigma_z_sq: f64,
    pub z: LatentConfiguration,
}

impl ModelState {
    pub fn validate(&self, x: &ItemResponseMatrix) -> Result<()> {
        if self.beta.len() != x.p() || self.theta.len() != x.n() || self.z.n() != x.n() {
            return Err(Error::Dimension(format!(
                "state has {} betas, {} thetas and {} positions for a {}x{} matrix",
                self.beta.len(),
                self.theta.len(),
                self.z.n(),
                x.n(),
                x.p()
            )));
        }
        if !(self.sigma_z_sq > 0.0 && self.sigma_z_sq.is_finite()) {
            return Err(Error::Numerical(format!(
                "sigma_z^2 = {} is not positive",
                self.sigma_z_sq
            )));
        }
        if self.beta.iter().chain(&self.theta).any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite intercept".into()));
        }
        Ok(())
    }
}

pub fn log_normal_density(v: f64, var: f64) -> f64 {
    -0.5 * (LN_2PI + var.ln()) - v * v / (2.0 * var)
}

/// `log N(z | 0, sigma_sq I)` for one latent point.
pub fn log_z_prior(zk: &[f64], sigma_sq: f64) -> f64 {
    let ss: f64 = zk.iter().map(|v| v * v).sum();
    -0.5 * zk.len() as f64 * (LN_2PI + sigma_sq.ln()) - ss / (2.0 * sigma_sq)
}

pub fn log_inverse_gamma_density(s: f64, shape: f64, scale: f64) -> f64 {
    shape * scale.ln() - ln_gamma(shape) - (shape + 1.0) * s.ln() - scale / s
}

/// Shape and scale of the inverse-gamma full conditional of `sigma_z^2`.
pub fn sigma_z_posterior_params(z: &LatentConfiguration, prior: &PriorConfig) -> (f64, f64) {
    let shape = prior.a_sigma + 0.5 * (z.n() * z.dim()) as f64;
    let scale = prior.b_sigma + 0.5 * z.sum_sq();
    (shape, scale)
}

fn check_finite(v: f64, what: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Numerical(format!("{what} is not finite")))
    }
}

/// The model bound to one response matrix.
#[derive(Debug, Clone)]
pub struct Model<'a> {
    pub x: &'a ItemResponseMatrix,
    pub prior: PriorConfig,
    pub convention: PairConvention,
    item_totals: Vec<usize>,
    person_items: Vec<Vec<usize>>,
}

impl<'a> Model<'a> {
    pub fn new(x: &'a ItemResponseMatrix, prior: PriorConfig) -> Result<Self> {
        prior.validate()?;
        x.check_fittable()?;
        let item_totals = degree_profile(x).item_totals;
        let person_items = (0..x.n()).map(|k| x.correct_items(k)).collect();
        Ok(Self {
            x,
            prior,
            convention: PairConvention::Unordered,
            item_totals,
            person_items,
        })
    }

    pub fn with_convention(mut self, convention: PairConvention) -> Self {
        self.convention = convention;
        self
    }

    pub fn item_totals(&self) -> &[usize] {
        &self.item_totals
    }

    /// Items answered correctly by person `k`.
    pub fn person_items(&self, k: usize) -> &[usize] {
        &self.person_items[k]
    }

    pub fn item_positions(&self, z: &LatentConfiguration) -> Result<ItemPositions> {
        item_positions(z, self.x)
    }

    /// Person-side log-likelihood, summed over item layers and unordered pairs.
    fn person_side(&self, beta: &[f64], z: &LatentConfiguration) -> f64 {
        let x = self.x;
        let n = x.n();
        // one partial sum per row k, reduced in index order: the result does
        // not depend on the number of worker threads
        let rows: Vec<f64> = (0..n)
            .into_par_iter()
            .map(|k| {
                let rk = x.row(k);
                let zk = z.point(k);
                let mut acc = 0.0;
                for l in (k + 1)..n {
                    let rl = x.row(l);
                    let d = pair_distance(zk, z.point(l));
                    for (i, &b) in beta.iter().enumerate() {
                        let eta = b - d;
                        acc += f64::from(rk[i] & rl[i]) * eta - softplus(eta);
                    }
                }
                acc
            })
            .collect();
        rows.iter().sum()
    }

    /// Item-side log-likelihood over person layers and unordered item pairs.
    fn item_side(&self, theta: &[f64], w: &ItemPositions) -> f64 {
        let x = self.x;
        let p = x.p();
        let dw = w.distance_matrix();
        let rows: Vec<f64> = (0..x.n())
            .into_par_iter()
            .map(|k| {
                let rk = x.row(k);
                let t = theta[k];
                let mut acc = 0.0;
                for i in 0..p {
                    for j in (i + 1)..p {
                        let eta = t - dw[i * p + j];
                        acc += f64::from(rk[i] & rk[j]) * eta - softplus(eta);
                    }
                }
                acc
            })
            .collect();
        rows.iter().sum()
    }

    pub fn joint_log_likelihood(&self, state: &ModelState) -> Result<f64> {
        state.validate(self.x)?;
        let w = self.item_positions(&state.z)?;
        let ll = self.person_side(&state.beta, &state.z) + self.item_side(&state.theta, &w);
        check_finite(self.convention.weight() * ll, "joint log-likelihood")
    }

    /// Sum of every prior log-density at `state`.
    pub fn log_prior(&self, state: &ModelState) -> f64 {
        let pr = &self.prior;
        let b: f64 = state
            .beta
            .iter()
            .map(|&v| log_normal_density(v, pr.sigma_beta_sq))
            .sum();
        let t: f64 = state
            .theta
            .iter()
            .map(|&v| log_normal_density(v, pr.sigma_theta_sq))
            .sum();
        let z: f64 = (0..state.z.n())
            .map(|k| log_z_prior(state.z.point(k), state.sigma_z_sq))
            .sum();
        let s = log_inverse_gamma_density(state.sigma_z_sq, pr.a_sigma, pr.b_sigma);
        b + t + z + s
    }

    /// Full (unnormalized) log posterior: likelihood plus all priors.
    pub fn log_posterior(&self, state: &ModelState) -> Result<f64> {
        let ll = self.joint_log_likelihood(state)?;
        check_finite(ll + self.log_prior(state), "log posterior")
    }

    /// Conditional log-posterior of `beta_i` up to a constant.
    pub fn logpost_beta(&self, i: usize, beta_i: f64, state: &ModelState) -> Result<f64> {
        let x = self.x;
        let n = x.n();
        let mut acc = 0.0;
        for k in 0..n {
            let xk = x.get(k, i);
            let zk = state.z.point(k);
            for l in (k + 1)..n {
                let eta = beta_i - pair_distance(zk, state.z.point(l));
                acc += f64::from(xk & x.get(l, i)) * eta - softplus(eta);
            }
        }
        let v = log_normal_density(beta_i, self.prior.sigma_beta_sq) + self.convention.weight() * acc;
        check_finite(v, "beta conditional")
    }

    /// Conditional log-posterior of `theta_k` up to a constant.
    pub fn logpost_theta(&self, k: usize, theta_k: f64, state: &ModelState) -> Result<f64> {
        let w = self.item_positions(&state.z)?;
        let rk = self.x.row(k);
        let p = self.x.p();
        let mut acc = 0.0;
        for i in 0..p {
            for j in (i + 1)..p {
                let eta = theta_k - pair_distance(w.point(i), w.point(j));
                acc += f64::from(rk[i] & rk[j]) * eta - softplus(eta);
            }
        }
        let v =
            log_normal_density(theta_k, self.prior.sigma_theta_sq) + self.convention.weight() * acc;
        check_finite(v, "theta conditional")
    }

    /// Conditional log-posterior of `z_k` up to a constant: the prior, every
    /// person-side term touching `z_k` and every item-side term whose item
    /// positions depend on `z_k`.
    pub fn logpost_z(&self, k: usize, z_k: &[f64], state: &ModelState) -> Result<f64> {
        let x = self.x;
        let (n, p) = (x.n(), x.p());
        if z_k.len() != state.z.dim() {
            return Err(Error::Dimension("proposal dimension differs from Z".into()));
        }
        let mut z = state.z.clone();
        z.point_mut(k).copy_from_slice(z_k);

        let rk = x.row(k);
        let mut person = 0.0;
        for l in (0..n).filter(|&l| l != k) {
            let rl = x.row(l);
            let d = pair_distance(z_k, z.point(l));
            for (i, &b) in state.beta.iter().enumerate() {
                let eta = b - d;
                person += f64::from(rk[i] & rl[i]) * eta - softplus(eta);
            }
        }

        let w = self.item_positions(&z)?;
        let moved = &self.person_items[k];
        let mut item = 0.0;
        for i in 0..p {
            for j in (i + 1)..p {
                if !(moved.contains(&i) || moved.contains(&j)) {
                    continue;
                }
                let d = pair_distance(w.point(i), w.point(j));
                for m in 0..n {
                    let rm = x.row(m);
                    let eta = state.theta[m] - d;
                    item += f64::from(rm[i] & rm[j]) * eta - softplus(eta);
                }
            }
        }
        let v = log_z_prior(z_k, state.sigma_z_sq) + self.convention.weight() * (person + item);
        check_finite(v, "z conditional")
    }

    /// Conditional log-posterior of `sigma_z^2` up to a constant.
    pub fn logpost_sigma_z_sq(&self, sigma_z_sq: f64, state: &ModelState) -> Result<f64> {
        if !(sigma_z_sq > 0.0) {
            return Err(Error::Numerical("sigma_z^2 must be positive".into()));
        }
        let pr = &self.prior;
        let z: f64 = (0..state.z.n())
            .map(|k| log_z_prior(state.z.point(k), sigma_z_sq))
            .sum();
        check_finite(
            log_inverse_gamma_density(sigma_z_sq, pr.a_sigma, pr.b_sigma) + z,
            "sigma conditional",
        )
    }
}

/// Joint log-likelihood with default priors and the unordered convention.
pub fn joint_log_likelihood(state: &ModelState, x: &ItemResponseMatrix) -> Result<f64> {
    Model::new(x, PriorConfig::default())?.joint_log_likelihood(state)
}
