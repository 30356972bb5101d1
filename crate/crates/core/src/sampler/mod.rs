//! Metropolis-within-Gibbs sampler for the joint model.
//!
//! One sweep updates, in order: every `z_k` (random order, Gaussian random
//! walk), `sigma_z^2` (exact inverse-gamma draw), every `beta_i` and every
//! `theta_k` (Gaussian random walks). Proposals are symmetric, so acceptance
//! uses posterior ratios only. Jump sizes adapt during burn-in and are frozen
//! afterwards.
//!
//! The sweep keeps pairwise distances, item positions and the per-pair
//! softplus sums cached. Moving `z_k` changes `n - 1` person distances and
//! only the item positions of items `k` answered correctly, so a `z` update
//! costs `O(n + s_k p)` evaluations of the cached sums instead of a full
//! likelihood pass.

pub mod io;
pub mod ledger;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{degree_profile, ItemResponseMatrix};
use crate::error::{Error, Result};
use crate::likelihood::softplus::{softplus, ChebyshevSoftplusSum};
use crate::likelihood::{
    pair_distance, sigma_z_posterior_params, LatentConfiguration, Model, ModelState,
    PairConvention, PriorConfig,
};
pub use ledger::{adapt_jump, adapt_proposals, AcceptanceLedger, BlockStats, Phase, WindowRecord};

/// Which blocks a sweep updates. Frozen blocks keep their current values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockMask {
    pub z: bool,
    pub sigma: bool,
    pub beta: bool,
    pub theta: bool,
}

impl Default for BlockMask {
    fn default() -> Self {
        Self {
            z: true,
            sigma: true,
            beta: true,
            theta: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub n_iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub jump_beta: f64,
    pub jump_theta: f64,
    /// Initial jump SDs for `z`, one per total-score quantile bucket, from
    /// the lowest-scoring bucket to the highest.
    pub jump_z_schedule: Vec<f64>,
    pub target_accept_lo: f64,
    pub target_accept_hi: f64,
    pub adapt_window: usize,
    pub seed: u64,
    pub dim: usize,
    pub convention: PairConvention,
    pub update: BlockMask,
    /// Evaluate `z` updates with direct softplus sums instead of the
    /// Chebyshev surrogate.
    pub exact_likelihood: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            n_iterations: 55_000,
            burn_in: 5_000,
            thin: 10,
            jump_beta: 0.1,
            jump_theta: 3.0,
            jump_z_schedule: vec![1.6, 0.8, 0.4, 0.2],
            target_accept_lo: 0.20,
            target_accept_hi: 0.40,
            adapt_window: 500,
            seed: 0,
            dim: 2,
            convention: PairConvention::Unordered,
            update: BlockMask::default(),
            exact_likelihood: false,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.burn_in >= self.n_iterations {
            return bad("burn_in must be smaller than n_iterations");
        }
        if self.thin == 0 {
            return bad("thin must be at least 1");
        }
        if self.adapt_window == 0 {
            return bad("adapt_window must be at least 1");
        }
        if self.dim == 0 {
            return bad("latent dimension must be at least 1");
        }
        if self.jump_z_schedule.is_empty() {
            return bad("jump_z_schedule needs at least one bucket");
        }
        let sds = self
            .jump_z_schedule
            .iter()
            .chain([&self.jump_beta, &self.jump_theta]);
        if sds.clone().any(|v| !(v.is_finite() && *v > 0.0)) {
            return bad("jump SDs must be positive");
        }
        let (lo, hi) = (self.target_accept_lo, self.target_accept_hi);
        if !(0.0 < lo && lo < hi && hi < 1.0) {
            return bad("target acceptance band must satisfy 0 < lo < hi < 1");
        }
        Ok(())
    }

    pub fn retained_samples(&self) -> usize {
        (self.n_iterations - self.burn_in) / self.thin
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Starting point: `z_k ~ N(0, 0.25 I)`, `beta = theta = 0`, `sigma_z^2 = 1`.
pub fn initialize_state(x: &ItemResponseMatrix, dim: usize, seed: u64) -> ModelState {
    let mut rng = stream_rng(seed, 0);
    let z: Vec<f64> = (0..x.n() * dim)
        .map(|_| 0.5 * rng.sample::<f64, _>(StandardNormal))
        .collect();
    ModelState {
        beta: vec![0.0; x.p()],
        theta: vec![0.0; x.n()],
        sigma_z_sq: 1.0,
        z: LatentConfiguration::new(x.n(), dim, z).expect("finite draws"),
    }
}

/// Bucket of each respondent by total score quantile; bucket 0 holds the
/// lowest scores.
pub fn score_buckets(scores: &[usize], buckets: usize) -> Vec<usize> {
    let mut sorted = scores.to_vec();
    sorted.sort_unstable();
    let n = sorted.len();
    let cuts: Vec<usize> = (1..buckets)
        .map(|j| sorted[((j * n).div_ceil(buckets)).saturating_sub(1).min(n - 1)])
        .collect();
    scores
        .iter()
        .map(|s| cuts.iter().filter(|&&c| *s > c).count())
        .collect()
}

/// `sum_m softplus(shift - d_m)`, with `q_m = exp(-d_m)` precomputed.
fn shifted_softplus_sum(shift: f64, d: &[f64], q: &[f64]) -> f64 {
    const CHUNK: usize = 4096;
    if shift.abs() < 600.0 {
        let e = shift.exp();
        let parts: Vec<f64> = q
            .par_chunks(CHUNK)
            .map(|c| c.iter().map(|&v| (e * v).ln_1p()).sum::<f64>())
            .collect();
        parts.iter().sum()
    } else {
        let parts: Vec<f64> = d
            .par_chunks(CHUNK)
            .map(|c| c.iter().map(|&v| softplus(shift - v)).sum::<f64>())
            .collect();
        parts.iter().sum()
    }
}

#[derive(Debug, Clone)]
struct Cache {
    /// person distances, `n x n`
    d_person: Vec<f64>,
    /// `T(d_kl) = sum_i softplus(beta_i - d_kl)`
    t_person: Vec<f64>,
    /// item positions, `p x dim`
    w: Vec<f64>,
    d_item: Vec<f64>,
    /// `S(D_ij) = sum_k softplus(theta_k - D_ij)`
    s_item: Vec<f64>,
    cheb_t: ChebyshevSoftplusSum,
    cheb_s: ChebyshevSoftplusSum,
    prop_d: Vec<f64>,
    prop_t: Vec<f64>,
    prop_w: Vec<f64>,
    moved: Vec<bool>,
    changed: Vec<(usize, usize, f64, f64)>,
}

/// A running chain: state, caches, proposal scales and RNG.
pub struct Sampler<'a> {
    model: Model<'a>,
    config: SamplerConfig,
    state: ModelState,
    ledger: AcceptanceLedger,
    rng: ChaCha8Rng,
    m_person: Vec<u32>,
    n_item: Vec<u32>,
    person_pairs: Vec<f64>,
    item_pairs: Vec<f64>,
    bucket_of: Vec<usize>,
    cache: Cache,
    iteration: usize,
}

impl<'a> Sampler<'a> {
    pub fn new(x: &'a ItemResponseMatrix, prior: PriorConfig, config: SamplerConfig) -> Result<Self> {
        let state = initialize_state(x, config.dim, config.seed);
        Self::with_state(x, prior, config, state)
    }

    pub fn with_state(
        x: &'a ItemResponseMatrix,
        prior: PriorConfig,
        config: SamplerConfig,
        state: ModelState,
    ) -> Result<Self> {
        config.validate()?;
        let model = Model::new(x, prior)?.with_convention(config.convention);
        state.validate(x)?;
        if state.z.dim() != config.dim {
            return Err(Error::Dimension(format!(
                "state is {}-D but the sampler is configured for {}-D",
                state.z.dim(),
                config.dim
            )));
        }
        let (n, p, dim) = (x.n(), x.p(), config.dim);
        let profile = degree_profile(x);
        let bucket_of = score_buckets(&profile.person_scores, config.jump_z_schedule.len());
        let mut blocks: Vec<(String, f64)> = config
            .jump_z_schedule
            .iter()
            .enumerate()
            .map(|(b, &sd)| (format!("z_q{}", b + 1), sd))
            .collect();
        blocks.push(("beta".into(), config.jump_beta));
        blocks.push(("theta".into(), config.jump_theta));
        let choose2 = |m: usize| (m * m.saturating_sub(1) / 2) as f64;
        let person_pairs = profile.item_totals.iter().map(|&c| choose2(c)).collect();
        let item_pairs = profile.person_scores.iter().map(|&s| choose2(s)).collect();
        let cache = Cache {
            d_person: vec![0.0; n * n],
            t_person: vec![0.0; n * n],
            w: vec![0.0; p * dim],
            d_item: vec![0.0; p * p],
            s_item: vec![0.0; p * p],
            cheb_t: ChebyshevSoftplusSum::new(Vec::new()),
            cheb_s: ChebyshevSoftplusSum::new(Vec::new()),
            prop_d: vec![0.0; n],
            prop_t: vec![0.0; n],
            prop_w: vec![0.0; p * dim],
            moved: vec![false; p],
            changed: Vec::with_capacity(p * p),
        };
        let rng = stream_rng(config.seed, 1);
        let mut s = Self {
            m_person: x.person_cooccurrence(),
            n_item: x.item_cooccurrence(),
            model,
            config,
            state,
            ledger: AcceptanceLedger::new(blocks),
            rng,
            person_pairs,
            item_pairs,
            bucket_of,
            cache,
            iteration: 0,
        };
        s.refresh_person_cache();
        s.refresh_item_cache();
        Ok(s)
    }

    pub fn state(&self) -> &ModelState {
        &self.state
    }

    pub fn model(&self) -> &Model<'a> {
        &self.model
    }

    pub fn config(&self) -> &SamplerConfig {
        &self.config
    }

    pub fn ledger(&self) -> &AcceptanceLedger {
        &self.ledger
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn bucket_of(&self) -> &[usize] {
        &self.bucket_of
    }

    fn beta_block(&self) -> usize {
        self.config.jump_z_schedule.len()
    }

    fn theta_block(&self) -> usize {
        self.config.jump_z_schedule.len() + 1
    }

    /// Current jump SDs: one per `z` bucket, then `beta`, then `theta`.
    pub fn jump_sds(&self) -> Vec<f64> {
        self.ledger.blocks.iter().map(|b| b.jump_sd).collect()
    }

    /// Overrides every jump SD (same layout as [`Sampler::jump_sds`]).
    pub fn set_jump_sds(&mut self, sds: &[f64]) {
        for (b, &sd) in self.ledger.blocks.iter_mut().zip(sds) {
            b.jump_sd = sd;
        }
    }

    #[inline]
    fn t_eval(&mut self, d: f64) -> f64 {
        if self.config.exact_likelihood {
            self.cache.cheb_t.exact().eval(d)
        } else {
            self.cache.cheb_t.eval(d)
        }
    }

    #[inline]
    fn s_eval(&mut self, d: f64) -> f64 {
        if self.config.exact_likelihood {
            self.cache.cheb_s.exact().eval(d)
        } else {
            self.cache.cheb_s.eval(d)
        }
    }

    fn refresh_person_cache(&mut self) {
        let n = self.model.x.n();
        self.cache.d_person = self.state.z.distance_matrix();
        self.cache.cheb_t.reset(&self.state.beta);
        for k in 0..n {
            for l in (k + 1)..n {
                let t = self.t_eval(self.cache.d_person[k * n + l]);
                self.cache.t_person[k * n + l] = t;
                self.cache.t_person[l * n + k] = t;
            }
        }
    }

    fn refresh_item_cache(&mut self) {
        let p = self.model.x.p();
        let w = self.model.item_positions(&self.state.z).expect("validated at construction");
        self.cache.d_item = w.distance_matrix();
        self.cache.w = w.w;
        self.cache.cheb_s.reset(&self.state.theta);
        for i in 0..p {
            for j in (i + 1)..p {
                let s = self.s_eval(self.cache.d_item[i * p + j]);
                self.cache.s_item[i * p + j] = s;
                self.cache.s_item[j * p + i] = s;
            }
        }
    }

    /// Log-posterior difference for moving `z_k` to `zp`; fills the proposal
    /// scratch buffers consumed by [`Sampler::accept_z`].
    fn z_delta(&mut self, k: usize, zp: &[f64]) -> f64 {
        let x = self.model.x;
        let (n, p, dim) = (x.n(), x.p(), self.config.dim);
        let zk: Vec<f64> = self.state.z.point(k).to_vec();

        let mut person = 0.0;
        for l in 0..n {
            if l == k {
                continue;
            }
            let d_new = pair_distance(zp, self.state.z.point(l));
            let t_new = self.t_eval(d_new);
            let kl = k * n + l;
            person += -f64::from(self.m_person[kl]) * (d_new - self.cache.d_person[kl])
                - t_new
                + self.cache.t_person[kl];
            self.cache.prop_d[l] = d_new;
            self.cache.prop_t[l] = t_new;
        }

        let moved_items = self.model.person_items(k).to_vec();
        let totals = self.model.item_totals();
        for &i in &moved_items {
            self.cache.moved[i] = true;
            let c = totals[i] as f64;
            for d in 0..dim {
                self.cache.prop_w[i * dim + d] = self.cache.w[i * dim + d] + (zp[d] - zk[d]) / c;
            }
        }
        self.cache.changed.clear();
        let mut item = 0.0;
        for &i in &moved_items {
            for j in 0..p {
                if j == i || (self.cache.moved[j] && j < i) {
                    continue;
                }
                let wi = &self.cache.prop_w[i * dim..(i + 1) * dim];
                let wj = if self.cache.moved[j] {
                    &self.cache.prop_w[j * dim..(j + 1) * dim]
                } else {
                    &self.cache.w[j * dim..(j + 1) * dim]
                };
                let d_new = pair_distance(wi, wj);
                let s_new = self.s_eval(d_new);
                let ij = i * p + j;
                item += -f64::from(self.n_item[ij]) * (d_new - self.cache.d_item[ij]) - s_new
                    + self.cache.s_item[ij];
                self.cache.changed.push((i, j, d_new, s_new));
            }
        }
        for &i in &moved_items {
            self.cache.moved[i] = false;
        }

        let ss_old: f64 = zk.iter().map(|v| v * v).sum();
        let ss_new: f64 = zp.iter().map(|v| v * v).sum();
        let prior = (ss_old - ss_new) / (2.0 * self.state.sigma_z_sq);
        prior + self.model.convention.weight() * (person + item)
    }

    fn accept_z(&mut self, k: usize, zp: &[f64]) {
        let x = self.model.x;
        let (n, p, dim) = (x.n(), x.p(), self.config.dim);
        self.state.z.point_mut(k).copy_from_slice(zp);
        for l in 0..n {
            if l == k {
                continue;
            }
            let (d, t) = (self.cache.prop_d[l], self.cache.prop_t[l]);
            self.cache.d_person[k * n + l] = d;
            self.cache.d_person[l * n + k] = d;
            self.cache.t_person[k * n + l] = t;
            self.cache.t_person[l * n + k] = t;
        }
        for &i in self.model.person_items(k) {
            self.cache.w[i * dim..(i + 1) * dim]
                .copy_from_slice(&self.cache.prop_w[i * dim..(i + 1) * dim]);
        }
        for &(i, j, d, s) in &self.cache.changed {
            self.cache.d_item[i * p + j] = d;
            self.cache.d_item[j * p + i] = d;
            self.cache.s_item[i * p + j] = s;
            self.cache.s_item[j * p + i] = s;
        }
    }

    fn update_z(&mut self) {
        self.refresh_person_cache();
        self.refresh_item_cache();
        let n = self.model.x.n();
        let dim = self.config.dim;
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut self.rng);
        let mut zp = vec![0.0; dim];
        for k in order {
            let block = self.bucket_of[k];
            let sd = self.ledger.blocks[block].jump_sd;
            for (d, v) in zp.iter_mut().enumerate() {
                *v = self.state.z.point(k)[d] + sd * self.rng.sample::<f64, _>(StandardNormal);
            }
            let delta = self.z_delta(k, &zp);
            let u: f64 = self.rng.random();
            if !delta.is_finite() {
                self.ledger.record_nonfinite(block);
                continue;
            }
            let accept = u.ln() < delta;
            if accept {
                self.accept_z(k, &zp);
            }
            self.ledger.record(block, accept);
        }
    }

    fn update_sigma(&mut self) {
        let (shape, scale) = sigma_z_posterior_params(&self.state.z, &self.model.prior);
        let g = Gamma::new(shape, 1.0).expect("positive shape");
        let draw: f64 = g.sample(&mut self.rng);
        self.state.sigma_z_sq = scale / draw;
    }

    /// Log-posterior difference for `beta_i -> bp` given `exp(-d)` of every
    /// person pair.
    fn beta_delta(&self, i: usize, bp: f64, d: &[f64], q: &[f64]) -> f64 {
        let b = self.state.beta[i];
        let lin = self.person_pairs[i] * (bp - b);
        let ll = lin - shifted_softplus_sum(bp, d, q) + shifted_softplus_sum(b, d, q);
        let s2 = self.model.prior.sigma_beta_sq;
        (b * b - bp * bp) / (2.0 * s2) + self.model.convention.weight() * ll
    }

    fn pair_lists(dist: &[f64], m: usize) -> (Vec<f64>, Vec<f64>) {
        let mut d = Vec::with_capacity(m * m.saturating_sub(1) / 2);
        for a in 0..m {
            d.extend_from_slice(&dist[a * m + a + 1..(a + 1) * m]);
        }
        let q = d.iter().map(|v| (-v).exp()).collect();
        (d, q)
    }

    fn update_beta(&mut self) {
        let n = self.model.x.n();
        self.cache.d_person = self.state.z.distance_matrix();
        let (d, q) = Self::pair_lists(&self.cache.d_person, n);
        let block = self.beta_block();
        for i in 0..self.model.x.p() {
            let sd = self.ledger.blocks[block].jump_sd;
            let bp = self.state.beta[i] + sd * self.rng.sample::<f64, _>(StandardNormal);
            let delta = self.beta_delta(i, bp, &d, &q);
            let u: f64 = self.rng.random();
            if !delta.is_finite() {
                self.ledger.record_nonfinite(block);
                continue;
            }
            let accept = u.ln() < delta;
            if accept {
                self.state.beta[i] = bp;
            }
            self.ledger.record(block, accept);
        }
    }

    fn theta_delta(&self, k: usize, tp: f64, d: &[f64], q: &[f64]) -> f64 {
        let t = self.state.theta[k];
        let lin = self.item_pairs[k] * (tp - t);
        let ll = lin - shifted_softplus_sum(tp, d, q) + shifted_softplus_sum(t, d, q);
        let s2 = self.model.prior.sigma_theta_sq;
        (t * t - tp * tp) / (2.0 * s2) + self.model.convention.weight() * ll
    }

    fn update_theta(&mut self) {
        let p = self.model.x.p();
        let w = self.model.item_positions(&self.state.z).expect("validated");
        let (d, q) = Self::pair_lists(&w.distance_matrix(), p);
        let block = self.theta_block();
        for k in 0..self.model.x.n() {
            let sd = self.ledger.blocks[block].jump_sd;
            let tp = self.state.theta[k] + sd * self.rng.sample::<f64, _>(StandardNormal);
            let delta = self.theta_delta(k, tp, &d, &q);
            let u: f64 = self.rng.random();
            if !delta.is_finite() {
                self.ledger.record_nonfinite(block);
                continue;
            }
            let accept = u.ln() < delta;
            if accept {
                self.state.theta[k] = tp;
            }
            self.ledger.record(block, accept);
        }
    }

    /// One full iteration over the unmasked blocks, without any window
    /// bookkeeping or adaptation.
    pub fn sweep(&mut self) {
        let mask = self.config.update;
        if mask.z {
            self.update_z();
        }
        if mask.sigma {
            self.update_sigma();
        }
        if mask.beta {
            self.update_beta();
        }
        if mask.theta {
            self.update_theta();
        }
        self.iteration += 1;
    }

    /// A sweep followed by window bookkeeping: windows close every
    /// `adapt_window` iterations and at the end of burn-in; jump SDs adapt
    /// only when a burn-in window closes.
    pub fn step(&mut self) {
        self.sweep();
        let t = self.iteration;
        let cfg = &self.config;
        let in_burn_in = t <= cfg.burn_in;
        let boundary = t % cfg.adapt_window == 0 || t == cfg.burn_in;
        if boundary {
            let phase = if in_burn_in { Phase::BurnIn } else { Phase::Sampling };
            if in_burn_in {
                adapt_proposals(&mut self.ledger, cfg.target_accept_lo, cfg.target_accept_hi);
            }
            self.ledger.close_window(t, phase);
        }
    }

    /// Closes a partially filled trailing window.
    fn finish(&mut self) {
        let open = self.ledger.blocks.iter().any(|b| b.window_proposals > 0);
        if open {
            let phase = if self.iteration <= self.config.burn_in {
                Phase::BurnIn
            } else {
                Phase::Sampling
            };
            self.ledger.close_window(self.iteration, phase);
        }
    }
}

/// One retained draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainSample {
    pub iteration: usize,
    pub log_posterior: f64,
    pub state: ModelState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainOutput {
    pub config: SamplerConfig,
    pub prior: PriorConfig,
    pub n: usize,
    pub p: usize,
    pub samples: Vec<ChainSample>,
    pub ledger: AcceptanceLedger,
}

impl ChainOutput {
    pub fn dim(&self) -> usize {
        self.config.dim
    }

    pub fn log_posteriors(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.log_posterior).collect()
    }
}

/// Runs a full chain: burn-in with adaptation, then frozen proposals with a
/// thinned record of the state and its log posterior.
pub fn run_chain(
    x: &ItemResponseMatrix,
    prior: PriorConfig,
    config: &SamplerConfig,
) -> Result<ChainOutput> {
    let mut sampler = Sampler::new(x, prior, config.clone())?;
    run_sampler(&mut sampler)
}

/// Drives an already constructed sampler to `n_iterations`.
pub fn run_sampler(sampler: &mut Sampler<'_>) -> Result<ChainOutput> {
    let cfg = sampler.config.clone();
    let mut samples = Vec::with_capacity(cfg.retained_samples());
    while sampler.iteration < cfg.n_iterations {
        sampler.step();
        let t = sampler.iteration;
        if t > cfg.burn_in && (t - cfg.burn_in) % cfg.thin == 0 {
            let log_posterior = sampler
                .model
                .log_posterior(&sampler.state)
                .map_err(|e| e.context(format!("iteration {t}")))?;
            samples.push(ChainSample {
                iteration: t,
                log_posterior,
                state: sampler.state.clone(),
            });
        }
    }
    sampler.finish();
    Ok(ChainOutput {
        config: cfg,
        prior: sampler.model.prior,
        n: sampler.model.x.n(),
        p: sampler.model.x.p(),
        samples,
        ledger: sampler.ledger.clone(),
    })
}

/// One sweep from `state` with the jump SDs given in `config` (no
/// adaptation). The RNG drives every proposal and acceptance draw.
pub fn sweep<R: Rng>(
    state: &ModelState,
    x: &ItemResponseMatrix,
    prior: PriorConfig,
    config: &SamplerConfig,
    rng: &mut R,
) -> Result<ModelState> {
    let mut cfg = config.clone();
    cfg.seed = rng.random();
    let mut s = Sampler::with_state(x, prior, cfg, state.clone())?;
    s.sweep();
    Ok(s.state)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_instance(n: usize, p: usize, seed: u64) -> (ItemResponseMatrix, ModelState) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = loop {
            let v = (0..n * p).map(|_| rng.random_range(0..2u8)).collect();
            let x = ItemResponseMatrix::new(n, p, v).unwrap();
            if x.check_fittable().is_ok() {
                break x;
            }
        };
        let state = ModelState {
            beta: (0..p).map(|_| rng.random_range(-2.0..2.0)).collect(),
            theta: (0..n).map(|_| rng.random_range(-2.0..2.0)).collect(),
            sigma_z_sq: 1.3,
            z: LatentConfiguration::new(
                n,
                2,
                (0..2 * n).map(|_| rng.random_range(-2.0..2.0)).collect(),
            )
            .unwrap(),
        };
        (x, state)
    }

    #[test]
    fn config_defaults_and_validation() {
        let c = SamplerConfig::default();
        assert_eq!(c.retained_samples(), 5000);
        assert!(c.validate().is_ok());
        let c2 = SamplerConfig {
            n_iterations: 1100,
            burn_in: 100,
            thin: 10,
            ..c.clone()
        };
        assert_eq!(c2.retained_samples(), 100);
        for bad in [
            SamplerConfig { burn_in: 55_000, ..c.clone() },
            SamplerConfig { thin: 0, ..c.clone() },
            SamplerConfig { jump_beta: 0.0, ..c.clone() },
            SamplerConfig { target_accept_lo: 0.5, ..c.clone() },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn initialization_is_deterministic() {
        let (x, _) = random_instance(10, 4, 1);
        let a = initialize_state(&x, 2, 7);
        let b = initialize_state(&x, 2, 7);
        assert_eq!(a, b);
        assert!(a.beta.iter().all(|&v| v == 0.0));
        assert!(a.theta.iter().all(|&v| v == 0.0));
        assert_eq!(a.sigma_z_sq, 1.0);
        assert_ne!(a, initialize_state(&x, 2, 8));
    }

    #[test]
    fn initial_positions_are_centered() {
        // 5000 respondents x 2 coordinates = 10^4 draws with SD 0.5
        let x = ItemResponseMatrix::new(5000, 2, vec![1; 10_000]).unwrap();
        let s = initialize_state(&x, 2, 3);
        let v = s.z.as_slice();
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let se = 0.5 / (v.len() as f64).sqrt();
        assert!(mean.abs() < 3.0 * se, "mean {mean}");
    }

    #[test]
    fn buckets_split_by_score() {
        let scores = [0, 1, 2, 3, 4, 5, 6, 7];
        assert_eq!(score_buckets(&scores, 4), vec![0, 0, 1, 1, 2, 2, 3, 3]);
        assert_eq!(score_buckets(&[5, 5, 5], 4), vec![0, 0, 0]);
    }

    #[test]
    fn cached_deltas_match_exact_conditionals() {
        for (seed, exact) in [(1u64, false), (2, true), (3, false)] {
            let (x, state) = random_instance(12, 5, seed);
            let cfg = SamplerConfig {
                exact_likelihood: exact,
                ..SamplerConfig::default()
            };
            let mut s = Sampler::with_state(&x, PriorConfig::default(), cfg, state.clone()).unwrap();
            let m = s.model().clone();
            for k in 0..12 {
                let zp = [state.z.point(k)[0] + 0.3, state.z.point(k)[1] - 0.45];
                let got = s.z_delta(k, &zp);
                let want = m.logpost_z(k, &zp, &state).unwrap()
                    - m.logpost_z(k, state.z.point(k), &state).unwrap();
                assert!((got - want).abs() < 1e-9, "z {k}: {got} vs {want}");
            }
            let (d, q) = Sampler::pair_lists(&state.z.distance_matrix(), 12);
            for i in 0..5 {
                let bp = state.beta[i] - 0.8;
                let got = s.beta_delta(i, bp, &d, &q);
                let want = m.logpost_beta(i, bp, &state).unwrap()
                    - m.logpost_beta(i, state.beta[i], &state).unwrap();
                assert!((got - want).abs() < 1e-9, "beta {i}");
            }
            let w = m.item_positions(&state.z).unwrap();
            let (d, q) = Sampler::pair_lists(&w.distance_matrix(), 5);
            for k in 0..12 {
                let tp = state.theta[k] + 1.7;
                let got = s.theta_delta(k, tp, &d, &q);
                let want = m.logpost_theta(k, tp, &state).unwrap()
                    - m.logpost_theta(k, state.theta[k], &state).unwrap();
                assert!((got - want).abs() < 1e-9, "theta {k}");
            }
        }
    }

    #[test]
    fn caches_stay_consistent_through_sweeps() {
        let (x, state) = random_instance(15, 6, 4);
        let cfg = SamplerConfig {
            jump_z_schedule: vec![0.3],
            ..SamplerConfig::default()
        };
        let mut s = Sampler::with_state(&x, PriorConfig::default(), cfg, state).unwrap();
        for _ in 0..5 {
            s.sweep();
        }
        // the z step leaves caches describing the current state
        s.update_z();
        let d = s.state.z.distance_matrix();
        for (a, b) in d.iter().zip(&s.cache.d_person) {
            assert!((a - b).abs() < 1e-12);
        }
        let w = s.model.item_positions(&s.state.z).unwrap();
        for (a, b) in w.w.iter().zip(&s.cache.w) {
            assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in w.distance_matrix().iter().zip(&s.cache.d_item) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_width_proposals_leave_state_unchanged() {
        let (x, state) = random_instance(8, 4, 5);
        let cfg = SamplerConfig {
            jump_beta: 1e-12,
            jump_theta: 1e-12,
            jump_z_schedule: vec![1e-12],
            update: BlockMask {
                sigma: false,
                ..BlockMask::default()
            },
            ..SamplerConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let next = sweep(&state, &x, PriorConfig::default(), &cfg, &mut rng).unwrap();
        let close = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(u, v)| (u - v).abs() < 1e-10);
        assert!(close(&next.beta, &state.beta));
        assert!(close(&next.theta, &state.theta));
        assert!(close(next.z.as_slice(), state.z.as_slice()));
    }

    #[test]
    fn beta_draws_match_grid_conditional() {
        // two respondents, both correct on item 1; Z and theta frozen
        let x = ItemResponseMatrix::from_rows(&[[1u8, 0], [1, 1]]).unwrap();
        let state = ModelState {
            beta: vec![0.0, 0.0],
            theta: vec![0.5, -0.5],
            sigma_z_sq: 1.0,
            z: LatentConfiguration::new(2, 1, vec![-0.6, 0.9]).unwrap(),
        };
        let cfg = SamplerConfig {
            n_iterations: 205_000,
            burn_in: 5_000,
            thin: 1,
            adapt_window: 100,
            dim: 1,
            seed: 21,
            update: BlockMask {
                z: false,
                sigma: false,
                beta: true,
                theta: false,
            },
            ..SamplerConfig::default()
        };
        let mut s = Sampler::with_state(&x, PriorConfig::default(), cfg, state.clone()).unwrap();
        let chain = run_sampler(&mut s).unwrap();
        let draws: Vec<f64> = chain.samples.iter().map(|c| c.state.beta[0]).collect();
        assert_eq!(draws.len(), 200_000);

        let model = Model::new(&x, PriorConfig::default()).unwrap();
        let (lo, hi, m) = (-60.0, 60.0, 24_001);
        let h = (hi - lo) / (m - 1) as f64;
        let grid: Vec<f64> = (0..m).map(|i| lo + h * i as f64).collect();
        let lp: Vec<f64> = grid.iter().map(|&b| model.logpost_beta(0, b, &state).unwrap()).collect();
        let top = lp.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let dens: Vec<f64> = lp.iter().map(|v| (v - top).exp()).collect();
        let total: f64 = dens.iter().sum();

        // 50 equal-mass bins of the grid posterior
        let mut edges = Vec::new();
        let mut acc = 0.0;
        for (b, d) in grid.iter().zip(&dens) {
            acc += d / total;
            if acc >= (edges.len() + 1) as f64 / 50.0 && edges.len() < 49 {
                edges.push(*b);
            }
        }
        let mut exact = vec![0.0; 50];
        for (b, d) in grid.iter().zip(&dens) {
            exact[edges.partition_point(|e| e <= b)] += d / total;
        }
        let mut hist = vec![0.0; 50];
        for v in &draws {
            hist[edges.partition_point(|e| e <= v)] += 1.0 / draws.len() as f64;
        }
        let tv = 0.5 * exact.iter().zip(&hist).map(|(a, b)| (a - b).abs()).sum::<f64>();
        assert!(tv < 0.05, "total variation {tv}");
    }

    #[test]
    fn chain_shape_and_determinism() {
        let (x, _) = random_instance(10, 4, 6);
        let cfg = SamplerConfig {
            n_iterations: 1100,
            burn_in: 100,
            thin: 10,
            adapt_window: 50,
            seed: 42,
            ..SamplerConfig::default()
        };
        let a = run_chain(&x, PriorConfig::default(), &cfg).unwrap();
        assert_eq!(a.samples.len(), 100);
        assert_eq!(a.samples[0].iteration, 110);
        let b = run_chain(&x, PriorConfig::default(), &cfg).unwrap();
        assert_eq!(a, b);
        // frozen after burn-in
        let sampling: Vec<_> = a.ledger.windows(Phase::Sampling).collect();
        assert!(!sampling.is_empty());
        for blk in 0..a.ledger.blocks.len() {
            let sds: Vec<f64> = sampling.iter().filter(|w| w.block == blk).map(|w| w.jump_sd).collect();
            assert!(sds.windows(2).all(|p| p[0] == p[1]));
        }
        let m = Model::new(&x, PriorConfig::default()).unwrap();
        for s in &a.samples {
            let lp = m.log_posterior(&s.state).unwrap();
            assert!((lp - s.log_posterior).abs() < 1e-9);
        }
    }

    #[test]
    fn adaptation_reaches_band_on_normal_target() {
        // random-walk Metropolis on N(0, 1) with the burn-in rule applied
        // every 100 proposals
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut ledger = AcceptanceLedger::new([("x".to_string(), 50.0)]);
        let mut x = 0.0f64;
        let mut last_rate = 0.0;
        for _window in 0..20 {
            for _ in 0..100 {
                let sd = ledger.blocks[0].jump_sd;
                let xp = x + sd * rng.sample::<f64, _>(StandardNormal);
                let accept = rng.random::<f64>().ln() < 0.5 * (x * x - xp * xp);
                if accept {
                    x = xp;
                }
                ledger.record(0, accept);
            }
            last_rate = ledger.blocks[0].window_rate().unwrap();
            adapt_proposals(&mut ledger, 0.2, 0.4);
            ledger.close_window(0, Phase::BurnIn);
        }
        assert!((0.2..=0.4).contains(&last_rate) || {
            // one more window at the adapted scale
            let sd = ledger.blocks[0].jump_sd;
            let mut acc = 0;
            for _ in 0..2000 {
                let xp = x + sd * rng.sample::<f64, _>(StandardNormal);
                if rng.random::<f64>().ln() < 0.5 * (x * x - xp * xp) {
                    x = xp;
                    acc += 1;
                }
            }
            (0.15..=0.45).contains(&(acc as f64 / 2000.0))
        });
    }
}
