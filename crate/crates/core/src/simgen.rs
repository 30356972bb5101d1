//! Class-structured response generator with inside/outside-class noise and
//! surface local dependence, and the recovery study built on it.
//!
//! Generation has three steps. Each respondent's class marks some item groups
//! as intended-inside; step 1 keeps an intended-inside group inside with
//! probability `p11` and an intended-outside group outside with probability
//! `p21`. Step 2 draws responses with success probability `p12` in realized
//! inside groups and `p22` elsewhere. Step 3 copies, with probability `rho`,
//! the response to each group's anchor item onto every other item of the
//! group.

use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baseline::{classify_map, em_fit, EmConfig};
use crate::clustering::{
    choose_k_neighbors, confusion_matrix, default_k_candidates, ClusterAssignment, SpectralConfig,
};
use crate::data::ItemResponseMatrix;
use crate::error::{Error, Result};
use crate::likelihood::PriorConfig;
use crate::postprocess::{align_chain, posterior_distances};
use crate::sampler::{run_chain, SamplerConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimDesign {
    pub n_classes: usize,
    pub respondents_per_class: usize,
    /// Per-class sizes; overrides `respondents_per_class` when set.
    pub class_sizes: Option<Vec<usize>>,
    pub n_item_groups: usize,
    pub items_per_group: usize,
    /// Intended-inside item groups of each class (0-based).
    pub class_to_groups: Vec<Vec<usize>>,
    pub p11: f64,
    pub p12: f64,
    pub p21: f64,
    pub p22: f64,
    pub rho: f64,
    /// Position of the copy source within each item group.
    pub anchor: usize,
    pub seed: u64,
}

impl Default for SimDesign {
    fn default() -> Self {
        Self {
            n_classes: 3,
            respondents_per_class: 100,
            class_sizes: None,
            n_item_groups: 6,
            items_per_group: 4,
            class_to_groups: vec![vec![0, 1], vec![2, 3], vec![4, 5]],
            p11: 0.9,
            p12: 0.8,
            p21: 0.5,
            p22: 0.5,
            rho: 0.8,
            anchor: 0,
            seed: 0,
        }
    }
}

impl SimDesign {
    /// 418 respondents in three near-equal classes over 24 items.
    pub fn drv_shaped() -> Self {
        Self {
            class_sizes: Some(vec![140, 139, 139]),
            ..Self::default()
        }
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.class_sizes
            .clone()
            .unwrap_or_else(|| vec![self.respondents_per_class; self.n_classes])
    }

    pub fn n(&self) -> usize {
        self.sizes().iter().sum()
    }

    pub fn p(&self) -> usize {
        self.n_item_groups * self.items_per_group
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_classes == 0 || self.n_item_groups == 0 || self.items_per_group == 0 {
            return bad("classes, item groups and items per group must be positive".into());
        }
        if self.sizes().len() != self.n_classes {
            return bad("class_sizes must list one size per class".into());
        }
        if self.class_to_groups.len() != self.n_classes {
            return bad("class_to_groups must list one entry per class".into());
        }
        if self.class_to_groups.iter().flatten().any(|&g| g >= self.n_item_groups) {
            return bad("class_to_groups refers to a missing item group".into());
        }
        if self.anchor >= self.items_per_group {
            return bad("anchor must index an item within a group".into());
        }
        for (name, v) in [("p11", self.p11), ("p12", self.p12), ("p21", self.p21), ("p22", self.p22)] {
            if !(v > 0.0 && v <= 1.0) {
                return bad(format!("{name} must lie in (0, 1], got {v}"));
            }
        }
        if !(0.0..1.0).contains(&self.rho) {
            return bad(format!("rho must lie in [0, 1), got {}", self.rho));
        }
        if self.n() < 2 || self.p() < 2 {
            return bad("design must produce at least 2 respondents and 2 items".into());
        }
        Ok(())
    }

    /// True class of each respondent, classes in contiguous blocks.
    pub fn classes(&self) -> Vec<usize> {
        self.sizes()
            .iter()
            .enumerate()
            .flat_map(|(c, &s)| std::iter::repeat_n(c, s))
            .collect()
    }

    pub fn group_of(&self, item: usize) -> usize {
        item / self.items_per_group
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimDataset {
    pub x: ItemResponseMatrix,
    pub classes: Vec<usize>,
    /// Realized inside flags, row-major `n x n_item_groups`.
    pub inside: Vec<bool>,
    /// Whether each response was overwritten by its group anchor,
    /// row-major `n x p`.
    pub copied: Vec<bool>,
}

/// Step 1: realized inside/outside flag per (respondent, item group).
pub fn assign_groups<R: Rng>(design: &SimDesign, rng: &mut R) -> Vec<bool> {
    let groups = design.n_item_groups;
    let mut out = Vec::with_capacity(design.n() * groups);
    for c in design.classes() {
        for g in 0..groups {
            let intended = design.class_to_groups[c].contains(&g);
            let u: f64 = rng.random();
            out.push(if intended { u < design.p11 } else { u >= design.p21 });
        }
    }
    out
}

/// Step 2: Bernoulli responses from the realized flags.
pub fn generate_responses<R: Rng>(inside: &[bool], design: &SimDesign, rng: &mut R) -> Result<ItemResponseMatrix> {
    let (n, p, groups) = (design.n(), design.p(), design.n_item_groups);
    if inside.len() != n * groups {
        return Err(Error::Dimension("flag matrix does not match the design".into()));
    }
    let mut x = Vec::with_capacity(n * p);
    for k in 0..n {
        for i in 0..p {
            let pr = if inside[k * groups + design.group_of(i)] {
                design.p12
            } else {
                design.p22
            };
            x.push((rng.random::<f64>() < pr) as u8);
        }
    }
    ItemResponseMatrix::new(n, p, x)
}

/// Step 3: surface dependence by copying each group's anchor response.
pub fn inject_dependence<R: Rng>(
    raw: &ItemResponseMatrix,
    design: &SimDesign,
    rng: &mut R,
) -> Result<(ItemResponseMatrix, Vec<bool>)> {
    let (n, p) = (raw.n(), raw.p());
    if p != design.p() {
        return Err(Error::Dimension("response matrix does not match the design".into()));
    }
    let mut x = raw.as_slice().to_vec();
    let mut copied = vec![false; n * p];
    let ipg = design.items_per_group;
    for k in 0..n {
        for g in 0..design.n_item_groups {
            let anchor = g * ipg + design.anchor;
            for j in g * ipg..(g + 1) * ipg {
                if j == anchor {
                    continue;
                }
                if rng.random::<f64>() < design.rho {
                    x[k * p + j] = x[k * p + anchor];
                    copied[k * p + j] = true;
                }
            }
        }
    }
    let mut out = ItemResponseMatrix::new(n, p, x)?;
    out.row_ids = raw.row_ids.clone();
    out.col_ids = raw.col_ids.clone();
    Ok((out, copied))
}

/// Runs all three steps from `design.seed`.
pub fn simulate(design: &SimDesign) -> Result<SimDataset> {
    design.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(design.seed);
    let inside = assign_groups(design, &mut rng);
    let raw = generate_responses(&inside, design, &mut rng)?;
    let (x, copied) = inject_dependence(&raw, design, &mut rng)?;
    Ok(SimDataset {
        x,
        classes: design.classes(),
        inside,
        copied,
    })
}

pub fn write_truth_csv(path: &Path, data: &SimDataset, design: &SimDesign) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["id".to_string(), "class".to_string()];
    header.extend((1..=design.n_item_groups).map(|g| format!("inside_group{g}")));
    w.write_record(&header)?;
    let groups = design.n_item_groups;
    for (k, c) in data.classes.iter().enumerate() {
        let mut row = vec![format!("person{}", k + 1), (c + 1).to_string()];
        row.extend((0..groups).map(|g| (data.inside[k * groups + g] as u8).to_string()));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub p11: f64,
    pub p12: f64,
}

/// The six inside-class settings: `p11` in {0.7, 0.8, 0.9} by `p12` in
/// {0.7, 0.8}.
pub fn paper_grid() -> Vec<Condition> {
    let mut out = Vec::new();
    for p11 in [0.7, 0.8, 0.9] {
        for p12 in [0.7, 0.8] {
            out.push(Condition { p11, p12 });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StudyConfig {
    pub design: SimDesign,
    pub conditions: Vec<Condition>,
    pub replicates: usize,
    pub sampler: SamplerConfig,
    pub prior: PriorConfig,
    pub spectral: SpectralConfig,
    /// kNN candidates for the person graph; defaults depend on `n`.
    pub k_candidates: Option<Vec<usize>>,
    pub em: EmConfig,
    pub seed: u64,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            design: SimDesign::default(),
            conditions: paper_grid(),
            replicates: 200,
            sampler: SamplerConfig::default(),
            prior: PriorConfig::default(),
            spectral: SpectralConfig::default(),
            k_candidates: None,
            em: EmConfig::default(),
            seed: 0,
        }
    }
}

/// Child seed of replicate `rep` under condition `cond`.
pub fn replicate_seed(seed: u64, cond: usize, rep: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((cond as u64) << 32) | rep as u64);
    rng.random()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateResult {
    pub condition: usize,
    pub replicate: usize,
    pub seed: u64,
    /// Row-normalized confusion matrices, truth rows by predicted columns.
    pub dlsjm: Vec<Vec<f64>>,
    pub mixture: Vec<Vec<f64>>,
    pub k_neighbors: usize,
    pub explained_variance: f64,
    pub mixture_log_likelihood: f64,
    pub seconds: f64,
}

impl ReplicateResult {
    pub fn dlsjm_diagonal(&self) -> f64 {
        mean_diagonal(&self.dlsjm)
    }

    pub fn mixture_diagonal(&self) -> f64 {
        mean_diagonal(&self.mixture)
    }
}

pub fn mean_diagonal(m: &[Vec<f64>]) -> f64 {
    m.iter().enumerate().map(|(i, r)| r[i]).sum::<f64>() / m.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateFailure {
    pub condition: usize,
    pub replicate: usize,
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionSummary {
    pub condition: Condition,
    pub completed: usize,
    pub failed: usize,
    pub dlsjm: Vec<Vec<f64>>,
    pub mixture: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub summaries: Vec<ConditionSummary>,
    pub replicates: Vec<ReplicateResult>,
    pub failures: Vec<ReplicateFailure>,
    pub note: String,
}

pub const TABLE_NOTE: &str = "conditions follow the stated six-setting grid (p11 in {0.7, 0.8, 0.9} x p12 in {0.7, 0.8}); \
the published table repeats two row labels, which are read here as the p12 = 0.8 settings";

/// Generate, fit and score one replicate.
pub fn run_replicate(cfg: &StudyConfig, cond: usize, rep: usize) -> Result<ReplicateResult> {
    let start = Instant::now();
    let seed = replicate_seed(cfg.seed, cond, rep);
    let c = cfg.conditions[cond];
    let design = SimDesign {
        p11: c.p11,
        p12: c.p12,
        seed,
        ..cfg.design.clone()
    };
    let data = simulate(&design)?;
    data.x.check_fittable()?;
    let truth = ClusterAssignment::from_labels(data.classes.clone());
    let g = design.n_classes;

    let sampler = SamplerConfig {
        seed,
        ..cfg.sampler.clone()
    };
    let chain = run_chain(&data.x, cfg.prior, &sampler)?;
    let aligned = align_chain(&chain)?;
    let summary = posterior_distances(&chain, &aligned, &data.x)?;
    let n = data.x.n();
    let candidates = cfg.k_candidates.clone().unwrap_or_else(|| default_k_candidates(n));
    let spectral = SpectralConfig {
        seed,
        ..cfg.spectral.clone()
    };
    let persons = choose_k_neighbors(&summary.person_dist, n, g, &candidates, &spectral)?;
    let dlsjm = confusion_matrix(&truth, &persons)?;

    let mix = em_fit(&data.x, g, &cfg.em, seed)?;
    let mixture = confusion_matrix(&truth, &classify_map(&mix, &data.x))?;
    Ok(ReplicateResult {
        condition: cond,
        replicate: rep,
        seed,
        dlsjm,
        mixture,
        k_neighbors: persons.k_neighbors,
        explained_variance: persons.explained_variance,
        mixture_log_likelihood: mix.log_likelihood,
        seconds: start.elapsed().as_secs_f64(),
    })
}

fn average(ms: &[&Vec<Vec<f64>>], g: usize) -> Vec<Vec<f64>> {
    let mut out = vec![vec![0.0; g]; g];
    for m in ms {
        for (r, row) in m.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                out[r][c] += v / ms.len() as f64;
            }
        }
    }
    out
}

/// Every (condition, replicate) pair, in parallel. Failed replicates are
/// logged and left out of the averages.
pub fn run_study(cfg: &StudyConfig) -> Result<StudyReport> {
    cfg.design.validate()?;
    cfg.sampler.validate()?;
    if cfg.conditions.is_empty() || cfg.replicates == 0 {
        return Err(Error::Config("study needs at least one condition and replicate".into()));
    }
    let jobs: Vec<(usize, usize)> = (0..cfg.conditions.len())
        .flat_map(|c| (0..cfg.replicates).map(move |r| (c, r)))
        .collect();
    let results: Vec<std::result::Result<ReplicateResult, ReplicateFailure>> = jobs
        .par_iter()
        .map(|&(c, r)| {
            run_replicate(cfg, c, r).map_err(|e| {
                log::warn!("condition {c} replicate {r} failed: {e}");
                ReplicateFailure {
                    condition: c,
                    replicate: r,
                    seed: replicate_seed(cfg.seed, c, r),
                    error: e.to_string(),
                }
            })
        })
        .collect();
    let mut replicates = Vec::new();
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(v) => replicates.push(v),
            Err(f) => failures.push(f),
        }
    }
    let g = cfg.design.n_classes;
    let summaries = cfg
        .conditions
        .iter()
        .enumerate()
        .map(|(ci, &condition)| {
            let done: Vec<&ReplicateResult> = replicates.iter().filter(|r| r.condition == ci).collect();
            ConditionSummary {
                condition,
                completed: done.len(),
                failed: failures.iter().filter(|f| f.condition == ci).count(),
                dlsjm: average(&done.iter().map(|r| &r.dlsjm).collect::<Vec<_>>(), g),
                mixture: average(&done.iter().map(|r| &r.mixture).collect::<Vec<_>>(), g),
            }
        })
        .collect();
    Ok(StudyReport {
        summaries,
        replicates,
        failures,
        note: TABLE_NOTE.to_string(),
    })
}

fn f4(v: f64) -> String {
    format!("{v:.4}")
}

/// `table3.csv` (averaged confusion matrices), `replicates.csv` and
/// `study.json` (the full report).
pub fn write_study(dir: &Path, report: &StudyReport) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    let mut w = csv::Writer::from_path(dir.join("table3.csv"))?;
    let g = report.summaries.first().map_or(0, |s| s.dlsjm.len());
    let mut header: Vec<String> = ["p11", "p12", "method", "true_class", "replicates"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend((1..=g).map(|c| format!("predicted{c}")));
    w.write_record(&header)?;
    for s in &report.summaries {
        for (method, m) in [("dlsjm", &s.dlsjm), ("mixture_rasch", &s.mixture)] {
            for (t, row) in m.iter().enumerate() {
                let mut rec = vec![
                    s.condition.p11.to_string(),
                    s.condition.p12.to_string(),
                    method.to_string(),
                    (t + 1).to_string(),
                    s.completed.to_string(),
                ];
                rec.extend(row.iter().map(|&v| f4(v)));
                w.write_record(&rec)?;
            }
        }
    }
    w.flush().map_err(|e| Error::io("writing table3.csv", e))?;

    let mut w = csv::Writer::from_path(dir.join("replicates.csv"))?;
    w.write_record([
        "condition", "replicate", "seed", "status", "dlsjm_diagonal", "mixture_diagonal",
        "k_neighbors", "explained_variance", "seconds", "error",
    ])?;
    let mut rows: Vec<(usize, usize, Vec<String>)> = report
        .replicates
        .iter()
        .map(|r| {
            (r.condition, r.replicate, vec![
                (r.condition + 1).to_string(),
                (r.replicate + 1).to_string(),
                r.seed.to_string(),
                "ok".into(),
                f4(r.dlsjm_diagonal()),
                f4(r.mixture_diagonal()),
                r.k_neighbors.to_string(),
                f4(r.explained_variance),
                format!("{:.1}", r.seconds),
                String::new(),
            ])
        })
        .chain(report.failures.iter().map(|f| {
            (f.condition, f.replicate, vec![
                (f.condition + 1).to_string(),
                (f.replicate + 1).to_string(),
                f.seed.to_string(),
                "failed".into(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                f.error.clone(),
            ])
        }))
        .collect();
    rows.sort_by_key(|r| (r.0, r.1));
    for (_, _, rec) in rows {
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("writing replicates.csv", e))?;

    let f = std::fs::File::create(dir.join("study.json")).map_err(|e| Error::io("creating study.json", e))?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(f), report)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn big(design: SimDesign, per: usize) -> SimDesign {
        SimDesign {
            respondents_per_class: per,
            ..design
        }
    }

    #[test]
    fn design_validation() {
        assert!(SimDesign::default().validate().is_ok());
        assert!(SimDesign::drv_shaped().validate().is_ok());
        assert_eq!(SimDesign::drv_shaped().n(), 418);
        assert_eq!(SimDesign::drv_shaped().p(), 24);
        assert!(SimDesign { rho: 1.0, ..SimDesign::default() }.validate().is_err());
        assert!(SimDesign { anchor: 4, ..SimDesign::default() }.validate().is_err());
        assert!(SimDesign { class_to_groups: vec![vec![0]], ..SimDesign::default() }.validate().is_err());
    }

    #[test]
    fn every_class_has_two_intended_groups() {
        let d = SimDesign::default();
        for c in d.classes() {
            assert_eq!(d.class_to_groups[c].len(), 2);
        }
    }

    #[test]
    fn noiseless_flags_match_intended() {
        let d = SimDesign {
            p11: 1.0,
            p21: 1.0,
            ..SimDesign::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let flags = assign_groups(&d, &mut rng);
        for (k, c) in d.classes().into_iter().enumerate() {
            for g in 0..6 {
                assert_eq!(flags[k * 6 + g], d.class_to_groups[c].contains(&g));
            }
        }
    }

    #[test]
    fn flag_retention_frequency() {
        // 3 * 6000 respondents x 2 intended groups = 36000 retention draws
        let d = big(SimDesign { p11: 0.7, ..SimDesign::default() }, 6000);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let flags = assign_groups(&d, &mut rng);
        let (mut kept, mut total) = (0usize, 0usize);
        for (k, c) in d.classes().into_iter().enumerate() {
            for &g in &d.class_to_groups[c] {
                total += 1;
                kept += flags[k * 6 + g] as usize;
            }
        }
        let f = kept as f64 / total as f64;
        let se = (0.7 * 0.3 / total as f64).sqrt();
        assert!((f - 0.7).abs() < (3.0 * se).max(0.01), "{f}");
    }

    #[test]
    fn deterministic_blocks_without_noise() {
        let d = SimDesign {
            p12: 1.0,
            p22: 1e-300,
            ..SimDesign::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let flags = assign_groups(&d, &mut rng);
        let x = generate_responses(&flags, &d, &mut rng).unwrap();
        for k in 0..x.n() {
            for i in 0..x.p() {
                assert_eq!(x.get(k, i) == 1, flags[k * 6 + d.group_of(i)]);
            }
        }
    }

    #[test]
    fn inside_response_frequency() {
        let d = big(SimDesign { p12: 0.8, ..SimDesign::default() }, 2000);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let flags = assign_groups(&d, &mut rng);
        let x = generate_responses(&flags, &d, &mut rng).unwrap();
        let (mut hits, mut total) = (0usize, 0usize);
        for k in 0..x.n() {
            for i in 0..x.p() {
                if flags[k * 6 + d.group_of(i)] {
                    total += 1;
                    hits += x.get(k, i) as usize;
                }
            }
        }
        let f = hits as f64 / total as f64;
        assert!((f - 0.8).abs() < 0.01, "{f}");
    }

    #[test]
    fn dependence_extremes_and_frequency() {
        let d = SimDesign::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let flags = assign_groups(&d, &mut rng);
        let raw = generate_responses(&flags, &d, &mut rng).unwrap();
        let none = SimDesign { rho: 0.0, ..d.clone() };
        let (same, copied) = inject_dependence(&raw, &none, &mut rng).unwrap();
        assert_eq!(same, raw);
        assert!(copied.iter().all(|&c| !c));
        let full = SimDesign { rho: 0.999_999_999, ..d.clone() };
        let (all, _) = inject_dependence(&raw, &full, &mut rng).unwrap();
        for k in 0..all.n() {
            for i in 0..all.p() {
                assert_eq!(all.get(k, i), all.get(k, d.group_of(i) * 4));
            }
        }
        // 3 * 2000 respondents x 6 groups x 3 copy draws = 108000 pairs
        let many = big(SimDesign { rho: 0.8, ..d.clone() }, 2000);
        let flags = assign_groups(&many, &mut rng);
        let raw = generate_responses(&flags, &many, &mut rng).unwrap();
        let (_, copied) = inject_dependence(&raw, &many, &mut rng).unwrap();
        let f = copied.iter().filter(|&&c| c).count() as f64 / (raw.n() * 18) as f64;
        assert!((f - 0.8).abs() < 0.01, "{f}");
    }

    fn within_group_correlation(rho: f64) -> f64 {
        let d = big(SimDesign { rho, seed: 11, ..SimDesign::default() }, 3000);
        let data = simulate(&d).unwrap();
        let x = &data.x;
        let col = |i: usize| -> Vec<f64> { (0..x.n()).map(|k| x.get(k, i) as f64).collect() };
        let corr = |a: &[f64], b: &[f64]| {
            let n = a.len() as f64;
            let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
            let c: f64 = a.iter().zip(b).map(|(u, v)| (u - ma) * (v - mb)).sum();
            let va: f64 = a.iter().map(|u| (u - ma).powi(2)).sum();
            let vb: f64 = b.iter().map(|v| (v - mb).powi(2)).sum();
            c / (va * vb).sqrt()
        };
        let mut total = 0.0;
        let mut count = 0;
        for g in 0..6 {
            for i in g * 4..g * 4 + 4 {
                for j in i + 1..g * 4 + 4 {
                    total += corr(&col(i), &col(j));
                    count += 1;
                }
            }
        }
        total / count as f64
    }

    #[test]
    fn dependence_raises_within_group_correlation() {
        let c: Vec<f64> = [0.0, 0.4, 0.8].iter().map(|&r| within_group_correlation(r)).collect();
        assert!(c[0] < c[1] && c[1] < c[2], "{c:?}");
    }

    #[test]
    fn simulation_is_seed_deterministic() {
        let d = SimDesign { seed: 9, ..SimDesign::default() };
        assert_eq!(simulate(&d).unwrap(), simulate(&d).unwrap());
        let other = SimDesign { seed: 10, ..d.clone() };
        assert_ne!(simulate(&d).unwrap().x, simulate(&other).unwrap().x);
    }

    #[test]
    fn grid_and_seeds() {
        let g = paper_grid();
        assert_eq!(g.len(), 6);
        assert!(g.contains(&Condition { p11: 0.9, p12: 0.8 }));
        assert_ne!(replicate_seed(1, 0, 1), replicate_seed(1, 1, 0));
        assert_eq!(replicate_seed(1, 2, 3), replicate_seed(1, 2, 3));
    }

    #[test]
    fn tiny_study_has_one_matrix_per_method() {
        let cfg = StudyConfig {
            design: SimDesign {
                respondents_per_class: 8,
                ..SimDesign::default()
            },
            conditions: vec![Condition { p11: 0.9, p12: 0.8 }],
            replicates: 1,
            sampler: SamplerConfig {
                n_iterations: 60,
                burn_in: 20,
                thin: 2,
                adapt_window: 10,
                ..SamplerConfig::default()
            },
            em: EmConfig {
                starts: 2,
                max_iter: 100,
                ..EmConfig::default()
            },
            seed: 3,
            ..StudyConfig::default()
        };
        let report = run_study(&cfg).unwrap();
        assert_eq!(report.summaries.len(), 1);
        let s = &report.summaries[0];
        assert_eq!(s.completed + s.failed, 1);
        if s.completed == 1 {
            assert_eq!(s.dlsjm.len(), 3);
            assert!(s.dlsjm.iter().all(|r| r.len() == 3));
            assert_eq!(s.mixture.len(), 3);
        }
        let dir = tempfile::tempdir().unwrap();
        write_study(dir.path(), &report).unwrap();
        let table = std::fs::read_to_string(dir.path().join("table3.csv")).unwrap();
        assert_eq!(table.lines().count(), 7);
    }
}
