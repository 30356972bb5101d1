//! Run configuration and end-to-end orchestration behind the CLI.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baseline::{classify_map, em_fit, write_classes_csv, write_params_json, EmConfig};
use crate::clustering::{
    choose_k_neighbors, default_k_candidates, write_assignment_csv, ClusterAssignment, SpectralConfig,
};
use crate::data::{load_any, save_cache, CsvOptions};
use crate::error::{Error, Result};
use crate::likelihood::PriorConfig;
use crate::postprocess::{
    align_chain, default_trace_pairs, distance_trace, item_labels, person_labels, posterior_distances,
    write_summary, Side,
};
use crate::report::{latent_space_svg, PosteriorEstimates, ESTIMATES_FILE};
use crate::sampler::io::save_chain;
use crate::sampler::{run_chain, ChainOutput, SamplerConfig};
use crate::simgen::{run_study, simulate, write_study, write_truth_csv, Condition, SimDataset, SimDesign, StudyConfig, StudyReport};
use crate::data::write_csv;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusteringConfig {
    pub g_person: usize,
    pub g_item: usize,
    /// kNN candidates; an empty list means the size-dependent defaults.
    pub k_person: Vec<usize>,
    pub k_item: Vec<usize>,
    #[serde(flatten)]
    pub spectral: SpectralConfig,
}

impl Default for ClusteringConfig {
    fn default() -> Self {
        Self {
            g_person: 3,
            g_item: 2,
            k_person: Vec::new(),
            k_item: Vec::new(),
            spectral: SpectralConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StudySection {
    pub replicates: usize,
    pub conditions: Vec<Condition>,
}

impl Default for StudySection {
    fn default() -> Self {
        Self {
            replicates: 200,
            conditions: crate::simgen::paper_grid(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GuardConfig {
    /// Fail the run when any block's post-burn-in acceptance rate falls
    /// below this.
    pub min_acceptance: f64,
}

impl Default for GuardConfig {
    fn default() -> Self {
        Self { min_acceptance: 0.01 }
    }
}

/// Everything a subcommand may need. Command-line flags override the file,
/// which overrides these defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub prior: PriorConfig,
    pub sampler: SamplerConfig,
    pub clustering: ClusteringConfig,
    pub design: SimDesign,
    pub em: EmConfig,
    pub study: StudySection,
    pub guard: GuardConfig,
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::from_toml_str(&text).map_err(|e| e.context(format!("config {}", path.display())))
    }

    pub fn require_seed(&self) -> Result<u64> {
        self.seed
            .ok_or_else(|| Error::Config("a seed is required (--seed or `seed` in the config file)".into()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

/// Git-style content hash: SHA-256 over `"blob <len>\0" + bytes`.
pub fn blob_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

pub fn hash_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    Ok(blob_hash(&bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputRecord {
    pub path: String,
    pub hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: RunConfig,
    pub inputs: Vec<InputRecord>,
    pub wall_clock_seconds: f64,
    pub workers: usize,
    pub acceptance_rates: Vec<(String, Option<f64>)>,
    pub pair_convention: String,
    pub outputs: Vec<String>,
    pub notes: Vec<String>,
}

impl Manifest {
    pub fn save(&self, dir: &Path) -> Result<()> {
        let path = dir.join("manifest.json");
        let f = std::fs::File::create(&path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(f), self)?;
        Ok(())
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))
}

fn candidates(list: &[usize], m: usize) -> Vec<usize> {
    if list.is_empty() {
        default_k_candidates(m)
    } else {
        list.to_vec()
    }
}

/// Clusters persons and items from posterior mean distances. A side with
/// too few units for its cluster count is skipped.
pub fn cluster_sides(
    person_dist: &[f64],
    n: usize,
    item_dist: &[f64],
    p: usize,
    cfg: &ClusteringConfig,
    seed: u64,
) -> Result<(Option<ClusterAssignment>, Option<ClusterAssignment>)> {
    let spectral = SpectralConfig {
        seed,
        ..cfg.spectral.clone()
    };
    let persons = if cfg.g_person >= 2 && cfg.g_person < n {
        Some(choose_k_neighbors(person_dist, n, cfg.g_person, &candidates(&cfg.k_person, n), &spectral)?)
    } else {
        log::warn!("skipping person clustering: G = {} with {n} respondents", cfg.g_person);
        None
    };
    let items = if cfg.g_item >= 2 && cfg.g_item < p {
        Some(choose_k_neighbors(item_dist, p, cfg.g_item, &candidates(&cfg.k_item, p), &spectral)?)
    } else {
        log::warn!("skipping item clustering: G = {} with {p} items", cfg.g_item);
        None
    };
    Ok((persons, items))
}

pub fn write_clusters(
    dir: &Path,
    est: &PosteriorEstimates,
    persons: Option<&ClusterAssignment>,
    items: Option<&ClusterAssignment>,
) -> Result<Vec<String>> {
    let mut written = Vec::new();
    if let Some(c) = persons {
        write_assignment_csv(&dir.join("clusters_person.csv"), &est.person_ids, c)?;
        written.push("clusters_person.csv".to_string());
    }
    if let Some(c) = items {
        write_assignment_csv(&dir.join("clusters_item.csv"), &est.item_ids, c)?;
        written.push("clusters_item.csv".to_string());
    }
    let svg = latent_space_svg(est, "Posterior mean latent space", persons, items, false);
    let path = dir.join("latent_space.svg");
    std::fs::write(&path, svg).map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
    written.push("latent_space.svg".to_string());
    Ok(written)
}

/// Outcome of [`fit`]; `guard` is set when the convergence guard tripped
/// (all outputs are still written).
pub struct FitOutcome {
    pub dir: PathBuf,
    pub chain: ChainOutput,
    pub guard: Option<String>,
}

pub const INPUT_CACHE: &str = "input.irm";

/// Chain, post-processing, clustering and manifest for one data set.
pub fn fit(cfg: &RunConfig, input: &Path, csv: CsvOptions, out: &Path) -> Result<FitOutcome> {
    let start = Instant::now();
    let seed = cfg.require_seed()?;
    let x = load_any(input, csv).map_err(|e| e.context(format!("loading {}", input.display())))?;
    x.check_fittable()?;
    let zero = x.zero_score_persons();
    let mut notes = Vec::new();
    if !zero.is_empty() {
        let msg = format!("{} respondent(s) without any correct answer were retained", zero.len());
        log::warn!("{msg}");
        notes.push(msg);
    }
    create_dir(out)?;
    save_cache(&x, &out.join(INPUT_CACHE))?;

    let sampler = SamplerConfig {
        seed,
        ..cfg.sampler.clone()
    };
    log::info!(
        "sampling {} iterations ({} burn-in) for {}x{} responses",
        sampler.n_iterations,
        sampler.burn_in,
        x.n(),
        x.p()
    );
    let chain = run_chain(&x, cfg.prior, &sampler)?;
    save_chain(&chain, out)?;

    let aligned = align_chain(&chain)?;
    let flagged = aligned.rank_deficient.iter().filter(|&&f| f).count();
    if flagged > 0 {
        notes.push(format!("{flagged} draw(s) had a rank-deficient Procrustes cross-covariance"));
    }
    let summary = posterior_distances(&chain, &aligned, &x)?;
    let mut traces = distance_trace(&chain, &x, Side::Person, &default_trace_pairs(x.n(), 4))?;
    traces.extend(distance_trace(&chain, &x, Side::Item, &default_trace_pairs(x.p(), 4))?);
    write_summary(out, &x, &summary, &traces)?;
    let est = PosteriorEstimates::new(&summary, person_labels(&x), item_labels(&x), zero);
    est.save(&out.join(ESTIMATES_FILE))?;

    let (persons, items) = cluster_sides(&summary.person_dist, x.n(), &summary.item_dist, x.p(), &cfg.clustering, seed)?;
    let mut outputs: Vec<String> = [
        "samples.bin",
        "config.json",
        "log_posterior.csv",
        "acceptance.csv",
        "person_dist.csv",
        "item_dist.csv",
        "beta_summary.csv",
        "theta_summary.csv",
        "traces/",
        ESTIMATES_FILE,
        INPUT_CACHE,
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    outputs.extend(write_clusters(out, &est, persons.as_ref(), items.as_ref())?);

    let rates = chain.ledger.sampling_rates();
    let guard = rates
        .iter()
        .find(|(_, r)| r.is_some_and(|r| r < cfg.guard.min_acceptance))
        .map(|(name, r)| {
            format!(
                "block {name} accepted {:.4} of proposals after burn-in (minimum {})",
                r.unwrap(),
                cfg.guard.min_acceptance
            )
        });
    if let Some(g) = &guard {
        notes.push(format!("convergence guard: {g}"));
    }
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: "fit".into(),
        config: RunConfig {
            seed: Some(seed),
            ..cfg.clone()
        },
        inputs: vec![InputRecord {
            path: input.display().to_string(),
            hash: hash_file(input)?,
        }],
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        workers: rayon::current_num_threads(),
        acceptance_rates: rates,
        pair_convention: format!("{:?}", sampler.convention).to_lowercase(),
        outputs,
        notes,
    };
    manifest.save(out)?;
    Ok(FitOutcome {
        dir: out.to_path_buf(),
        chain,
        guard,
    })
}

/// Re-clusters a finished run from its stored distance matrices.
pub fn recluster(cfg: &RunConfig, run: &Path) -> Result<(Option<ClusterAssignment>, Option<ClusterAssignment>)> {
    let seed = cfg.require_seed()?;
    let x = crate::data::load_cache(&run.join(INPUT_CACHE))?;
    let est = PosteriorEstimates::load(&run.join(ESTIMATES_FILE))?;
    let person = read_square_csv(&run.join("person_dist.csv"), x.n())?;
    let item = read_square_csv(&run.join("item_dist.csv"), x.p())?;
    let (persons, items) = cluster_sides(&person, x.n(), &item, x.p(), &cfg.clustering, seed)?;
    write_clusters(run, &est, persons.as_ref(), items.as_ref())?;
    Ok((persons, items))
}

/// Reads a labelled square matrix written by
/// [`crate::postprocess::write_matrix_csv`].
pub fn read_square_csv(path: &Path, m: usize) -> Result<Vec<f64>> {
    let mut r = csv::Reader::from_path(path)?;
    let bad = |reason: String| Error::Format {
        path: path.to_path_buf(),
        reason,
    };
    let mut out = Vec::with_capacity(m * m);
    for (row, rec) in r.records().enumerate() {
        let rec = rec?;
        if rec.len() != m + 1 {
            return Err(bad(format!("row {} has {} cells, expected {}", row + 1, rec.len(), m + 1)));
        }
        for cell in rec.iter().skip(1) {
            out.push(cell.trim().parse::<f64>().map_err(|_| bad(format!("bad number {cell:?}")))?);
        }
    }
    if out.len() != m * m {
        return Err(bad(format!("expected {m} rows")));
    }
    Ok(out)
}

/// Mixture-Rasch fit with MAP classes.
pub fn baseline(cfg: &RunConfig, input: &Path, csv: CsvOptions, g: usize, out: &Path) -> Result<ClusterAssignment> {
    let seed = cfg.require_seed()?;
    let x = load_any(input, csv).map_err(|e| e.context(format!("loading {}", input.display())))?;
    create_dir(out)?;
    let model = em_fit(&x, g, &cfg.em, seed)?;
    if !model.converged {
        log::warn!("mixture EM stopped after {} iterations without meeting the tolerance", model.iterations);
    }
    let classes = classify_map(&model, &x);
    write_params_json(&out.join("mixture_params.json"), &model)?;
    write_classes_csv(&out.join("mixture_classes.csv"), &person_labels(&x), &classes, &model.class_posteriors(&x))?;
    Ok(classes)
}

/// Draws one synthetic data set; writes `responses.csv` and `truth.csv`.
pub fn simulate_to(cfg: &RunConfig, out: &Path) -> Result<SimDataset> {
    let design = SimDesign {
        seed: cfg.require_seed()?,
        ..cfg.design.clone()
    };
    let data = simulate(&design)?;
    create_dir(out)?;
    let path = out.join("responses.csv");
    let f = std::fs::File::create(&path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    write_csv(&data.x, std::io::BufWriter::new(f))?;
    write_truth_csv(&out.join("truth.csv"), &data, &design)?;
    Ok(data)
}

pub fn study_config(cfg: &RunConfig) -> Result<StudyConfig> {
    Ok(StudyConfig {
        design: cfg.design.clone(),
        conditions: cfg.study.conditions.clone(),
        replicates: cfg.study.replicates,
        sampler: cfg.sampler.clone(),
        prior: cfg.prior,
        spectral: cfg.clustering.spectral.clone(),
        k_candidates: (!cfg.clustering.k_person.is_empty()).then(|| cfg.clustering.k_person.clone()),
        em: cfg.em.clone(),
        seed: cfg.require_seed()?,
    })
}

/// Simulation study over the configured conditions.
pub fn study(cfg: &RunConfig, out: &Path) -> Result<StudyReport> {
    let start = Instant::now();
    let sc = study_config(cfg)?;
    create_dir(out)?;
    let report = run_study(&sc)?;
    write_study(out, &report)?;
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: "study".into(),
        config: cfg.clone(),
        inputs: Vec::new(),
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        workers: rayon::current_num_threads(),
        acceptance_rates: Vec::new(),
        pair_convention: format!("{:?}", cfg.sampler.convention).to_lowercase(),
        outputs: vec!["table3.csv".into(), "replicates.csv".into(), "study.json".into()],
        notes: report
            .failures
            .iter()
            .map(|f| format!("condition {} replicate {} failed: {}", f.condition, f.replicate, f.error))
            .collect(),
    };
    manifest.save(out)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_roundtrip_and_overrides() {
        let cfg = RunConfig::from_toml_str(
            "seed = 7\n[sampler]\nn_iterations = 2000\nburn_in = 500\n[clustering]\ng_person = 4\nrestarts = 5\n",
        )
        .unwrap();
        assert_eq!(cfg.seed, Some(7));
        assert_eq!(cfg.sampler.n_iterations, 2000);
        assert_eq!(cfg.sampler.thin, 10);
        assert_eq!(cfg.clustering.g_person, 4);
        assert_eq!(cfg.clustering.spectral.restarts, 5);
        let again = RunConfig::from_toml_str(&cfg.to_toml()).unwrap();
        assert_eq!(again, cfg);
        assert!(RunConfig::from_toml_str("bogus = 1").is_err());
        assert!(RunConfig::default().require_seed().is_err());
    }

    #[test]
    fn blob_hash_matches_git_layout() {
        // sha256 of "blob 0\0"
        assert_eq!(
            blob_hash(b""),
            "473a0f4c3be8a93681a267e3b1e9a7dcda1185436fe141f7749120a303721813"
        );
        assert_ne!(blob_hash(b"a"), blob_hash(b"b"));
    }
}
