use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dlsjm::clustering::{match_clusters, read_assignment_csv};
use dlsjm::data::CsvOptions;
use dlsjm::pipeline::{self, RunConfig};
use dlsjm::likelihood::PairConvention;
use dlsjm::{Error, Result};

/// Fit latent space joint models to binary item response data.
///
/// Exit codes: 0 success, 2 invalid input or configuration, 3 numerical
/// failure, 4 convergence guard tripped (outputs are still written).
#[derive(Parser)]
#[command(name = "dlsjm", version, about, long_about)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML configuration file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed (required by every stochastic subcommand).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for parallel sections (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Repeat for more log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Args, Default)]
struct SamplerFlags {
    /// Total MCMC iterations, burn-in included.
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    burn_in: Option<usize>,
    #[arg(long)]
    thin: Option<usize>,
    /// Latent space dimension.
    #[arg(long)]
    dim: Option<usize>,
    /// Iterations between proposal-scale adjustments during burn-in.
    #[arg(long)]
    adapt_window: Option<usize>,
    /// Count every pair twice in the likelihood.
    #[arg(long)]
    ordered_pairs: bool,
    /// Evaluate the respondent-position likelihood exactly (slower).
    #[arg(long)]
    exact_likelihood: bool,
}

#[derive(Args, Default)]
struct ClusterFlags {
    /// Respondent clusters.
    #[arg(long)]
    g_person: Option<usize>,
    /// Item clusters.
    #[arg(long)]
    g_item: Option<usize>,
    /// Candidate neighbour counts for the respondent graph.
    #[arg(long, value_delimiter = ',')]
    k_person: Vec<usize>,
    /// Candidate neighbour counts for the item graph.
    #[arg(long, value_delimiter = ',')]
    k_item: Vec<usize>,
}

#[derive(Args)]
struct InputFlags {
    /// Response matrix: CSV of 0/1, or a binary cache written by `fit`.
    input: PathBuf,
    /// First CSV row is a header (default: detect).
    #[arg(long, conflicts_with = "no_header")]
    header: bool,
    #[arg(long)]
    no_header: bool,
    /// First CSV column holds respondent labels.
    #[arg(long)]
    id_column: bool,
}

impl InputFlags {
    fn options(&self) -> CsvOptions {
        CsvOptions {
            has_header: if self.header {
                Some(true)
            } else if self.no_header {
                Some(false)
            } else {
                None
            },
            id_column: self.id_column,
        }
    }

    fn check(&self) -> Result<&Path> {
        if !self.input.is_file() {
            return Err(Error::Config(format!("input {} does not exist", self.input.display())));
        }
        Ok(&self.input)
    }
}

#[derive(Args, Default)]
struct DesignFlags {
    #[arg(long)]
    p11: Option<f64>,
    #[arg(long)]
    p12: Option<f64>,
    #[arg(long)]
    p21: Option<f64>,
    #[arg(long)]
    p22: Option<f64>,
    /// Probability of copying the anchor response within an item group.
    #[arg(long)]
    rho: Option<f64>,
    /// Respondents in each class.
    #[arg(long)]
    per_class: Option<usize>,
    /// Use the 418-respondent, 24-item layout.
    #[arg(long)]
    drv_shaped: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run the sampler, post-process, cluster and write a run directory.
    Fit {
        #[command(flatten)]
        input: InputFlags,
        /// Run directory.
        #[arg(short, long)]
        out: PathBuf,
        #[command(flatten)]
        sampler: SamplerFlags,
        #[command(flatten)]
        clusters: ClusterFlags,
    },
    /// Draw a synthetic data set with known respondent classes.
    Simulate {
        #[arg(short, long)]
        out: PathBuf,
        #[command(flatten)]
        design: DesignFlags,
    },
    /// Repeated simulate-and-fit study against the mixture Rasch baseline.
    Study {
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long)]
        replicates: Option<usize>,
        /// Only the condition with these inside-class probabilities.
        #[arg(long, num_args = 2, value_names = ["P11", "P12"])]
        condition: Option<Vec<f64>>,
        #[command(flatten)]
        design: DesignFlags,
        #[command(flatten)]
        sampler: SamplerFlags,
        #[command(flatten)]
        clusters: ClusterFlags,
    },
    /// Re-cluster a finished run directory from its distance matrices.
    Cluster {
        run: PathBuf,
        #[command(flatten)]
        clusters: ClusterFlags,
        /// Score respondent clusters against a truth CSV (id, 1-based class).
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Fit a mixture Rasch model and assign classes.
    Baseline {
        #[command(flatten)]
        input: InputFlags,
        #[arg(short, long)]
        out: PathBuf,
        /// Number of latent classes.
        #[arg(long, default_value_t = 3)]
        classes: usize,
    },
    /// Write report.html for a finished run directory.
    Report { run: PathBuf },
}

impl SamplerFlags {
    fn apply(&self, cfg: &mut RunConfig) {
        let s = &mut cfg.sampler;
        if let Some(v) = self.iterations {
            s.n_iterations = v;
        }
        if let Some(v) = self.burn_in {
            s.burn_in = v;
        }
        if let Some(v) = self.thin {
            s.thin = v;
        }
        if let Some(v) = self.dim {
            s.dim = v;
        }
        if let Some(v) = self.adapt_window {
            s.adapt_window = v;
        }
        if self.ordered_pairs {
            s.convention = PairConvention::Ordered;
        }
        if self.exact_likelihood {
            s.exact_likelihood = true;
        }
    }
}

impl ClusterFlags {
    fn apply(&self, cfg: &mut RunConfig) {
        let c = &mut cfg.clustering;
        if let Some(v) = self.g_person {
            c.g_person = v;
        }
        if let Some(v) = self.g_item {
            c.g_item = v;
        }
        if !self.k_person.is_empty() {
            c.k_person = self.k_person.clone();
        }
        if !self.k_item.is_empty() {
            c.k_item = self.k_item.clone();
        }
    }
}

impl DesignFlags {
    fn apply(&self, cfg: &mut RunConfig) {
        let d = &mut cfg.design;
        if self.drv_shaped {
            *d = dlsjm::simgen::SimDesign::drv_shaped();
        }
        for (flag, field) in [
            (self.p11, &mut d.p11),
            (self.p12, &mut d.p12),
            (self.p21, &mut d.p21),
            (self.p22, &mut d.p22),
            (self.rho, &mut d.rho),
        ] {
            if let Some(v) = flag {
                *field = v;
            }
        }
        if let Some(v) = self.per_class {
            d.respondents_per_class = v;
            d.class_sizes = None;
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if cli.common.seed.is_some() {
        cfg.seed = cli.common.seed;
    }
    if cli.common.workers.is_some() {
        cfg.workers = cli.common.workers;
    }
    if let Some(w) = cfg.workers {
        if w == 0 {
            return Err(Error::Config("--workers must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }

    match cli.command {
        Command::Fit {
            input,
            out,
            sampler,
            clusters,
        } => {
            sampler.apply(&mut cfg);
            clusters.apply(&mut cfg);
            let path = input.check()?;
            let res = pipeline::fit(&cfg, path, input.options(), &out).map_err(|e| e.context("fit"))?;
            for (block, rate) in res.chain.ledger.sampling_rates() {
                if let Some(r) = rate {
                    log::info!("acceptance {block}: {r:.3}");
                }
            }
            println!("{}", res.dir.display());
            if let Some(g) = res.guard {
                return Err(Error::Convergence(g).context("fit"));
            }
        }
        Command::Simulate { out, design } => {
            design.apply(&mut cfg);
            let data = pipeline::simulate_to(&cfg, &out).map_err(|e| e.context("simulate"))?;
            println!("{} respondents x {} items written to {}", data.x.n(), data.x.p(), out.display());
        }
        Command::Study {
            out,
            replicates,
            condition,
            design,
            sampler,
            clusters,
        } => {
            design.apply(&mut cfg);
            sampler.apply(&mut cfg);
            clusters.apply(&mut cfg);
            if let Some(r) = replicates {
                cfg.study.replicates = r;
            }
            if let Some(c) = condition {
                cfg.study.conditions = vec![dlsjm::simgen::Condition { p11: c[0], p12: c[1] }];
            }
            let report = pipeline::study(&cfg, &out).map_err(|e| e.context("study"))?;
            for s in &report.summaries {
                println!("{s:?}");
            }
            if !report.failures.is_empty() {
                eprintln!("{} replicate(s) failed and were excluded", report.failures.len());
            }
        }
        Command::Cluster { run, clusters, truth } => {
            clusters.apply(&mut cfg);
            let (persons, items) = pipeline::recluster(&cfg, &run).map_err(|e| e.context("cluster"))?;
            if let Some(c) = &persons {
                println!("respondent clusters: {:?} (k = {})", c.sizes(), c.k_neighbors);
                if let Some(t) = truth {
                    let truth = read_assignment_csv(&t)?;
                    let m = match_clusters(&truth, c)?;
                    println!("agreement with truth: {:.3}", m.agreement);
                }
            }
            if let Some(c) = &items {
                println!("item clusters: {:?} (k = {})", c.sizes(), c.k_neighbors);
            }
        }
        Command::Baseline { input, out, classes } => {
            let path = input.check()?;
            let c = pipeline::baseline(&cfg, path, input.options(), classes, &out).map_err(|e| e.context("baseline"))?;
            println!("class sizes: {:?}", c.sizes());
        }
        Command::Report { run } => {
            let path = dlsjm::report::write_report(&run).map_err(|e| e.context("report"))?;
            println!("{}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.common.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
