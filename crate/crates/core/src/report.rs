//! Static HTML summary of a fitted run directory.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::clustering::{read_assignment_csv, ClusterAssignment};
use crate::error::{Error, Result};
use crate::likelihood::pair_distance;
use crate::likelihood::softplus::sigmoid;
use crate::plot::{self, Marker, Point, Series};
use crate::postprocess::PosteriorSummary;
use crate::sampler::io::load_chain;

pub const ESTIMATES_FILE: &str = "posterior.json";

/// Posterior means needed to draw the latent space and response curves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorEstimates {
    pub n: usize,
    pub p: usize,
    pub dim: usize,
    pub person_ids: Vec<String>,
    pub item_ids: Vec<String>,
    pub z_mean: Vec<f64>,
    pub w_mean: Vec<f64>,
    pub beta_mean: Vec<f64>,
    pub theta_mean: Vec<f64>,
    pub sigma_z_sq_mean: f64,
    /// Respondents without a correct answer.
    pub zero_score_persons: Vec<usize>,
}

impl PosteriorEstimates {
    pub fn new(
        summary: &PosteriorSummary,
        person_ids: Vec<String>,
        item_ids: Vec<String>,
        zero_score_persons: Vec<usize>,
    ) -> Self {
        Self {
            n: summary.n,
            p: summary.p,
            dim: summary.dim,
            person_ids,
            item_ids,
            z_mean: summary.z_mean.clone(),
            w_mean: summary.w_mean.clone(),
            beta_mean: summary.beta.iter().map(|s| s.mean).collect(),
            theta_mean: summary.theta.iter().map(|s| s.mean).collect(),
            sigma_z_sq_mean: summary.sigma_z_sq.mean,
            zero_score_persons,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(f), self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
        Ok(serde_json::from_reader(std::io::BufReader::new(f))?)
    }

    fn max_pairwise(points: &[f64], m: usize, dim: usize) -> f64 {
        let mut best: f64 = 0.0;
        for a in 0..m {
            for b in a + 1..m {
                best = best.max(pair_distance(&points[a * dim..(a + 1) * dim], &points[b * dim..(b + 1) * dim]));
            }
        }
        best
    }
}

/// `sigmoid(intercept - d)` on each distance.
pub fn response_curve(intercept: f64, distances: &[f64]) -> Vec<f64> {
    distances.iter().map(|d| sigmoid(intercept - d)).collect()
}

fn grid(max: f64, steps: usize) -> Vec<f64> {
    (0..=steps).map(|s| max * s as f64 / steps as f64).collect()
}

fn coords(v: &[f64], a: usize, dim: usize) -> (f64, f64) {
    (v[a * dim], if dim > 1 { v[a * dim + 1] } else { 0.0 })
}

/// Scatter of persons (circles) with items overlaid (triangles).
pub fn latent_space_svg(
    est: &PosteriorEstimates,
    title: &str,
    persons: Option<&ClusterAssignment>,
    items: Option<&ClusterAssignment>,
    color_by_items: bool,
) -> String {
    let mut pts = Vec::with_capacity(est.n + est.p);
    for k in 0..est.n {
        let (x, y) = coords(&est.z_mean, k, est.dim);
        let group = if color_by_items { 9 } else { persons.map_or(0, |c| c.labels[k]) };
        pts.push(Point { x, y, group, marker: Marker::Circle, label: None });
    }
    for i in 0..est.p {
        let (x, y) = coords(&est.w_mean, i, est.dim);
        let group = if color_by_items { items.map_or(0, |c| c.labels[i]) } else { 7 };
        pts.push(Point {
            x,
            y,
            group,
            marker: Marker::Triangle,
            label: Some(est.item_ids[i].clone()),
        });
    }
    plot::scatter(title, &pts)
}

fn optional_clusters(path: &Path) -> Option<ClusterAssignment> {
    path.exists().then(|| read_assignment_csv(path).ok()).flatten()
}

const MAX_PERSON_CURVES: usize = 60;

/// Writes `report.html` into `dir` and returns its path.
pub fn write_report(dir: &Path) -> Result<PathBuf> {
    let est = PosteriorEstimates::load(&dir.join(ESTIMATES_FILE))?;
    let chain = load_chain(dir)?;
    let persons = optional_clusters(&dir.join("clusters_person.csv"));
    let items = optional_clusters(&dir.join("clusters_item.csv"));

    let mut html = String::new();
    html.push_str("<!DOCTYPE html><html><head><meta charset=\"utf-8\"><title>Latent space fit</title>");
    html.push_str("<style>body{font-family:sans-serif;max-width:1100px;margin:auto}table{border-collapse:collapse}td,th{border:1px solid #ccc;padding:2px 6px;text-align:right}figure{display:inline-block;margin:6px}</style></head><body>");
    let _ = write!(
        html,
        "<h1>Latent space fit</h1><p>{} respondents, {} items, {}-dimensional latent space, {} retained draws (iterations {}, burn-in {}, thinning {}).</p>",
        est.n,
        est.p,
        est.dim,
        chain.samples.len(),
        chain.config.n_iterations,
        chain.config.burn_in,
        chain.config.thin
    );
    if !est.zero_score_persons.is_empty() {
        let ids: Vec<&str> = est.zero_score_persons.iter().map(|&k| est.person_ids[k].as_str()).collect();
        let _ = write!(
            html,
            "<p>Respondents without any correct answer (intercepts driven by the prior): {}</p>",
            ids.join(", ")
        );
    }

    html.push_str("<h2>Acceptance rates after burn-in</h2><table><tr><th>block</th><th>rate</th><th>jump SD</th></tr>");
    for ((name, rate), b) in chain.ledger.sampling_rates().into_iter().zip(&chain.ledger.blocks) {
        let _ = write!(
            html,
            "<tr><td>{name}</td><td>{}</td><td>{:.4}</td></tr>",
            rate.map_or("-".into(), |r| format!("{r:.3}")),
            b.jump_sd
        );
    }
    html.push_str("</table>");

    html.push_str("<h2>Latent space</h2>");
    let _ = write!(
        html,
        "<figure>{}<figcaption>Respondents coloured by cluster; items as triangles.</figcaption></figure>",
        latent_space_svg(&est, "Respondents", persons.as_ref(), items.as_ref(), false)
    );
    let _ = write!(
        html,
        "<figure>{}<figcaption>Items coloured by cluster.</figcaption></figure>",
        latent_space_svg(&est, "Items", persons.as_ref(), items.as_ref(), true)
    );

    html.push_str("<h2>Probability of a joint correct response by latent distance</h2>");
    let dmax_z = PosteriorEstimates::max_pairwise(&est.z_mean, est.n, est.dim).max(1.0);
    let dz = grid(dmax_z, 60);
    let item_series: Vec<Series> = (0..est.p)
        .map(|i| Series {
            points: dz.iter().copied().zip(response_curve(est.beta_mean[i], &dz)).collect(),
            group: items.as_ref().map_or(i, |c| c.labels[i]),
        })
        .collect();
    let _ = write!(
        html,
        "<figure>{}<figcaption>One curve per item: two respondents at this distance both answer the item correctly.</figcaption></figure>",
        plot::lines("Item curves", "respondent distance", "probability", &item_series, Some((0.0, 1.0)))
    );
    let dmax_w = PosteriorEstimates::max_pairwise(&est.w_mean, est.p, est.dim).max(1.0);
    let dw = grid(dmax_w, 60);
    let step = (est.n / MAX_PERSON_CURVES).max(1);
    let person_series: Vec<Series> = (0..est.n)
        .step_by(step)
        .map(|k| Series {
            points: dw.iter().copied().zip(response_curve(est.theta_mean[k], &dw)).collect(),
            group: persons.as_ref().map_or(0, |c| c.labels[k]),
        })
        .collect();
    let _ = write!(
        html,
        "<figure>{}<figcaption>One curve per respondent (every {step}th shown): the respondent answers both items at this distance correctly.</figcaption></figure>",
        plot::lines("Respondent curves", "item distance", "probability", &person_series, Some((0.0, 1.0)))
    );

    html.push_str("<h2>Item intercepts</h2><table><tr><th>item</th><th>posterior mean</th>");
    if items.is_some() {
        html.push_str("<th>cluster</th>");
    }
    html.push_str("</tr>");
    for i in 0..est.p {
        let _ = write!(html, "<tr><td>{}</td><td>{:.3}</td>", est.item_ids[i], est.beta_mean[i]);
        if let Some(c) = &items {
            let _ = write!(html, "<td>{}</td>", c.labels[i] + 1);
        }
        html.push_str("</tr>");
    }
    html.push_str("</table></body></html>\n");

    let path = dir.join("report.html");
    std::fs::write(&path, html).map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
    Ok(path)
}
