//! Trial protocol, comparison tables, feature projections and domain-gap
//! measurements.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use clutterbridge_numcore::{bce_mean, Adam, Batch};
use clutterbridge_sim::{render, sample_scene, score, DomainKind, Image, SceneSpec, Task, Trajectory};
use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::arch;
use crate::error::{CoreError, Result};
use crate::policy::{image_batch, Agent, EvalSet};
use crate::rng::stream;
use crate::trajgen::TrajVae;
use crate::transfer::Variant;

#[derive(Debug, Clone, PartialEq)]
pub struct TrialReport {
    pub variant: String,
    pub task: Task,
    pub object_id: u16,
    pub scores: Vec<f64>,
    pub success_rate: f64,
}

impl TrialReport {
    pub fn new(variant: &str, task: Task, object_id: u16, scores: Vec<f64>) -> Result<TrialReport> {
        if scores.is_empty() {
            return Err(CoreError::Invalid("a trial report needs at least one trial".into()));
        }
        let success_rate = scores.iter().sum::<f64>() / scores.len() as f64;
        Ok(TrialReport {
            variant: variant.to_string(),
            task,
            object_id,
            scores,
            success_rate,
        })
    }
}

/// Target scenes for one object, drawn from `seed`.
pub fn trial_scenes(task: Task, object_id: u16, n: usize, seed: u64) -> Result<Vec<SceneSpec>> {
    let mut rng = stream(seed, &format!("trials-{}-{object_id}", task.name()));
    (0..n)
        .map(|_| Ok(sample_scene(task, DomainKind::Target, Some(object_id), rng.gen())?))
        .collect()
}

/// Scores an arbitrary scene → trajectory controller on `n` scenes per object.
pub fn run_trials_with<F>(
    variant: &str,
    task: Task,
    object_ids: &[u16],
    n: usize,
    seed: u64,
    mut act: F,
) -> Result<Vec<TrialReport>>
where
    F: FnMut(&SceneSpec) -> Result<Trajectory>,
{
    if n == 0 {
        return Err(CoreError::Invalid("n_trials must be at least 1".into()));
    }
    let mut out = Vec::with_capacity(object_ids.len());
    for &id in object_ids {
        validate_id(task, id)?;
        let scenes = trial_scenes(task, id, n, seed)?;
        let scores = scenes
            .iter()
            .map(|s| Ok(score(&act(s)?, s)?))
            .collect::<Result<Vec<f64>>>()?;
        out.push(TrialReport::new(variant, task, id, scores)?);
    }
    Ok(out)
}

fn validate_id(task: Task, id: u16) -> Result<()> {
    if id == 0 || id > task.object_count() {
        return Err(CoreError::Invalid(format!("{} has no object id {id}", task.name())));
    }
    Ok(())
}

/// Mean-mode trials of a trained agent. Scenes depend only on (task, object,
/// seed), so every variant faces the same placements.
pub fn run_trials(
    agent: &Agent,
    vae: &TrajVae,
    variant: &str,
    task: Task,
    object_ids: &[u16],
    n: usize,
    seed: u64,
) -> Result<Vec<TrialReport>> {
    if n == 0 {
        return Err(CoreError::Invalid("n_trials must be at least 1".into()));
    }
    let mut out = Vec::with_capacity(object_ids.len());
    for &id in object_ids {
        validate_id(task, id)?;
        let scenes = trial_scenes(task, id, n, seed)?;
        let images: Vec<Image> = scenes.iter().map(render).collect();
        let set = EvalSet {
            images: image_batch(&images)?,
            scenes,
        };
        out.push(TrialReport::new(variant, task, id, set.scores(agent, vae)?)?);
    }
    Ok(out)
}

/// Trials on held-out objects; rejects any id that was seen in training.
#[allow(clippy::too_many_arguments)]
pub fn unseen_eval(
    agent: &Agent,
    vae: &TrajVae,
    variant: &str,
    task: Task,
    unseen_ids: &[u16],
    seen_ids: &[u16],
    n: usize,
    seed: u64,
) -> Result<Vec<TrialReport>> {
    if let Some(id) = unseen_ids.iter().find(|id| seen_ids.contains(id)) {
        return Err(CoreError::Invalid(format!("object {id} is listed as both seen and unseen")));
    }
    run_trials(agent, vae, variant, task, unseen_ids, n, seed)
}

pub fn average_rate(reports: &[TrialReport]) -> f64 {
    reports.iter().map(|r| r.success_rate).sum::<f64>() / reports.len().max(1) as f64
}

/// Per-object rows, one column per variant in the fixed order, plus averages.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub title: String,
    pub object_ids: Vec<u16>,
    pub columns: Vec<String>,
    /// `cells[row][col]`.
    pub cells: Vec<Vec<f64>>,
    pub averages: Vec<f64>,
}

fn column_rank(name: &str) -> usize {
    Variant::ALL
        .iter()
        .position(|v| v.name() == name)
        .unwrap_or(Variant::ALL.len())
}

pub fn make_tables(title: &str, runs: &[(String, Vec<TrialReport>)]) -> Result<Table> {
    if runs.is_empty() {
        return Err(CoreError::Invalid("no runs to tabulate".into()));
    }
    let ids = |r: &[TrialReport]| r.iter().map(|t| t.object_id).collect::<Vec<_>>();
    let object_ids = ids(&runs[0].1);
    let task = runs[0].1.first().map(|r| r.task);
    for (name, reports) in runs {
        if ids(reports) != object_ids {
            return Err(CoreError::Invalid(format!("{name} covers a different object set")));
        }
        if reports.first().map(|r| r.task) != task {
            return Err(CoreError::Invalid(format!("{name} was evaluated on a different task")));
        }
    }
    let names: BTreeSet<&str> = runs.iter().map(|(n, _)| n.as_str()).collect();
    if names.len() != runs.len() {
        return Err(CoreError::Invalid("duplicate variant column".into()));
    }
    let mut order: Vec<usize> = (0..runs.len()).collect();
    order.sort_by_key(|&i| (column_rank(&runs[i].0), i));
    let columns: Vec<String> = order.iter().map(|&i| runs[i].0.clone()).collect();
    let cells: Vec<Vec<f64>> = (0..object_ids.len())
        .map(|row| order.iter().map(|&i| runs[i].1[row].success_rate).collect())
        .collect();
    let averages = (0..columns.len())
        .map(|c| cells.iter().map(|r| r[c]).sum::<f64>() / cells.len().max(1) as f64)
        .collect();
    Ok(Table {
        title: title.to_string(),
        object_ids,
        columns,
        cells,
        averages,
    })
}

impl Table {
    pub fn to_csv(&self) -> String {
        let mut s = format!("object,{}\n", self.columns.join(","));
        for (id, row) in self.object_ids.iter().zip(&self.cells) {
            let vals: Vec<String> = row.iter().map(|v| format!("{v:.4}")).collect();
            let _ = writeln!(s, "{id},{}", vals.join(","));
        }
        let avg: Vec<String> = self.averages.iter().map(|v| format!("{v:.4}")).collect();
        let _ = writeln!(s, "average,{}", avg.join(","));
        s
    }

    pub fn to_text(&self) -> String {
        let width = self.columns.iter().map(|c| c.len()).max().unwrap_or(0).max(6);
        let mut s = format!("{}\n{:<8}", self.title, "object");
        for c in &self.columns {
            let _ = write!(s, " {c:>width$}");
        }
        s.push('\n');
        let mut line = |label: String, vals: &[f64]| {
            let _ = write!(s, "{label:<8}");
            for v in vals {
                let _ = write!(s, " {v:>width$.2}");
            }
            s.push('\n');
        };
        for (id, row) in self.object_ids.iter().zip(&self.cells) {
            line(id.to_string(), row);
        }
        line("average".into(), &self.averages);
        s
    }

    /// Name of the best column per row and on average (first wins ties).
    pub fn winners(&self) -> (Vec<String>, String) {
        let best = |vals: &[f64]| {
            let mut b = 0;
            for (i, v) in vals.iter().enumerate() {
                if *v > vals[b] {
                    b = i;
                }
            }
            self.columns[b].clone()
        };
        (self.cells.iter().map(|r| best(r)).collect(), best(&self.averages))
    }
}

/// Which kind of image a feature row came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Tag {
    Template,
    TaskObject,
    Clutter,
}

impl Tag {
    pub fn name(self) -> &'static str {
        match self {
            Tag::Template => "template",
            Tag::TaskObject => "task_object",
            Tag::Clutter => "clutter",
        }
    }

    pub fn color(self) -> &'static str {
        match self {
            Tag::Template => "red",
            Tag::TaskObject => "green",
            Tag::Clutter => "blue",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureCloud {
    pub features: Vec<Vec<f64>>,
    pub tags: Vec<Tag>,
}

impl FeatureCloud {
    pub fn of(&self, tag: Tag) -> Vec<Vec<f64>> {
        self.features
            .iter()
            .zip(&self.tags)
            .filter(|(_, t)| **t == tag)
            .map(|(f, _)| f.clone())
            .collect()
    }
}

/// Features of fresh scenes: clutter-free template scenes, task objects in
/// clutter (ids drawn uniformly from `object_ids`) and clutter-only scenes.
pub fn feature_cloud(agent: &Agent, task: Task, object_ids: &[u16], n_per_tag: usize, seed: u64) -> Result<FeatureCloud> {
    if object_ids.is_empty() {
        return Err(CoreError::Invalid("no object ids for the feature cloud".into()));
    }
    let mut rng = stream(seed, "feature-cloud");
    let mut scenes = Vec::with_capacity(3 * n_per_tag);
    let mut tags = Vec::with_capacity(3 * n_per_tag);
    for tag in [Tag::Template, Tag::TaskObject, Tag::Clutter] {
        for _ in 0..n_per_tag {
            let scene = match tag {
                Tag::Template => sample_scene(task, DomainKind::SourcePlain, None, rng.gen())?,
                Tag::TaskObject => {
                    let id = *object_ids.choose(&mut rng).unwrap();
                    sample_scene(task, DomainKind::Target, Some(id), rng.gen())?
                }
                Tag::Clutter => sample_scene(task, DomainKind::Target, None, rng.gen())?,
            };
            scenes.push(scene);
            tags.push(tag);
        }
    }
    let images: Vec<Image> = scenes.iter().map(render).collect();
    let mut features = Vec::with_capacity(images.len());
    for chunk in images.chunks(128) {
        let f = agent.features(&image_batch(chunk)?)?;
        features.extend(f.rows().map(|r| r.to_vec()));
    }
    Ok(FeatureCloud { features, tags })
}

fn check_points(points: &[Vec<f64>], min: usize) -> Result<usize> {
    if points.len() < min {
        return Err(CoreError::Invalid(format!("need at least {min} points, got {}", points.len())));
    }
    let dim = points[0].len();
    if dim == 0 || points.iter().any(|p| p.len() != dim) {
        return Err(CoreError::Invalid("points must share a nonzero dimension".into()));
    }
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(CoreError::Invalid("non-finite coordinate".into()));
    }
    Ok(dim)
}

/// Top principal components. Each axis is signed so that its largest
/// loading is positive, which makes the output independent of row order.
pub fn pca(points: &[Vec<f64>], out_dim: usize) -> Result<Vec<Vec<f64>>> {
    let dim = check_points(points, 2)?;
    let n = points.len();
    let mean: Vec<f64> = (0..dim)
        .map(|j| points.iter().map(|p| p[j]).sum::<f64>() / n as f64)
        .collect();
    let centered = DMatrix::from_fn(n, dim, |i, j| points[i][j] - mean[j]);
    let cov = centered.transpose() * &centered / n as f64;
    let eig = cov.symmetric_eigen();
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    if eig.eigenvalues[order[0]] <= 1e-12 {
        return Err(CoreError::Invalid("degenerate covariance: all points identical".into()));
    }
    let k = out_dim.min(dim);
    let mut axes = Vec::with_capacity(k);
    for &c in order.iter().take(k) {
        let mut v: Vec<f64> = eig.eigenvectors.column(c).iter().copied().collect();
        let lead = v.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
        if lead < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        axes.push(v);
    }
    Ok((0..n)
        .map(|i| {
            axes.iter()
                .map(|a| a.iter().enumerate().map(|(j, w)| w * centered[(i, j)]).sum())
                .collect()
        })
        .collect())
}

fn sq_dists(points: &[Vec<f64>]) -> Vec<f64> {
    let n = points.len();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let v: f64 = points[i].iter().zip(&points[j]).map(|(a, b)| (a - b) * (a - b)).sum();
            d[i * n + j] = v;
            d[j * n + i] = v;
        }
    }
    d
}

/// Row-conditional affinities with each row's bandwidth found by bisection
/// so its entropy matches `ln(perplexity)`.
fn conditional_p(d: &[f64], n: usize, perplexity: f64) -> Vec<f64> {
    let target = perplexity.ln();
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        let row = &d[i * n..(i + 1) * n];
        let (mut lo, mut hi, mut beta) = (0.0f64, f64::INFINITY, 1.0f64);
        let min_d = row
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, &v)| v)
            .fold(f64::INFINITY, f64::min);
        for _ in 0..100 {
            let mut sum = 0.0;
            let mut dot = 0.0;
            for j in 0..n {
                if j != i {
                    let e = (-(row[j] - min_d) * beta).exp();
                    p[i * n + j] = e;
                    sum += e;
                    dot += e * (row[j] - min_d);
                }
            }
            let entropy = sum.ln() + beta * dot / sum;
            for j in 0..n {
                p[i * n + j] /= sum;
            }
            let diff = entropy - target;
            if diff.abs() < 1e-7 {
                break;
            }
            if diff > 0.0 {
                lo = beta;
                beta = if hi.is_finite() { 0.5 * (beta + hi) } else { beta * 2.0 };
            } else {
                hi = beta;
                beta = 0.5 * (beta + lo);
            }
        }
    }
    p
}

/// Exact t-SNE to 2-D: symmetric affinities, early exaggeration for the
/// first quarter of iterations, momentum gradient descent with gains.
pub fn tsne(points: &[Vec<f64>], perplexity: f64, iterations: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    check_points(points, 10)?;
    let n = points.len();
    if !(perplexity > 0.0 && perplexity < n as f64) {
        return Err(CoreError::Invalid(format!("perplexity {perplexity} must lie in (0, {n})")));
    }
    let cond = conditional_p(&sq_dists(points), n, perplexity);
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            p[i * n + j] = ((cond[i * n + j] + cond[j * n + i]) / (2.0 * n as f64)).max(1e-12);
        }
    }
    let mut rng = stream(seed, "tsne");
    let mut y: Vec<[f64; 2]> = (0..n)
        .map(|_| {
            let a: f64 = rng.sample(StandardNormal);
            let b: f64 = rng.sample(StandardNormal);
            [1e-4 * a, 1e-4 * b]
        })
        .collect();
    let mut vel = vec![[0.0; 2]; n];
    let mut gains = vec![[1.0f64; 2]; n];
    let exaggeration_end = iterations / 4;
    let lr = (n as f64 / 12.0).max(50.0);
    let mut q = vec![0.0; n * n];
    for it in 0..iterations {
        let exag = if it < exaggeration_end { 12.0 } else { 1.0 };
        let momentum = if it < exaggeration_end { 0.5 } else { 0.8 };
        let mut z = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                let dx = y[i][0] - y[j][0];
                let dy = y[i][1] - y[j][1];
                let w = 1.0 / (1.0 + dx * dx + dy * dy);
                q[i * n + j] = w;
                q[j * n + i] = w;
                z += 2.0 * w;
            }
        }
        for i in 0..n {
            let mut g = [0.0; 2];
            for j in 0..n {
                if i != j {
                    let w = q[i * n + j];
                    let coef = 4.0 * (exag * p[i * n + j] - w / z) * w;
                    g[0] += coef * (y[i][0] - y[j][0]);
                    g[1] += coef * (y[i][1] - y[j][1]);
                }
            }
            for k in 0..2 {
                gains[i][k] = if (g[k] > 0.0) != (vel[i][k] > 0.0) {
                    gains[i][k] + 0.2
                } else {
                    (gains[i][k] * 0.8).max(0.01)
                };
                vel[i][k] = momentum * vel[i][k] - lr * gains[i][k] * g[k];
            }
        }
        for i in 0..n {
            y[i][0] += vel[i][0];
            y[i][1] += vel[i][1];
        }
        let mean = [
            y.iter().map(|p| p[0]).sum::<f64>() / n as f64,
            y.iter().map(|p| p[1]).sum::<f64>() / n as f64,
        ];
        for p in &mut y {
            p[0] -= mean[0];
            p[1] -= mean[1];
        }
    }
    if y.iter().flatten().any(|v| !v.is_finite()) {
        return Err(CoreError::Invalid("t-SNE diverged".into()));
    }
    Ok(y.into_iter().map(|p| p.to_vec()).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Projection {
    Pca,
    Tsne,
}

pub fn project_features(cloud: &FeatureCloud, method: Projection, seed: u64) -> Result<Vec<Vec<f64>>> {
    check_points(&cloud.features, 10)?;
    match method {
        Projection::Pca => pca(&cloud.features, 2),
        Projection::Tsne => tsne(&cloud.features, 30.0, 500, seed),
    }
}

/// Mean silhouette coefficient under Euclidean distance.
pub fn silhouette(points: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    check_points(points, 2)?;
    if labels.len() != points.len() {
        return Err(CoreError::Invalid("one label per point required".into()));
    }
    let classes: BTreeSet<usize> = labels.iter().copied().collect();
    if classes.len() < 2 {
        return Err(CoreError::Invalid("silhouette needs at least two clusters".into()));
    }
    let d = sq_dists(points);
    let n = points.len();
    let mut total = 0.0;
    for i in 0..n {
        let mean_to = |c: usize| {
            let (s, k) = (0..n)
                .filter(|&j| j != i && labels[j] == c)
                .fold((0.0, 0usize), |(s, k), j| (s + d[i * n + j].sqrt(), k + 1));
            (s, k)
        };
        let (s_own, k_own) = mean_to(labels[i]);
        if k_own == 0 {
            continue;
        }
        let a = s_own / k_own as f64;
        let b = classes
            .iter()
            .filter(|&&c| c != labels[i])
            .map(|&c| {
                let (s, k) = mean_to(c);
                s / k as f64
            })
            .fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        if m > 0.0 {
            total += (b - a) / m;
        }
    }
    Ok(total / n as f64)
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn median_pairwise(points: &[&[f64]]) -> f64 {
    let mut d = Vec::with_capacity(points.len() * points.len() / 2);
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            d.push(dist(points[i], points[j]));
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    d.sort_by(f64::total_cmp);
    let m = d.len() / 2;
    let med = if d.len() % 2 == 0 { 0.5 * (d[m - 1] + d[m]) } else { d[m] };
    if med > 0.0 {
        med
    } else {
        1.0
    }
}

fn mean_kernel(a: &[Vec<f64>], b: &[Vec<f64>], gamma: f64) -> f64 {
    let mut s = 0.0;
    for x in a {
        for y in b {
            let d2: f64 = x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum();
            s += (-gamma * d2).exp();
        }
    }
    s / (a.len() * b.len()) as f64
}

/// Biased squared MMD with a Gaussian kernel whose bandwidth is the median
/// pairwise distance of the pooled sample.
pub fn mmd2(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(CoreError::Invalid("mmd2 needs two nonempty samples".into()));
    }
    if a.iter().chain(b).any(|p| p.len() != a[0].len()) {
        return Err(CoreError::Invalid("samples must share a dimension".into()));
    }
    let pooled: Vec<&[f64]> = a.iter().chain(b).map(|p| p.as_slice()).collect();
    let h = median_pairwise(&pooled);
    let gamma = 1.0 / (2.0 * h * h);
    Ok(mean_kernel(a, a, gamma) + mean_kernel(b, b, gamma) - 2.0 * mean_kernel(a, b, gamma))
}

/// Held-out accuracy of a freshly trained one-hidden-layer discriminator
/// separating `a` (label 1) from `b` (label 0). Features are standardised
/// with training-split statistics; 30% of each set is held out.
pub fn probe_accuracy(a: &[Vec<f64>], b: &[Vec<f64>], seed: u64) -> Result<f64> {
    if a.len() < 4 || b.len() < 4 {
        return Err(CoreError::Invalid("probe needs at least 4 points per domain".into()));
    }
    let dim = a[0].len();
    let mut rng = stream(seed, "probe");
    let split = |set: &[Vec<f64>], rng: &mut rand_chacha::ChaCha8Rng| {
        let mut idx: Vec<usize> = (0..set.len()).collect();
        idx.shuffle(rng);
        let k = (set.len() as f64 * 0.7).round() as usize;
        let (tr, te) = idx.split_at(k);
        (
            tr.iter().map(|&i| set[i].clone()).collect::<Vec<_>>(),
            te.iter().map(|&i| set[i].clone()).collect::<Vec<_>>(),
        )
    };
    let (a_tr, a_te) = split(a, &mut rng);
    let (b_tr, b_te) = split(b, &mut rng);
    let train: Vec<&Vec<f64>> = a_tr.iter().chain(&b_tr).collect();
    let mean: Vec<f64> = (0..dim)
        .map(|j| train.iter().map(|p| p[j]).sum::<f64>() / train.len() as f64)
        .collect();
    let std: Vec<f64> = (0..dim)
        .map(|j| {
            let v = train.iter().map(|p| (p[j] - mean[j]).powi(2)).sum::<f64>() / train.len() as f64;
            v.sqrt().max(1e-8)
        })
        .collect();
    let norm = |p: &Vec<f64>| -> Vec<f64> { p.iter().enumerate().map(|(j, v)| (v - mean[j]) / std[j]).collect() };
    let rows = |pos: &[Vec<f64>], neg: &[Vec<f64>]| -> Result<(Batch, Vec<f64>)> {
        let r: Vec<Vec<f64>> = pos.iter().chain(neg).map(norm).collect();
        let labels = std::iter::repeat(1.0).take(pos.len()).chain(std::iter::repeat(0.0).take(neg.len())).collect();
        Ok((Batch::from_rows(&r)?, labels))
    };
    let (x_tr, y_tr) = rows(&a_tr, &b_tr)?;
    let (x_te, y_te) = rows(&a_te, &b_te)?;
    let mut net = arch::logit_head(dim, 1, &mut rng)?;
    let mut opt = Adam::new(1e-3);
    for _ in 0..300 {
        let (logits, trace) = net.forward_trace(&x_tr)?;
        let (_, g) = bce_mean(logits.data(), &y_tr)?;
        let (grads, _) = net.backward_trace(&trace, &Batch::new(x_tr.n(), vec![1], g)?)?;
        opt.step(net.params_mut(), &grads)?;
    }
    let logits = net.forward_batch(&x_te)?;
    let correct = logits
        .data()
        .iter()
        .zip(&y_te)
        .filter(|(l, y)| (**l > 0.0) == (**y > 0.5))
        .count();
    Ok(correct as f64 / y_te.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DomainGap {
    pub mmd2: f64,
    pub probe_acc: f64,
}

pub fn domain_gap(source: &[Vec<f64>], target: &[Vec<f64>], seed: u64) -> Result<DomainGap> {
    Ok(DomainGap {
        mmd2: mmd2(source, target)?,
        probe_acc: probe_accuracy(source, target, seed)?,
    })
}

pub fn projection_csv(points: &[Vec<f64>], tags: &[Tag]) -> String {
    let mut s = String::from("x,y,tag\n");
    for (p, t) in points.iter().zip(tags) {
        let _ = writeln!(s, "{:.6},{:.6},{}", p[0], p[1], t.name());
    }
    s
}

/// Scatter plot of a 2-D projection, coloured by tag.
pub fn projection_svg(points: &[Vec<f64>], tags: &[Tag], title: &str) -> String {
    const SIZE: f64 = 480.0;
    const PAD: f64 = 20.0;
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in points {
        for k in 0..2 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    let scale = |v: f64, k: usize| {
        let span = (hi[k] - lo[k]).max(1e-12);
        PAD + (v - lo[k]) / span * (SIZE - 2.0 * PAD)
    };
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SIZE}\" height=\"{}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n<text x=\"{PAD}\" y=\"14\" font-size=\"12\">{title}</text>\n",
        SIZE + 20.0
    );
    for (p, t) in points.iter().zip(tags) {
        let _ = writeln!(
            s,
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"2.5\" fill=\"{}\" fill-opacity=\"0.7\"/>",
            scale(p[0], 0),
            20.0 + SIZE - scale(p[1], 1),
            t.color()
        );
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(variant: &str, id: u16, rate: f64) -> TrialReport {
        TrialReport::new(variant, Task::Picking, id, vec![rate]).unwrap()
    }

    #[test]
    fn table_orders_columns_and_averages_rows() {
        let runs = vec![
            ("ADDA".to_string(), vec![report("ADDA", 1, 0.5), report("ADDA", 2, 0.0)]),
            ("FULL".to_string(), vec![report("FULL", 1, 1.0), report("FULL", 2, 0.5)]),
        ];
        let t = make_tables("picking", &runs).unwrap();
        assert_eq!(t.columns, ["FULL", "ADDA"]);
        assert!((t.averages[0] - 0.75).abs() < 1e-9);
        assert!((t.averages[1] - 0.25).abs() < 1e-9);
        assert_eq!(t.winners().1, "FULL");
        assert!(t.to_csv().starts_with("object,FULL,ADDA\n1,1.0000,0.5000\n"));
    }

    #[test]
    fn single_cell_table() {
        let t = make_tables("x", &[("FULL".into(), vec![report("FULL", 3, 0.5)])]).unwrap();
        assert_eq!(t.cells, vec![vec![0.5]]);
        assert_eq!(t.averages, vec![0.5]);
    }

    #[test]
    fn mismatched_objects_rejected() {
        let runs = vec![
            ("FULL".to_string(), vec![report("FULL", 1, 1.0)]),
            ("ADDA".to_string(), vec![report("ADDA", 2, 1.0)]),
        ];
        assert!(make_tables("x", &runs).is_err());
    }

    #[test]
    fn silhouette_of_two_points_per_far_cluster_is_near_one() {
        let pts = vec![vec![0.0, 0.0], vec![0.0, 0.1], vec![10.0, 0.0], vec![10.0, 0.1]];
        let s = silhouette(&pts, &[0, 0, 1, 1]).unwrap();
        assert!((s - (1.0 - 0.1 / 10.0005)).abs() < 1e-3, "{s}");
    }

    #[test]
    fn probe_separates_far_blobs() {
        let mut rng = stream(1, "blobs");
        let blob = |c: f64, rng: &mut rand_chacha::ChaCha8Rng| -> Vec<Vec<f64>> {
            (0..60)
                .map(|_| (0..8).map(|_| c + rng.sample::<f64, _>(StandardNormal)).collect())
                .collect()
        };
        let a = blob(0.0, &mut rng);
        let b = blob(10.0, &mut rng);
        assert!(probe_accuracy(&a, &b, 3).unwrap() >= 0.95);
    }
}
