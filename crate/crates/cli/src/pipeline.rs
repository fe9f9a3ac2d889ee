//! The staged pipeline. Every stage reads its inputs from the run directory
//! and writes its outputs there, so a resumed run sees exactly the bytes an
//! uninterrupted one would.

use std::fmt::Write as _;
use std::fs::File;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use clutterbridge::datasets::{gen_target, record_source, DatasetBundle};
use clutterbridge::eval::{
    average_rate, domain_gap, feature_cloud, make_tables, project_features, projection_csv, projection_svg, run_trials,
    DomainGap, Projection, Tag, TrialReport,
};
use clutterbridge::policy::{curve_csv, train_policy, Agent};
use clutterbridge::rng::derive_seed;
use clutterbridge::trajgen::{train_vae, DemoCorpus, TrajVae};
use clutterbridge::transfer::{build_variant_nets, classifier_accuracy, transfer_train, TransferData};
use clutterbridge::{hash_str, CoreError};
use clutterbridge_numcore::Checkpoint;
use clutterbridge_sim::Task;

use crate::config::{ProjectionChoice, RunConfig};
use crate::manifest::{sha256_file, Artifact, Manifest, Record, Status};
use crate::CliError;

pub const STAGES: [&str; 8] = [
    "gen-demos",
    "train-vae",
    "train-rl",
    "record-source",
    "gen-target",
    "transfer",
    "eval",
    "report",
];

pub const CONFIG_FILE: &str = "config.txt";
pub const LOCK_FILE: &str = ".lock";
pub const TRIALS_SEEN: &str = "trials_seen.csv";
pub const TRIALS_UNSEEN: &str = "trials_unseen.csv";

#[derive(Debug, Clone, Default)]
pub struct Options {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    /// Rerun this stage and everything after it regardless of the manifest.
    pub force: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageOutcome {
    pub stage: String,
    pub skipped: bool,
}

/// Holds the run-directory lock for its lifetime.
pub struct RunLock {
    _file: File,
}

impl RunLock {
    pub fn acquire(dir: &Path) -> Result<RunLock, CliError> {
        let path = dir.join(LOCK_FILE);
        let file = File::create(&path).map_err(|e| CliError::io(&path, e))?;
        match file.try_lock() {
            Ok(()) => Ok(RunLock { _file: file }),
            Err(std::fs::TryLockError::WouldBlock) => Err(CliError::Locked(dir.display().to_string())),
            Err(std::fs::TryLockError::Error(e)) => Err(CliError::io(&path, e)),
        }
    }
}

pub fn default_out(cfg: &RunConfig) -> PathBuf {
    PathBuf::from("runs").join(format!("{}-{}-seed{}", cfg.task.name(), cfg.variant.name(), cfg.seed))
}

/// Settings that feed each stage; together with the previous stage's hash
/// they determine whether the stage is current.
fn stage_inputs(cfg: &RunConfig, stage: &str) -> String {
    match stage {
        "gen-demos" => cfg.keys_with(&["run.seed", "demos."]),
        "train-vae" => cfg.keys_with(&["vae."]),
        "train-rl" => cfg.keys_with(&["run.task", "rl."]),
        "record-source" => format!(
            "{}source.extrainfo = {}\n",
            cfg.keys_with(&["datasets.source_n", "datasets.max_replay_failure"]),
            cfg.variant.uses_extrainfo()
        ),
        "gen-target" => cfg.keys_with(&["datasets.per_object", "datasets.clutter_only"]),
        "transfer" => cfg.keys_with(&["run.variant", "transfer."]),
        "eval" => cfg.keys_with(&["eval."]),
        _ => String::new(),
    }
}

/// Chained per-stage config hashes in stage order.
pub fn stage_hashes(cfg: &RunConfig) -> Vec<String> {
    let mut prev = String::new();
    STAGES
        .iter()
        .map(|stage| {
            prev = hash_str(&format!("{prev}\n[{stage}]\n{}", stage_inputs(cfg, stage)));
            prev.clone()
        })
        .collect()
}

fn write_atomic(dir: &Path, name: &str, bytes: &[u8]) -> Result<(), CliError> {
    let path = dir.join(name);
    let tmp = dir.join(format!(".{name}.tmp"));
    std::fs::write(&tmp, bytes).map_err(|e| CliError::io(&tmp, e))?;
    std::fs::rename(&tmp, &path).map_err(|e| CliError::io(&path, e))
}

pub fn run_pipeline(config_path: &Path, opts: &Options) -> Result<Vec<StageOutcome>, CliError> {
    let mut cfg = RunConfig::load(config_path)?;
    if let Some(seed) = opts.seed {
        cfg.seed = seed;
    }
    let force_from = match &opts.force {
        Some(name) => Some(STAGES.iter().position(|s| s == name).ok_or_else(|| {
            CliError::Config(format!("unknown stage {name}; stages are {}", STAGES.join(", ")))
        })?),
        None => None,
    };
    let dir = opts.out.clone().or_else(|| cfg.out.clone()).unwrap_or_else(|| default_out(&cfg));
    std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    let _lock = RunLock::acquire(&dir)?;
    write_atomic(&dir, CONFIG_FILE, cfg.to_text().as_bytes())?;
    let mut manifest = Manifest::open(&dir)?;
    let hashes = stage_hashes(&cfg);
    let mut outcomes = Vec::new();
    for (i, stage) in STAGES.iter().enumerate() {
        let forced = force_from.is_some_and(|f| i >= f);
        if !forced && manifest.is_current(stage, &hashes[i], &dir) {
            log::info!("{stage}: up to date");
            outcomes.push(StageOutcome {
                stage: stage.to_string(),
                skipped: true,
            });
            continue;
        }
        log::info!("{stage}: running");
        let started = Instant::now();
        let result = run_stage(stage, &cfg, &dir, &manifest);
        let seconds = started.elapsed().as_secs_f64();
        match result {
            Ok(files) => {
                let mut artifacts = Vec::with_capacity(files.len());
                for f in files {
                    let path = dir.join(&f);
                    artifacts.push(Artifact {
                        sha256: sha256_file(&path).map_err(|e| CliError::io(&path, e))?,
                        path: f,
                    });
                }
                manifest.append(Record {
                    stage: stage.to_string(),
                    status: Status::Done,
                    config_hash: hashes[i].clone(),
                    artifacts,
                    seconds,
                    error: None,
                })?;
                log::info!("{stage}: done in {seconds:.1}s");
                outcomes.push(StageOutcome {
                    stage: stage.to_string(),
                    skipped: false,
                });
            }
            Err(e) => {
                manifest.append(Record {
                    stage: stage.to_string(),
                    status: Status::Failed,
                    config_hash: hashes[i].clone(),
                    artifacts: vec![],
                    seconds,
                    error: Some(e.message()),
                })?;
                return Err(CliError::Stage(format!("stage {stage} failed: {}", e.message())));
            }
        }
    }
    Ok(outcomes)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct VaeSummary {
    holdout_mse: f64,
    param_hash: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RlSummary {
    final_eval: f64,
    warnings: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TransferSummary {
    variant: String,
    classifier_accuracy: Option<f64>,
    notices: Vec<String>,
    param_hash: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct EvalSummary {
    seen_average: f64,
    unseen_average: Option<f64>,
    pre_mmd2: f64,
    pre_probe: f64,
    post_mmd2: f64,
    post_probe: f64,
}

fn json<T: Serialize>(v: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(v).expect("summary serializes");
    s.push('\n');
    s.into_bytes()
}

fn read_json<T: for<'a> Deserialize<'a>>(dir: &Path, name: &str) -> Result<T, CliError> {
    let path = dir.join(name);
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Stage(format!("{}: {e}", path.display())))
}

fn load_ckpt(dir: &Path, name: &str) -> Result<Checkpoint, CliError> {
    Checkpoint::load(&dir.join(name)).map_err(|e| CliError::Stage(format!("{name}: {e}")))
}

fn load_vae(dir: &Path) -> Result<TrajVae, CliError> {
    Ok(TrajVae::from_checkpoint(&load_ckpt(dir, "vae.ckpt")?)?)
}

fn load_agent(dir: &Path, name: &str) -> Result<Agent, CliError> {
    Ok(Agent::from_checkpoint(&load_ckpt(dir, name)?)?)
}

fn load_bundle(dir: &Path, name: &str) -> Result<DatasetBundle, CliError> {
    Ok(DatasetBundle::load(&dir.join(name))?)
}

fn run_stage(stage: &str, cfg: &RunConfig, dir: &Path, manifest: &Manifest) -> Result<Vec<String>, CliError> {
    let seed = derive_seed(cfg.seed, stage);
    let task = cfg.task;
    let files: &[&str] = match stage {
        "gen-demos" => {
            let demos = DemoCorpus::generate(cfg.demos.count, cfg.demos.noise, seed)?;
            write_atomic(dir, "demos.bin", &demos.to_bytes())?;
            &["demos.bin"]
        }
        "train-vae" => {
            let demos = DemoCorpus::load(&dir.join("demos.bin"))?;
            let (vae, report) = train_vae(&demos.trajectories, &cfg.vae, seed)?;
            let mut csv = String::from("epoch,loss\n");
            for (i, l) in report.epoch_losses.iter().enumerate() {
                let _ = writeln!(csv, "{i},{l:.9}");
            }
            write_atomic(dir, "vae_losses.csv", csv.as_bytes())?;
            write_atomic(dir, "vae.ckpt", &vae.to_checkpoint().to_bytes())?;
            let summary = VaeSummary {
                holdout_mse: report.holdout_mse,
                param_hash: vae.param_hash(),
            };
            write_atomic(dir, "vae.json", &json(&summary))?;
            &["vae.ckpt", "vae_losses.csv", "vae.json"]
        }
        "train-rl" => {
            let vae = load_vae(dir)?;
            let run = match train_policy(&vae, &cfg.rl, seed) {
                Ok(run) => run,
                Err(CoreError::NotConverged { curve, threshold, achieved }) => {
                    write_atomic(dir, "rl_curve.csv", curve_csv(&curve).as_bytes())?;
                    return Err(CliError::Stage(format!(
                        "policy reached {achieved:.3} < {threshold} (curve in rl_curve.csv)"
                    )));
                }
                Err(e) => return Err(e.into()),
            };
            for w in &run.warnings {
                log::warn!("{w}");
            }
            write_atomic(dir, "rl_curve.csv", curve_csv(&run.curve).as_bytes())?;
            write_atomic(dir, "rl.ckpt", &run.agent.to_checkpoint().to_bytes())?;
            let summary = RlSummary {
                final_eval: run.final_eval,
                warnings: run.warnings,
            };
            write_atomic(dir, "rl.json", &json(&summary))?;
            &["rl.ckpt", "rl_curve.csv", "rl.json"]
        }
        "record-source" => {
            let vae = load_vae(dir)?;
            let agent = load_agent(dir, "rl.ckpt")?;
            let source = record_source(
                &agent,
                &vae,
                task,
                cfg.datasets.source_n,
                cfg.variant.uses_extrainfo(),
                cfg.datasets.max_replay_failure,
                seed,
            )?;
            let bundle = DatasetBundle {
                source,
                target: vec![],
                seen_ids: task.seen_ids(),
                unseen_ids: task.unseen_ids(),
            };
            bundle.validate()?;
            write_atomic(dir, "source.bin", &bundle.to_bytes())?;
            &["source.bin"]
        }
        "gen-target" => {
            let mut bundle = load_bundle(dir, "source.bin")?;
            bundle.target = gen_target(
                task,
                cfg.datasets.per_object,
                cfg.datasets.clutter_only,
                &bundle.seen_ids,
                seed,
            )?;
            bundle.validate()?;
            write_atomic(dir, "bundle.bin", &bundle.to_bytes())?;
            &["bundle.bin"]
        }
        "transfer" => {
            let bundle = load_bundle(dir, "bundle.bin")?;
            let rl = load_agent(dir, "rl.ckpt")?;
            let t = &cfg.transfer;
            let data = TransferData::from_bundle(&bundle, t.holdout_frac, seed)?;
            let (agent, aux, notices) = build_variant_nets(cfg.variant, &rl, seed)?;
            for n in &notices {
                log::warn!("{n}");
            }
            let out = transfer_train(&data, agent, aux, t, seed)?;
            let accuracy = if t.weights.classifier > 0.0 && !data.holdout_images.is_empty() {
                Some(classifier_accuracy(
                    &out.agent,
                    &out.aux.classifier,
                    &data.holdout_images,
                    &data.holdout_labels,
                )?)
            } else {
                None
            };
            write_atomic(dir, "transfer_log.csv", out.log.to_csv().as_bytes())?;
            write_atomic(dir, "deploy.ckpt", &out.agent.to_checkpoint().to_bytes())?;
            let mut aux = clutterbridge::nets::export("discriminator", &out.aux.discriminator);
            aux.extend(clutterbridge::nets::export("classifier", &out.aux.classifier));
            write_atomic(dir, "aux.ckpt", &Checkpoint::new(aux).to_bytes())?;
            let summary = TransferSummary {
                variant: cfg.variant.name().to_string(),
                classifier_accuracy: accuracy,
                notices,
                param_hash: out.agent.param_hash(),
            };
            write_atomic(dir, "transfer.json", &json(&summary))?;
            &["deploy.ckpt", "aux.ckpt", "transfer_log.csv", "transfer.json"]
        }
        "eval" => return eval_stage(cfg, dir, seed),
        "report" => {
            write_atomic(dir, "report.txt", report_text(cfg, dir, manifest)?.as_bytes())?;
            &["report.txt"]
        }
        other => return Err(CliError::Stage(format!("unknown stage {other}"))),
    };
    Ok(files.iter().map(|s| s.to_string()).collect())
}

/// One CSV row per trial so runs can be merged later.
pub fn trials_csv(reports: &[TrialReport]) -> String {
    let mut s = String::from("variant,task,object,trial,score\n");
    for r in reports {
        for (i, v) in r.scores.iter().enumerate() {
            let _ = writeln!(s, "{},{},{},{i},{v:.9}", r.variant, r.task.name(), r.object_id);
        }
    }
    s
}

pub fn parse_trials_csv(text: &str) -> Result<Vec<TrialReport>, CliError> {
    let bad = |no: usize| CliError::Stage(format!("malformed trials csv at line {}", no + 1));
    let mut out: Vec<TrialReport> = Vec::new();
    let mut current: Option<(String, Task, u16, Vec<f64>)> = None;
    let flush = |c: Option<(String, Task, u16, Vec<f64>)>, out: &mut Vec<TrialReport>| -> Result<(), CliError> {
        if let Some((v, t, id, scores)) = c {
            out.push(TrialReport::new(&v, t, id, scores)?);
        }
        Ok(())
    };
    for (no, line) in text.lines().enumerate().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(bad(no));
        }
        let task: Task = f[1].parse().map_err(|_| bad(no))?;
        let id: u16 = f[2].parse().map_err(|_| bad(no))?;
        let score: f64 = f[4].parse().map_err(|_| bad(no))?;
        match &mut current {
            Some((v, t, cid, scores)) if v == f[0] && *t == task && *cid == id => scores.push(score),
            _ => {
                flush(current.take(), &mut out)?;
                current = Some((f[0].to_string(), task, id, vec![score]));
            }
        }
    }
    flush(current, &mut out)?;
    Ok(out)
}

fn trials_parallel(
    agent: &Agent,
    vae: &TrajVae,
    variant: &str,
    task: Task,
    ids: &[u16],
    n: usize,
    seed: u64,
) -> Result<Vec<TrialReport>, CliError> {
    let per_id: Vec<_> = ids
        .par_iter()
        .map(|&id| run_trials(agent, vae, variant, task, &[id], n, seed))
        .collect();
    let mut out = Vec::with_capacity(ids.len());
    for r in per_id {
        out.extend(r?);
    }
    Ok(out)
}

fn eval_stage(cfg: &RunConfig, dir: &Path, seed: u64) -> Result<Vec<String>, CliError> {
    let task = cfg.task;
    let vae = load_vae(dir)?;
    let agent = load_agent(dir, "deploy.ckpt")?;
    let rl = load_agent(dir, "rl.ckpt")?;
    let bundle = load_bundle(dir, "bundle.bin")?;
    let name = cfg.variant.name();
    let mut files = vec![];

    let seen = trials_parallel(&agent, &vae, name, task, &bundle.seen_ids, cfg.eval.n, seed)?;
    write_atomic(dir, TRIALS_SEEN, trials_csv(&seen).as_bytes())?;
    let table = make_tables("seen objects", &[(name.to_string(), seen.clone())])?;
    write_atomic(dir, "table_seen.csv", table.to_csv().as_bytes())?;
    files.extend([TRIALS_SEEN, "table_seen.csv"]);

    let mut unseen_average = None;
    if cfg.eval.unseen && !bundle.unseen_ids.is_empty() {
        if let Some(id) = bundle.unseen_ids.iter().find(|id| bundle.seen_ids.contains(id)) {
            return Err(CliError::Stage(format!("object {id} is listed as both seen and unseen")));
        }
        let unseen = trials_parallel(&agent, &vae, name, task, &bundle.unseen_ids, cfg.eval.n, seed)?;
        write_atomic(dir, TRIALS_UNSEEN, trials_csv(&unseen).as_bytes())?;
        let table = make_tables("unseen objects", &[(name.to_string(), unseen.clone())])?;
        write_atomic(dir, "table_unseen.csv", table.to_csv().as_bytes())?;
        files.extend([TRIALS_UNSEEN, "table_unseen.csv"]);
        unseen_average = Some(average_rate(&unseen));
    }

    let gap = |a: &Agent| -> Result<(DomainGap, clutterbridge::eval::FeatureCloud), CliError> {
        let cloud = feature_cloud(a, task, &bundle.seen_ids, cfg.eval.cloud_n, seed)?;
        let g = domain_gap(&cloud.of(Tag::Template), &cloud.of(Tag::TaskObject), seed)?;
        Ok((g, cloud))
    };
    let (pre, _) = gap(&rl)?;
    let (post, cloud) = gap(&agent)?;
    let csv = format!(
        "phase,mmd2,probe_acc\npre,{:.9},{:.9}\npost,{:.9},{:.9}\n",
        pre.mmd2, pre.probe_acc, post.mmd2, post.probe_acc
    );
    write_atomic(dir, "domain_gap.csv", csv.as_bytes())?;
    files.push("domain_gap.csv");

    let method = match cfg.eval.projection {
        ProjectionChoice::None => None,
        ProjectionChoice::Pca => Some((Projection::Pca, "pca")),
        ProjectionChoice::Tsne => Some((Projection::Tsne, "t-SNE")),
    };
    if let Some((method, label)) = method {
        let points = project_features(&cloud, method, seed)?;
        write_atomic(dir, "projection.csv", projection_csv(&points, &cloud.tags).as_bytes())?;
        let title = format!("{name} features ({label})");
        write_atomic(dir, "projection.svg", projection_svg(&points, &cloud.tags, &title).as_bytes())?;
        files.extend(["projection.csv", "projection.svg"]);
    }

    let summary = EvalSummary {
        seen_average: average_rate(&seen),
        unseen_average,
        pre_mmd2: pre.mmd2,
        pre_probe: pre.probe_acc,
        post_mmd2: post.mmd2,
        post_probe: post.probe_acc,
    };
    write_atomic(dir, "eval.json", &json(&summary))?;
    files.push("eval.json");
    Ok(files.into_iter().map(String::from).collect())
}

fn report_text(cfg: &RunConfig, dir: &Path, manifest: &Manifest) -> Result<String, CliError> {
    let vae: VaeSummary = read_json(dir, "vae.json")?;
    let rl: RlSummary = read_json(dir, "rl.json")?;
    let tr: TransferSummary = read_json(dir, "transfer.json")?;
    let ev: EvalSummary = read_json(dir, "eval.json")?;
    let mut s = String::new();
    let _ = writeln!(s, "run: task {} variant {} seed {}", cfg.task.name(), cfg.variant.name(), cfg.seed);
    let _ = writeln!(s, "\ntrajectory VAE held-out MSE {:.3e} (params {})", vae.holdout_mse, &vae.param_hash[..16]);
    let _ = writeln!(s, "template policy mean-mode success {:.3}", rl.final_eval);
    for w in &rl.warnings {
        let _ = writeln!(s, "  warning: {w}");
    }
    match tr.classifier_accuracy {
        Some(a) => {
            let _ = writeln!(s, "clutter classifier held-out accuracy {a:.3}");
        }
        None => {
            let _ = writeln!(s, "clutter classifier not trained for {}", tr.variant);
        }
    }
    for n in &tr.notices {
        let _ = writeln!(s, "  note: {n}");
    }
    let _ = writeln!(s, "\nseen-object success {:.3}", ev.seen_average);
    if let Some(u) = ev.unseen_average {
        let _ = writeln!(s, "unseen-object success {u:.3}");
    }
    let _ = writeln!(
        s,
        "template vs task-object features: mmd2 {:.4} -> {:.4}, probe accuracy {:.3} -> {:.3}",
        ev.pre_mmd2, ev.post_mmd2, ev.pre_probe, ev.post_probe
    );
    for name in ["table_seen.csv", "table_unseen.csv"] {
        let path = dir.join(name);
        if path.exists() {
            let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
            let _ = write!(s, "\n{name}\n{text}");
        }
    }
    let _ = writeln!(s, "\nartifacts");
    for stage in &STAGES[..STAGES.len() - 1] {
        if let Some(r) = manifest.latest(stage) {
            for a in &r.artifacts {
                let _ = writeln!(s, "  {stage:<14} {:<18} {}", a.path, a.sha256);
            }
        }
    }
    Ok(s)
}
