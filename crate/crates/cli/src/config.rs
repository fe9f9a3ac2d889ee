//! Line-oriented run configuration: `section.key = value`, `#` comments.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clutterbridge::policy::RlConfig;
use clutterbridge::trajgen::VaeConfig;
use clutterbridge::transfer::{LossWeights, TransferConfig, Variant};
use clutterbridge_sim::Task;

use crate::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct DemoSection {
    pub count: usize,
    pub noise: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSection {
    pub source_n: usize,
    pub per_object: usize,
    pub clutter_only: usize,
    /// Largest tolerated fraction of failed source replays.
    pub max_replay_failure: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProjectionChoice {
    None,
    Pca,
    Tsne,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSection {
    pub n: usize,
    pub unseen: bool,
    /// Fresh scenes per tag for the feature cloud and domain-gap probe.
    pub cloud_n: usize,
    pub projection: ProjectionChoice,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub task: Task,
    pub variant: Variant,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub demos: DemoSection,
    pub vae: VaeConfig,
    pub rl: RlConfig,
    pub datasets: DatasetSection,
    pub transfer: TransferConfig,
    pub eval: EvalSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            task: Task::Picking,
            variant: Variant::Full,
            seed: 0,
            out: None,
            demos: DemoSection {
                count: 2000,
                noise: 0.003,
            },
            vae: VaeConfig::default(),
            rl: RlConfig::default(),
            datasets: DatasetSection {
                source_n: 500,
                per_object: 70,
                clutter_only: 1000,
                max_replay_failure: clutterbridge::datasets::MAX_REPLAY_FAILURE,
            },
            transfer: TransferConfig::default(),
            eval: EvalSection {
                n: 10,
                unseen: true,
                cloud_n: 200,
                projection: ProjectionChoice::Tsne,
            },
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, CliError> {
    value
        .parse()
        .map_err(|_| CliError::Config(format!("{key}: cannot parse {value:?}")))
}

fn optional<T: FromStr>(key: &str, value: &str) -> Result<Option<T>, CliError> {
    if value == "none" {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        RunConfig::parse(&text)
    }

    pub fn parse(text: &str) -> Result<RunConfig, CliError> {
        let mut cfg = RunConfig::default();
        let mut seen = BTreeSet::new();
        let mut weights: [Option<f64>; 3] = [None; 3];
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("line {}: expected `section.key = value`", no + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(CliError::Config(format!("line {}: duplicate key {key}", no + 1)));
            }
            match key {
                "transfer.lambda_task" => weights[0] = Some(parse(key, value)?),
                "transfer.lambda_c" => weights[1] = Some(parse(key, value)?),
                "transfer.lambda_d" => weights[2] = Some(parse(key, value)?),
                _ => {}
            }
            cfg.set(key, value)
                .map_err(|e| CliError::Config(format!("line {}: {}", no + 1, e.message())))?;
        }
        let mask = cfg.variant.weights();
        cfg.transfer.weights = LossWeights::new(
            weights[0].unwrap_or(mask.task),
            if mask.classifier == 0.0 { 0.0 } else { weights[1].unwrap_or(mask.classifier) },
            if mask.discriminator == 0.0 { 0.0 } else { weights[2].unwrap_or(mask.discriminator) },
        );
        cfg.rl.task = cfg.task;
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, v: &str) -> Result<(), CliError> {
        match key {
            "run.task" => {
                self.task = v.parse().map_err(|e: clutterbridge_sim::SimError| CliError::Config(e.to_string()))?
            }
            "run.variant" => self.variant = v.parse().map_err(|e: clutterbridge::CoreError| CliError::Config(e.to_string()))?,
            "run.seed" => self.seed = parse(key, v)?,
            "run.out" => self.out = Some(PathBuf::from(v)),
            "demos.count" => self.demos.count = parse(key, v)?,
            "demos.noise" => self.demos.noise = parse(key, v)?,
            "vae.epochs" => self.vae.epochs = parse(key, v)?,
            "vae.batch" => self.vae.batch = parse(key, v)?,
            "vae.lr" => self.vae.lr = parse(key, v)?,
            "vae.beta_kl" => self.vae.beta_kl = parse(key, v)?,
            "vae.warmup_frac" => self.vae.warmup_frac = parse(key, v)?,
            "vae.holdout_frac" => self.vae.holdout_frac = parse(key, v)?,
            "vae.hidden" => self.vae.hidden = parse(key, v)?,
            "vae.min_demos" => self.vae.min_demos = parse(key, v)?,
            "rl.iterations" => self.rl.iterations = parse(key, v)?,
            "rl.batch" => self.rl.batch = parse(key, v)?,
            "rl.minibatch" => self.rl.minibatch = parse(key, v)?,
            "rl.epochs" => self.rl.epochs = parse(key, v)?,
            "rl.clip" => self.rl.clip = parse(key, v)?,
            "rl.lr" => self.rl.lr = parse(key, v)?,
            "rl.lr_std" => self.rl.lr_std = parse(key, v)?,
            "rl.init_log_std" => self.rl.init_log_std = parse(key, v)?,
            "rl.sigma_floor" => self.rl.sigma_floor = optional(key, v)?,
            "rl.eval_scenes" => self.rl.eval_scenes = parse(key, v)?,
            "rl.eval_every" => self.rl.eval_every = parse(key, v)?,
            "rl.target" => self.rl.target = parse(key, v)?,
            "rl.early_stop" => self.rl.early_stop = optional(key, v)?,
            "rl.stop_at" => self.rl.stop_at = parse(key, v)?,
            "datasets.source_n" => self.datasets.source_n = parse(key, v)?,
            "datasets.per_object" => self.datasets.per_object = parse(key, v)?,
            "datasets.clutter_only" => self.datasets.clutter_only = parse(key, v)?,
            "datasets.max_replay_failure" => self.datasets.max_replay_failure = parse(key, v)?,
            "transfer.steps" => self.transfer.steps = parse(key, v)?,
            "transfer.batch" => self.transfer.batch = parse(key, v)?,
            "transfer.lr_p" => self.transfer.lr_p = parse(key, v)?,
            "transfer.lr_pi" => self.transfer.lr_pi = parse(key, v)?,
            "transfer.lr_d" => self.transfer.lr_d = parse(key, v)?,
            "transfer.lr_c" => self.transfer.lr_c = parse(key, v)?,
            "transfer.d_steps" => self.transfer.d_steps = parse(key, v)?,
            "transfer.holdout_frac" => self.transfer.holdout_frac = parse(key, v)?,
            "transfer.lambda_task" | "transfer.lambda_c" | "transfer.lambda_d" => {}
            "eval.n" => self.eval.n = parse(key, v)?,
            "eval.unseen" => self.eval.unseen = parse(key, v)?,
            "eval.cloud_n" => self.eval.cloud_n = parse(key, v)?,
            "eval.projection" => {
                self.eval.projection = match v {
                    "none" => ProjectionChoice::None,
                    "pca" => ProjectionChoice::Pca,
                    "tsne" => ProjectionChoice::Tsne,
                    _ => return Err(CliError::Config(format!("eval.projection: expected none, pca or tsne, got {v:?}"))),
                }
            }
            _ => return Err(CliError::Config(format!("unknown key {key}"))),
        }
        Ok(())
    }

    fn validate(&self) -> Result<(), CliError> {
        let t = &self.transfer;
        let positive = [t.lr_p, t.lr_pi, t.lr_d, t.lr_c, self.rl.lr, self.vae.lr];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(CliError::Config("learning rates must be positive".into()));
        }
        let w = t.weights;
        if [w.task, w.classifier, w.discriminator].iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(CliError::Config("loss weights must be nonnegative".into()));
        }
        if t.steps == 0 || t.batch == 0 || self.eval.n == 0 || self.rl.batch == 0 {
            return Err(CliError::Config("transfer.steps, transfer.batch, rl.batch and eval.n must be at least 1".into()));
        }
        if self.datasets.source_n == 0 {
            return Err(CliError::Config("datasets.source_n must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&t.holdout_frac) {
            return Err(CliError::Config("transfer.holdout_frac must lie in [0, 1)".into()));
        }
        Ok(())
    }

    /// Canonical text of the settings, one `section.key = value` per line.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| s.push_str(&format!("{k} = {v}\n"));
        let opt = |o: Option<String>| o.unwrap_or_else(|| "none".into());
        put("run.task", self.task.name().into());
        put("run.variant", self.variant.name().into());
        put("run.seed", self.seed.to_string());
        put("demos.count", self.demos.count.to_string());
        put("demos.noise", self.demos.noise.to_string());
        let v = &self.vae;
        put("vae.epochs", v.epochs.to_string());
        put("vae.batch", v.batch.to_string());
        put("vae.lr", v.lr.to_string());
        put("vae.beta_kl", v.beta_kl.to_string());
        put("vae.warmup_frac", v.warmup_frac.to_string());
        put("vae.holdout_frac", v.holdout_frac.to_string());
        put("vae.hidden", v.hidden.to_string());
        put("vae.min_demos", v.min_demos.to_string());
        let r = &self.rl;
        put("rl.iterations", r.iterations.to_string());
        put("rl.batch", r.batch.to_string());
        put("rl.minibatch", r.minibatch.to_string());
        put("rl.epochs", r.epochs.to_string());
        put("rl.clip", r.clip.to_string());
        put("rl.lr", r.lr.to_string());
        put("rl.lr_std", r.lr_std.to_string());
        put("rl.init_log_std", r.init_log_std.to_string());
        put("rl.sigma_floor", opt(r.sigma_floor.map(|f| f.to_string())));
        put("rl.eval_scenes", r.eval_scenes.to_string());
        put("rl.eval_every", r.eval_every.to_string());
        put("rl.target", r.target.to_string());
        put("rl.early_stop", opt(r.early_stop.map(|f| f.to_string())));
        put("rl.stop_at", r.stop_at.to_string());
        let d = &self.datasets;
        put("datasets.source_n", d.source_n.to_string());
        put("datasets.per_object", d.per_object.to_string());
        put("datasets.clutter_only", d.clutter_only.to_string());
        put("datasets.max_replay_failure", d.max_replay_failure.to_string());
        let t = &self.transfer;
        put("transfer.steps", t.steps.to_string());
        put("transfer.batch", t.batch.to_string());
        put("transfer.lr_p", t.lr_p.to_string());
        put("transfer.lr_pi", t.lr_pi.to_string());
        put("transfer.lr_d", t.lr_d.to_string());
        put("transfer.lr_c", t.lr_c.to_string());
        put("transfer.d_steps", t.d_steps.to_string());
        put("transfer.holdout_frac", t.holdout_frac.to_string());
        put("transfer.lambda_task", t.weights.task.to_string());
        put("transfer.lambda_c", t.weights.classifier.to_string());
        put("transfer.lambda_d", t.weights.discriminator.to_string());
        let e = &self.eval;
        put("eval.n", e.n.to_string());
        put("eval.unseen", e.unseen.to_string());
        put("eval.cloud_n", e.cloud_n.to_string());
        let p = match e.projection {
            ProjectionChoice::None => "none",
            ProjectionChoice::Pca => "pca",
            ProjectionChoice::Tsne => "tsne",
        };
        put("eval.projection", p.into());
        s
    }

    /// Lines of [`RunConfig::to_text`] whose key starts with one of `prefixes`.
    pub fn keys_with(&self, prefixes: &[&str]) -> String {
        self.to_text()
            .lines()
            .filter(|l| prefixes.iter().any(|p| l.starts_with(p)))
            .map(|l| format!("{l}\n"))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_overrides() {
        let cfg = RunConfig::parse("# demo\nrun.seed = 4\n\ntransfer.steps = 7  # short\nrl.sigma_floor = none\n").unwrap();
        assert_eq!(cfg.seed, 4);
        assert_eq!(cfg.transfer.steps, 7);
        assert_eq!(cfg.rl.sigma_floor, None);
        assert_eq!(cfg.datasets.per_object, 70);
    }

    #[test]
    fn variant_mask_applies_to_weights() {
        let cfg = RunConfig::parse("run.variant = ADDA\ntransfer.lambda_c = 5\n").unwrap();
        assert_eq!(cfg.transfer.weights, LossWeights::new(1.0, 0.0, 1.0));
        let cfg = RunConfig::parse("run.variant = FULL\ntransfer.lambda_d = 0.5\n").unwrap();
        assert_eq!(cfg.transfer.weights, LossWeights::new(1.0, 1.0, 0.5));
    }

    #[test]
    fn invalid_variant_names_valid_ones() {
        let err = RunConfig::parse("run.variant = DANN\n").unwrap_err().to_string();
        assert!(err.contains("FULL, ADDA, ADDA_EXTRAINFO, GPLAC, GPLAC_EXTRAINFO"), "{err}");
    }

    #[test]
    fn unknown_duplicate_and_malformed_lines_rejected() {
        assert!(RunConfig::parse("run.colour = red\n").is_err());
        assert!(RunConfig::parse("run.seed = 1\nrun.seed = 2\n").is_err());
        assert!(RunConfig::parse("run.seed 1\n").is_err());
        assert!(RunConfig::parse("transfer.lr_p = -1\n").is_err());
    }

    #[test]
    fn canonical_text_roundtrips() {
        let cfg = RunConfig::parse("run.task = pouring\nrun.variant = GPLAC_EXTRAINFO\neval.projection = pca\n").unwrap();
        assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }
}
