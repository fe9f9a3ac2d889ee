//! Merges the evaluation output of several run directories into one table.
//! Runs of the same variant (different seeds) are pooled per object.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clutterbridge::eval::{make_tables, Table, TrialReport};
use clutterbridge_sim::Task;

use crate::config::RunConfig;
use crate::pipeline::{parse_trials_csv, CONFIG_FILE, TRIALS_SEEN, TRIALS_UNSEEN};
use crate::CliError;

#[derive(Debug, Clone)]
pub struct Comparison {
    pub task: Task,
    pub seen: Table,
    pub unseen: Option<Table>,
}

struct Run {
    dir: PathBuf,
    variant: String,
    seen: Vec<TrialReport>,
    unseen: Option<Vec<TrialReport>>,
}

fn load_run(dir: &Path) -> Result<(RunConfig, Run), CliError> {
    let cfg = RunConfig::load(&dir.join(CONFIG_FILE))?;
    let read = |name: &str| -> Result<Option<Vec<TrialReport>>, CliError> {
        let path = dir.join(name);
        if !path.exists() {
            return Ok(None);
        }
        let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
        parse_trials_csv(&text).map(Some)
    };
    let seen = read(TRIALS_SEEN)?
        .ok_or_else(|| CliError::Stage(format!("{} has no {TRIALS_SEEN}; run its eval stage first", dir.display())))?;
    let run = Run {
        dir: dir.to_path_buf(),
        variant: cfg.variant.name().to_string(),
        seen,
        unseen: read(TRIALS_UNSEEN)?,
    };
    Ok((cfg, run))
}

/// Pools runs sharing a variant name: per object, the trial lists are concatenated.
fn pool(runs: &[(String, Vec<TrialReport>)]) -> Result<Vec<(String, Vec<TrialReport>)>, CliError> {
    let mut out: Vec<(String, Vec<TrialReport>)> = Vec::new();
    for (name, reports) in runs {
        match out.iter_mut().find(|(n, _)| n == name) {
            None => out.push((name.clone(), reports.clone())),
            Some((_, acc)) => {
                let same = acc.len() == reports.len() && acc.iter().zip(reports).all(|(a, b)| a.object_id == b.object_id);
                if !same {
                    return Err(CliError::Stage(format!("{name} runs cover different object sets")));
                }
                for (a, b) in acc.iter_mut().zip(reports) {
                    let mut scores = a.scores.clone();
                    scores.extend(&b.scores);
                    *a = TrialReport::new(name, a.task, a.object_id, scores)?;
                }
            }
        }
    }
    Ok(out)
}

pub fn compare(dirs: &[PathBuf]) -> Result<Comparison, CliError> {
    if dirs.len() < 2 {
        return Err(CliError::Config("compare needs at least two run directories".into()));
    }
    let mut runs = Vec::with_capacity(dirs.len());
    let mut task = None;
    for d in dirs {
        let (cfg, run) = load_run(d)?;
        match task {
            None => task = Some(cfg.task),
            Some(t) if t != cfg.task => {
                return Err(CliError::Stage(format!(
                    "{} is a {} run but the others are {}",
                    run.dir.display(),
                    cfg.task.name(),
                    t.name()
                )))
            }
            _ => {}
        }
        runs.push(run);
    }
    let task = task.expect("at least two runs");
    let seen: Vec<_> = runs.iter().map(|r| (r.variant.clone(), r.seen.clone())).collect();
    let seen = make_tables(&format!("{} success rate, seen objects", task.name()), &pool(&seen)?)?;
    let unseen = if runs.iter().all(|r| r.unseen.is_some()) {
        let u: Vec<_> = runs.iter().map(|r| (r.variant.clone(), r.unseen.clone().unwrap())).collect();
        Some(make_tables(&format!("{} success rate, unseen objects", task.name()), &pool(&u)?)?)
    } else {
        None
    };
    Ok(Comparison { task, seen, unseen })
}

impl Comparison {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for table in std::iter::once(&self.seen).chain(self.unseen.as_ref()) {
            s.push_str(&table.to_text());
            let (per_object, overall) = table.winners();
            let _ = writeln!(s, "best on average: {overall}");
            for c in &table.columns {
                let wins = per_object.iter().filter(|w| *w == c).count();
                let _ = writeln!(s, "  {c} best on {wins} of {} objects", per_object.len());
            }
            s.push('\n');
        }
        s
    }

    /// Writes `comparison_seen.csv` (and the unseen table when present).
    pub fn write_csv(&self, dir: &Path) -> Result<(), CliError> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        let mut tables = vec![("comparison_seen.csv", &self.seen)];
        if let Some(u) = &self.unseen {
            tables.push(("comparison_unseen.csv", u));
        }
        for (name, table) in tables {
            let path = dir.join(name);
            std::fs::write(&path, table.to_csv()).map_err(|e| CliError::io(&path, e))?;
        }
        Ok(())
    }
}
