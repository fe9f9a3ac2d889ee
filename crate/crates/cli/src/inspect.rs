//! Human-readable summaries of checkpoints and dataset bundles.

use std::fmt::Write as _;
use std::path::Path;

use clutterbridge::datasets::{DatasetBundle, BUNDLE_MAGIC};
use clutterbridge::trajgen::DemoCorpus;
use clutterbridge::{hash_str, CoreError};
use clutterbridge_numcore::{Checkpoint, NumError, CHECKPOINT_MAGIC};

use crate::CliError;

fn tensor_hash(data: &[f32]) -> String {
    let mut s = String::with_capacity(data.len() * 8);
    for v in data {
        let _ = write!(s, "{:08x}", v.to_bits());
    }
    hash_str(&s)[..16].to_string()
}

fn describe_error(path: &Path, e: String) -> CliError {
    CliError::Stage(format!("{}: {e}", path.display()))
}

pub fn inspect(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    if bytes.starts_with(&CHECKPOINT_MAGIC) {
        let ckpt = Checkpoint::from_bytes(&bytes).map_err(|e: NumError| describe_error(path, e.to_string()))?;
        Ok(checkpoint_summary(&ckpt))
    } else if bytes.starts_with(BUNDLE_MAGIC) {
        let bundle = DatasetBundle::from_bytes(&bytes).map_err(|e: CoreError| describe_error(path, e.to_string()))?;
        Ok(bundle_summary(&bundle))
    } else if let Ok(demos) = DemoCorpus::from_bytes(&bytes) {
        Ok(format!("demo corpus: {} trajectories\n", demos.trajectories.len()))
    } else {
        Err(describe_error(path, "unknown format (not a checkpoint, bundle or demo corpus)".into()))
    }
}

pub fn checkpoint_summary(ckpt: &Checkpoint) -> String {
    let mut s = format!("checkpoint: {} tensors\n", ckpt.tensors.len());
    let width = ckpt.names().map(str::len).max().unwrap_or(0);
    let mut total = 0;
    for (name, t) in &ckpt.tensors {
        total += t.data().len();
        let _ = writeln!(s, "  {name:<width$}  {:<14} {}", format!("{:?}", t.shape()), tensor_hash(t.data()));
    }
    let _ = writeln!(s, "parameters: {total}");
    s
}

pub fn bundle_summary(b: &DatasetBundle) -> String {
    let (objects, clutter) = b.label_counts();
    let mut s = String::from("dataset bundle\n");
    let _ = writeln!(s, "  source samples: {}", b.source.len());
    let _ = writeln!(s, "  target samples: {}", b.target.len());
    let share = if b.target.is_empty() {
        0.0
    } else {
        clutter as f64 / b.target.len() as f64
    };
    let _ = writeln!(s, "  labels: {objects} with task object, {clutter} clutter-only ({share:.3} clutter-only)");
    let ids = |v: &[u16]| v.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(" ");
    let _ = writeln!(s, "  seen ids: {}", ids(&b.seen_ids));
    let _ = writeln!(s, "  unseen ids: {}", ids(&b.unseen_ids));
    s
}
