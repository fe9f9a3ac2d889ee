//! The two training corpora for transfer: image → latent pairs recorded from
//! the trained template policy, and weakly labelled target images.

use std::path::Path;

use clutterbridge_sim::{render, sample_scene, score, DomainKind, Image, SceneSpec, Task};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::binio::{write_atomic, Reader};
use crate::error::{CoreError, Result};
use crate::policy::{image_batch, Agent};
use crate::rng::stream;
use crate::trajgen::{TrajVae, LATENT_DIM};

pub const BUNDLE_MAGIC: &[u8; 4] = b"CBDS";
pub const BUNDLE_VERSION: u32 = 1;
/// Weak label of an image showing only clutter.
pub const CLUTTER_ONLY: u8 = 1;
/// Weak label of an image containing a task object.
pub const HAS_OBJECT: u8 = 0;
const NO_LABEL: u8 = 255;
const NO_OBJECT: u16 = 0xFFFF;
/// Largest tolerated fraction of recorded pairs that fail to replay.
pub const MAX_REPLAY_FAILURE: f64 = 0.1;

/// Source-domain pair: a template scene and the trained policy's mean latent.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceSample {
    pub scene: SceneSpec,
    pub z_star: Vec<f32>,
}

/// Target-domain image with its weak label.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage {
    pub scene: SceneSpec,
    pub label: u8,
    pub object_id: Option<u16>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetBundle {
    pub source: Vec<SourceSample>,
    pub target: Vec<LabeledImage>,
    pub seen_ids: Vec<u16>,
    pub unseen_ids: Vec<u16>,
}

impl SourceSample {
    pub fn image(&self) -> Image {
        render(&self.scene)
    }

    pub fn z_star_f64(&self) -> Vec<f64> {
        self.z_star.iter().map(|&v| v as f64).collect()
    }
}

impl LabeledImage {
    pub fn image(&self) -> Image {
        render(&self.scene)
    }
}

/// Records `n` scenes with the agent's mean latent as the regression target.
///
/// With `extrainfo` the scenes contain clutter around the template; the
/// target latent is still computed from the clutter-free rendering of the
/// same template pose, so clutter never changes the recorded action.
///
/// Fails when more than `max_failure` of the replays score below 0.5
/// ([`MAX_REPLAY_FAILURE`] is the usual bound).
pub fn record_source(
    agent: &Agent,
    vae: &TrajVae,
    task: Task,
    n: usize,
    extrainfo: bool,
    max_failure: f64,
    seed: u64,
) -> Result<Vec<SourceSample>> {
    let mut rng = stream(seed, if extrainfo { "source-extrainfo" } else { "source-plain" });
    let domain = if extrainfo {
        DomainKind::SourceExtraInfo
    } else {
        DomainKind::SourcePlain
    };
    let mut scenes = Vec::with_capacity(n);
    for _ in 0..n {
        scenes.push(sample_scene(task, domain, None, rng.gen())?);
    }
    let clean: Vec<Image> = scenes.iter().map(|s| render(&s.without_clutter())).collect();
    let mut latents = Vec::with_capacity(n);
    for chunk in clean.chunks(128) {
        latents.extend(agent.mean_latents(&image_batch(chunk)?)?);
    }
    let trajs = vae.decode_batch(&latents)?;
    let mut failed = 0;
    for (t, s) in trajs.iter().zip(&scenes) {
        if score(t, s)? < 0.5 {
            failed += 1;
        }
    }
    if n > 0 && failed as f64 > max_failure * n as f64 {
        return Err(CoreError::Replay { failed, total: n });
    }
    Ok(scenes
        .into_iter()
        .zip(latents)
        .map(|(scene, z)| SourceSample {
            scene,
            z_star: z.iter().map(|&v| v as f32).collect(),
        })
        .collect())
}

/// `per_object` images of every seen id (label 0) followed by
/// `clutter_only` images without a task object (label 1).
pub fn gen_target(
    task: Task,
    per_object: usize,
    clutter_only: usize,
    seen_ids: &[u16],
    seed: u64,
) -> Result<Vec<LabeledImage>> {
    if seen_ids.is_empty() {
        return Err(CoreError::Invalid("no seen object ids".into()));
    }
    let mut rng = stream(seed, "target");
    let mut out = Vec::with_capacity(per_object * seen_ids.len() + clutter_only);
    for &id in seen_ids {
        for _ in 0..per_object {
            out.push(LabeledImage {
                scene: sample_scene(task, DomainKind::Target, Some(id), rng.gen())?,
                label: HAS_OBJECT,
                object_id: Some(id),
            });
        }
    }
    for _ in 0..clutter_only {
        out.push(LabeledImage {
            scene: sample_scene(task, DomainKind::Target, None, rng.gen())?,
            label: CLUTTER_ONLY,
            object_id: None,
        });
    }
    Ok(out)
}

impl DatasetBundle {
    pub fn label_counts(&self) -> (usize, usize) {
        let ones = self.target.iter().filter(|t| t.label == CLUTTER_ONLY).count();
        (self.target.len() - ones, ones)
    }

    /// Checks the structural invariants of a bundle.
    pub fn validate(&self) -> Result<()> {
        if self.source.is_empty() {
            return Err(CoreError::Invalid("bundle has no source samples".into()));
        }
        for s in &self.source {
            if s.z_star.len() != LATENT_DIM || s.z_star.iter().any(|v| !v.is_finite()) {
                return Err(CoreError::Invalid("source latent must be finite with 3 entries".into()));
            }
        }
        for t in &self.target {
            let id = t.scene.task_object_id();
            if id != t.object_id || (t.label == CLUTTER_ONLY) != id.is_none() {
                return Err(CoreError::Invalid(format!(
                    "target label {} disagrees with scene {}",
                    t.label, t.scene.seed
                )));
            }
            if let Some(id) = id {
                if !self.seen_ids.contains(&id) {
                    return Err(CoreError::Invalid(format!("target uses non-seen object id {id}")));
                }
            }
        }
        if self.unseen_ids.iter().any(|u| self.seen_ids.contains(u)) {
            return Err(CoreError::Invalid("seen and unseen ids overlap".into()));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend(BUNDLE_MAGIC);
        out.extend(BUNDLE_VERSION.to_le_bytes());
        out.extend((self.source.len() as u32).to_le_bytes());
        out.extend((self.target.len() as u32).to_le_bytes());
        for ids in [&self.seen_ids, &self.unseen_ids] {
            out.extend((ids.len() as u16).to_le_bytes());
            for id in ids {
                out.extend(id.to_le_bytes());
            }
        }
        let record = |out: &mut Vec<u8>, scene: &SceneSpec, label: u8, id: Option<u16>| {
            out.extend(scene.seed.to_le_bytes());
            let text = scene.to_text();
            out.extend((text.len() as u32).to_le_bytes());
            out.extend(text.as_bytes());
            out.push(label);
            out.extend(id.unwrap_or(NO_OBJECT).to_le_bytes());
        };
        for s in &self.source {
            record(&mut out, &s.scene, NO_LABEL, None);
            for v in &s.z_star {
                out.extend(v.to_le_bytes());
            }
        }
        for t in &self.target {
            record(&mut out, &t.scene, t.label, t.object_id);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<DatasetBundle> {
        let mut r = Reader::new(bytes);
        let magic = r.take(4)?;
        if magic != BUNDLE_MAGIC {
            return Err(CoreError::Format(format!("bad bundle magic {magic:?}")));
        }
        let version = r.u32()?;
        if version != BUNDLE_VERSION {
            return Err(CoreError::Format(format!("unsupported bundle version {version}")));
        }
        let n_source = r.u32()? as usize;
        let n_target = r.u32()? as usize;
        let mut ids = [Vec::new(), Vec::new()];
        for list in ids.iter_mut() {
            let k = r.u16()?;
            for _ in 0..k {
                list.push(r.u16()?);
            }
        }
        let record = |r: &mut Reader| -> Result<(SceneSpec, u8, Option<u16>)> {
            let seed = r.u64()?;
            let len = r.u32()? as usize;
            let text = std::str::from_utf8(r.take(len)?)
                .map_err(|_| CoreError::Format("scene record is not UTF-8".into()))?;
            let scene = SceneSpec::from_text(text)?;
            if scene.seed != seed {
                return Err(CoreError::Format(format!("scene seed {} does not match record {seed}", scene.seed)));
            }
            let label = r.u8()?;
            let id = r.u16()?;
            Ok((scene, label, (id != NO_OBJECT).then_some(id)))
        };
        let mut source = Vec::with_capacity(n_source);
        for _ in 0..n_source {
            let (scene, _, _) = record(&mut r)?;
            let mut z_star = Vec::with_capacity(LATENT_DIM);
            for _ in 0..LATENT_DIM {
                z_star.push(r.f32()?);
            }
            source.push(SourceSample { scene, z_star });
        }
        let mut target = Vec::with_capacity(n_target);
        for _ in 0..n_target {
            let (scene, label, object_id) = record(&mut r)?;
            if label > 1 {
                return Err(CoreError::Format(format!("bad target label {label}")));
            }
            target.push(LabeledImage { scene, label, object_id });
        }
        r.finish()?;
        let [seen_ids, unseen_ids] = ids;
        let bundle = DatasetBundle {
            source,
            target,
            seen_ids,
            unseen_ids,
        };
        bundle.validate()?;
        Ok(bundle)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.validate()?;
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<DatasetBundle> {
        DatasetBundle::from_bytes(&std::fs::read(path)?)
    }
}

/// Draws label-balanced batches (half of each label, with replacement).
#[derive(Debug, Clone)]
pub struct BalancedSampler {
    zeros: Vec<usize>,
    ones: Vec<usize>,
}

impl BalancedSampler {
    /// `labels[i]` is the weak label of item `i`.
    pub fn new(labels: &[u8]) -> Result<Self> {
        let zeros: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == HAS_OBJECT).collect();
        let ones: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == CLUTTER_ONLY).collect();
        if zeros.is_empty() || ones.is_empty() {
            return Err(CoreError::Invalid("balanced sampling needs both labels".into()));
        }
        Ok(BalancedSampler { zeros, ones })
    }

    /// Indices of a batch of `n` items; the first `n / 2` carry label 0.
    pub fn sample(&self, n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let half = n / 2;
        let mut idx: Vec<usize> = (0..half).map(|_| *self.zeros.choose(rng).unwrap()).collect();
        idx.extend((half..n).map(|_| *self.ones.choose(rng).unwrap()));
        idx
    }

    /// Indices of `n` items with label 0.
    pub fn sample_objects(&self, n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        (0..n).map(|_| *self.zeros.choose(rng).unwrap()).collect()
    }
}
