use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{Result, SimError};

/// Centers are drawn from `[PLACE_MIN, PLACE_MAX]²`.
pub const PLACE_MIN: f64 = 0.1;
pub const PLACE_MAX: f64 = 0.9;
/// Extra clearance between bounding discs.
pub const PLACEMENT_GAP: f64 = 0.01;
pub const MAX_PLACEMENT_TRIES: usize = 1000;
pub const MIN_CLUTTER: usize = 2;
pub const MAX_CLUTTER: usize = 6;
/// Inner radius of a ring as a fraction of its outer radius.
pub const RING_INNER: f64 = 0.6;
/// Short half-extent of a rect as a fraction of its long one.
pub const RECT_ASPECT: f64 = 0.55;

pub const PICKING_OBJECTS: u16 = 20;
pub const PICKING_SEEN: u16 = 15;
pub const POURING_OBJECTS: u16 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Task {
    Picking,
    Pouring,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Picking => "picking",
            Task::Pouring => "pouring",
        }
    }

    /// Ids of task objects used during transfer training.
    pub fn seen_ids(self) -> Vec<u16> {
        match self {
            Task::Picking => (1..=PICKING_SEEN).collect(),
            Task::Pouring => (1..=POURING_OBJECTS).collect(),
        }
    }

    /// Ids held out from training entirely.
    pub fn unseen_ids(self) -> Vec<u16> {
        match self {
            Task::Picking => (PICKING_SEEN + 1..=PICKING_OBJECTS).collect(),
            Task::Pouring => Vec::new(),
        }
    }

    pub fn object_count(self) -> u16 {
        match self {
            Task::Picking => PICKING_OBJECTS,
            Task::Pouring => POURING_OBJECTS,
        }
    }

    fn clutter_palette(self) -> &'static [Look] {
        match self {
            Task::Picking => PICKING_CLUTTER,
            Task::Pouring => POURING_CLUTTER,
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "picking" => Ok(Task::Picking),
            "pouring" => Ok(Task::Pouring),
            _ => Err(SimError::Parse(format!("unknown task {s:?} (expected picking or pouring)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DomainKind {
    /// Template object alone on the table.
    SourcePlain,
    /// Template object among clutter.
    SourceExtraInfo,
    /// One task object (or none) among clutter.
    Target,
}

impl DomainKind {
    pub fn name(self) -> &'static str {
        match self {
            DomainKind::SourcePlain => "source_plain",
            DomainKind::SourceExtraInfo => "source_extrainfo",
            DomainKind::Target => "target",
        }
    }
}

impl FromStr for DomainKind {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "source_plain" => Ok(DomainKind::SourcePlain),
            "source_extrainfo" => Ok(DomainKind::SourceExtraInfo),
            "target" => Ok(DomainKind::Target),
            _ => Err(SimError::Parse(format!("unknown domain kind {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ObjectKind {
    Template,
    TaskObject(u16),
    Clutter(u16),
}

impl ObjectKind {
    pub fn is_goal(self) -> bool {
        !matches!(self, ObjectKind::Clutter(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Shape {
    Square,
    Rect,
    Disc,
    Ring,
}

impl Shape {
    pub fn name(self) -> &'static str {
        match self {
            Shape::Square => "square",
            Shape::Rect => "rect",
            Shape::Disc => "disc",
            Shape::Ring => "ring",
        }
    }

    /// Radius of the smallest disc around the center covering the shape.
    pub fn bounding_radius(self, size: f64) -> f64 {
        match self {
            Shape::Square => size * 2f64.sqrt(),
            Shape::Rect => size * (1.0 + RECT_ASPECT * RECT_ASPECT).sqrt(),
            Shape::Disc | Shape::Ring => size,
        }
    }

    /// Whether the object-frame offset `(dx, dy)` lies on the shape.
    pub fn covers(self, size: f64, dx: f64, dy: f64) -> bool {
        match self {
            Shape::Square => dx.abs() <= size && dy.abs() <= size,
            Shape::Rect => dx.abs() <= size && dy.abs() <= size * RECT_ASPECT,
            Shape::Disc => dx * dx + dy * dy <= size * size,
            Shape::Ring => {
                let r2 = dx * dx + dy * dy;
                r2 <= size * size && r2 >= (size * RING_INNER).powi(2)
            }
        }
    }
}

impl FromStr for Shape {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "square" => Ok(Shape::Square),
            "rect" => Ok(Shape::Rect),
            "disc" => Ok(Shape::Disc),
            "ring" => Ok(Shape::Ring),
            _ => Err(SimError::Parse(format!("unknown shape {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectSpec {
    pub kind: ObjectKind,
    pub shape: Shape,
    pub color: [f64; 3],
    /// Half-extent (or radius) in workspace units.
    pub size: f64,
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl ObjectSpec {
    pub fn center(&self) -> [f64; 2] {
        [self.x, self.y]
    }

    pub fn bounding_radius(&self) -> f64 {
        self.shape.bounding_radius(self.size)
    }

    /// Whether the workspace point `(px, py)` is painted by this object.
    pub fn covers(&self, px: f64, py: f64) -> bool {
        let (s, c) = self.theta.sin_cos();
        let (ox, oy) = (px - self.x, py - self.y);
        // rotate into the object frame
        let dx = c * ox + s * oy;
        let dy = -s * ox + c * oy;
        self.shape.covers(self.size, dx, dy)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub task: Task,
    pub domain: DomainKind,
    pub seed: u64,
    /// Objects in painting order: clutter first, goal object last.
    pub objects: Vec<ObjectSpec>,
}

impl SceneSpec {
    /// The template or task object, if the scene has one.
    pub fn goal_object(&self) -> Option<&ObjectSpec> {
        self.objects.iter().find(|o| o.kind.is_goal())
    }

    /// Task-object id, `None` for template and clutter-only scenes.
    pub fn task_object_id(&self) -> Option<u16> {
        self.objects.iter().find_map(|o| match o.kind {
            ObjectKind::TaskObject(id) => Some(id),
            _ => None,
        })
    }

    pub fn clutter_count(&self) -> usize {
        self.objects.iter().filter(|o| matches!(o.kind, ObjectKind::Clutter(_))).count()
    }

    /// Copy of the scene with every clutter object removed.
    pub fn without_clutter(&self) -> SceneSpec {
        SceneSpec {
            objects: self.objects.iter().filter(|o| o.kind.is_goal()).copied().collect(),
            ..self.clone()
        }
    }

    /// The point the end effector must reach: the object center for picking,
    /// a point one cup size above the cup center for pouring.
    pub fn goal_point(&self) -> Result<[f64; 2]> {
        let obj = self.goal_object().ok_or(SimError::NoGoal)?;
        Ok(match self.task {
            Task::Picking => obj.center(),
            Task::Pouring => [obj.x, obj.y + obj.size],
        })
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("scene {} {} {}\n", self.task, self.domain.name(), self.seed);
        for o in &self.objects {
            let (kind, id) = match o.kind {
                ObjectKind::Template => ("template", 0),
                ObjectKind::TaskObject(id) => ("task", id),
                ObjectKind::Clutter(id) => ("clutter", id),
            };
            s.push_str(&format!(
                "{kind} {id} {} {} {} {} {} {} {} {}\n",
                o.shape.name(),
                o.color[0],
                o.color[1],
                o.color[2],
                o.size,
                o.x,
                o.y,
                o.theta
            ));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<SceneSpec> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| SimError::Parse("empty scene record".into()))?;
        let h: Vec<&str> = header.split_whitespace().collect();
        if h.len() != 4 || h[0] != "scene" {
            return Err(SimError::Parse(format!("bad scene header {header:?}")));
        }
        let task: Task = h[1].parse()?;
        let domain: DomainKind = h[2].parse()?;
        let seed: u64 = h[3].parse().map_err(|_| SimError::Parse(format!("bad seed {:?}", h[3])))?;
        let mut objects = Vec::new();
        for line in lines {
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 10 {
                return Err(SimError::Parse(format!("expected 10 fields in {line:?}")));
            }
            let id: u16 = f[1].parse().map_err(|_| SimError::Parse(format!("bad id in {line:?}")))?;
            let kind = match f[0] {
                "template" => ObjectKind::Template,
                "task" => ObjectKind::TaskObject(id),
                "clutter" => ObjectKind::Clutter(id),
                k => return Err(SimError::Parse(format!("unknown object kind {k:?}"))),
            };
            let num = |i: usize| -> Result<f64> {
                f[i].parse().map_err(|_| SimError::Parse(format!("bad number {:?} in {line:?}", f[i])))
            };
            objects.push(ObjectSpec {
                kind,
                shape: f[2].parse()?,
                color: [num(3)?, num(4)?, num(5)?],
                size: num(6)?,
                x: num(7)?,
                y: num(8)?,
                theta: num(9)?,
            });
        }
        Ok(SceneSpec {
            task,
            domain,
            seed,
            objects,
        })
    }
}

/// Fixed appearance of one object id.
#[derive(Debug, Clone, Copy)]
struct Look {
    shape: Shape,
    color: [f64; 3],
    size: f64,
}

const fn look(shape: Shape, color: [f64; 3], size: f64) -> Look {
    Look { shape, color, size }
}

const PICKING_TEMPLATE: Look = look(Shape::Square, [0.95, 0.95, 0.95], 0.06);
const POURING_TEMPLATE: Look = look(Shape::Ring, [0.95, 0.95, 0.95], 0.08);

// 1-15 seen, 16-20 unseen (colors and sizes not used by any seen id).
// Task objects are bright; clutter is muted apart from a few confusable
// distractors.
const PICKING_OBJECTS_LOOK: [Look; 20] = [
    look(Shape::Square, [0.90, 0.20, 0.20], 0.060),
    look(Shape::Rect, [0.20, 0.80, 0.25], 0.070),
    look(Shape::Square, [0.20, 0.40, 0.95], 0.055),
    look(Shape::Rect, [0.95, 0.90, 0.20], 0.065),
    look(Shape::Square, [0.95, 0.50, 0.10], 0.065),
    look(Shape::Rect, [0.70, 0.30, 0.90], 0.060),
    look(Shape::Square, [0.15, 0.85, 0.85], 0.050),
    look(Shape::Rect, [0.95, 0.40, 0.75], 0.070),
    look(Shape::Square, [0.60, 0.90, 0.20], 0.060),
    look(Shape::Rect, [0.85, 0.85, 0.85], 0.060),
    look(Shape::Square, [0.95, 0.70, 0.50], 0.065),
    look(Shape::Rect, [0.35, 0.70, 0.95], 0.065),
    look(Shape::Square, [0.95, 0.60, 0.60], 0.055),
    look(Shape::Rect, [0.50, 0.50, 0.95], 0.070),
    look(Shape::Square, [0.90, 0.80, 0.45], 0.060),
    look(Shape::Square, [0.45, 0.95, 0.60], 0.045),
    look(Shape::Rect, [0.95, 0.60, 0.30], 0.075),
    look(Shape::Square, [0.75, 0.60, 0.95], 0.075),
    look(Shape::Rect, [0.95, 0.30, 0.50], 0.048),
    look(Shape::Square, [0.45, 0.75, 0.95], 0.052),
];

const PICKING_CLUTTER: &[Look] = &[
    look(Shape::Disc, [0.30, 0.45, 0.30], 0.055),
    look(Shape::Ring, [0.25, 0.25, 0.45], 0.080),
    look(Shape::Disc, [0.50, 0.40, 0.30], 0.050),
    look(Shape::Ring, [0.45, 0.45, 0.45], 0.075),
    look(Shape::Disc, [0.90, 0.20, 0.20], 0.055),
    look(Shape::Ring, [0.55, 0.35, 0.45], 0.085),
    look(Shape::Disc, [0.20, 0.40, 0.45], 0.060),
    look(Shape::Ring, [0.50, 0.50, 0.25], 0.070),
    look(Shape::Disc, [0.15, 0.15, 0.15], 0.065),
    look(Shape::Ring, [0.45, 0.25, 0.20], 0.080),
];

const POURING_CUPS: [Look; 3] = [
    look(Shape::Ring, [0.95, 0.80, 0.60], 0.080),
    look(Shape::Ring, [0.90, 0.20, 0.20], 0.075),
    look(Shape::Ring, [0.20, 0.40, 0.95], 0.085),
];

const POURING_CLUTTER: &[Look] = &[
    look(Shape::Ring, [0.70, 0.70, 0.70], 0.080),
    look(Shape::Square, [0.30, 0.45, 0.30], 0.060),
    look(Shape::Disc, [0.50, 0.40, 0.30], 0.055),
    look(Shape::Rect, [0.25, 0.25, 0.45], 0.070),
    look(Shape::Disc, [0.15, 0.15, 0.15], 0.050),
    look(Shape::Square, [0.55, 0.35, 0.45], 0.055),
    look(Shape::Rect, [0.50, 0.50, 0.25], 0.065),
    look(Shape::Disc, [0.20, 0.40, 0.45], 0.060),
];

fn object_look(task: Task, kind: ObjectKind) -> Result<Look> {
    let bad = |id| SimError::InvalidObject { task, id };
    match (task, kind) {
        (Task::Picking, ObjectKind::Template) => Ok(PICKING_TEMPLATE),
        (Task::Pouring, ObjectKind::Template) => Ok(POURING_TEMPLATE),
        (Task::Picking, ObjectKind::TaskObject(id)) => PICKING_OBJECTS_LOOK
            .get((id as usize).wrapping_sub(1))
            .copied()
            .ok_or(bad(id)),
        (Task::Pouring, ObjectKind::TaskObject(id)) => {
            POURING_CUPS.get((id as usize).wrapping_sub(1)).copied().ok_or(bad(id))
        }
        (_, ObjectKind::Clutter(id)) => task
            .clutter_palette()
            .get((id as usize).wrapping_sub(1))
            .copied()
            .ok_or(bad(id)),
    }
}

/// Number of distinct clutter ids for a task.
pub fn clutter_ids(task: Task) -> u16 {
    task.clutter_palette().len() as u16
}

fn place(
    rng: &mut ChaCha8Rng,
    task: Task,
    kind: ObjectKind,
    placed: &[ObjectSpec],
) -> Result<ObjectSpec> {
    let lk = object_look(task, kind)?;
    let radius = lk.shape.bounding_radius(lk.size);
    for _ in 0..MAX_PLACEMENT_TRIES {
        let x = rng.gen_range(PLACE_MIN..PLACE_MAX);
        let y = rng.gen_range(PLACE_MIN..PLACE_MAX);
        let theta = rng.gen_range(0.0..PI);
        let clear = placed.iter().all(|o| {
            let d = ((o.x - x).powi(2) + (o.y - y).powi(2)).sqrt();
            d >= o.bounding_radius() + radius + PLACEMENT_GAP
        });
        if clear {
            return Ok(ObjectSpec {
                kind,
                shape: lk.shape,
                color: lk.color,
                size: lk.size,
                x,
                y,
                theta,
            });
        }
    }
    Err(SimError::Placement {
        attempts: MAX_PLACEMENT_TRIES,
    })
}

/// Samples a scene; the result is a pure function of the arguments.
///
/// `object` selects the task object for target scenes (`None` gives a
/// clutter-only scene) and must be `None` for source scenes.
pub fn sample_scene(task: Task, domain: DomainKind, object: Option<u16>, seed: u64) -> Result<SceneSpec> {
    let goal = match (domain, object) {
        (DomainKind::Target, Some(id)) => {
            if id == 0 || id > task.object_count() {
                return Err(SimError::InvalidObject { task, id });
            }
            Some(ObjectKind::TaskObject(id))
        }
        (DomainKind::Target, None) => None,
        (_, Some(id)) => return Err(SimError::InvalidObject { task, id }),
        (_, None) => Some(ObjectKind::Template),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut placed = Vec::new();
    if let Some(kind) = goal {
        placed.push(place(&mut rng, task, kind, &placed)?);
    }
    if domain != DomainKind::SourcePlain {
        let n = rng.gen_range(MIN_CLUTTER..=MAX_CLUTTER);
        let palette = clutter_ids(task);
        for _ in 0..n {
            let id = rng.gen_range(1..=palette);
            let obj = place(&mut rng, task, ObjectKind::Clutter(id), &placed)?;
            placed.push(obj);
        }
    }
    // painter's order: goal object drawn last
    if goal.is_some() {
        placed.rotate_left(1);
    }
    Ok(SceneSpec {
        task,
        domain,
        seed,
        objects: placed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn source_plain_has_only_template() {
        let s = sample_scene(Task::Picking, DomainKind::SourcePlain, None, 7).unwrap();
        assert_eq!(s.objects.len(), 1);
        assert_eq!(s.objects[0].kind, ObjectKind::Template);
    }

    #[test]
    fn target_scene_has_object_and_clutter() {
        let s = sample_scene(Task::Picking, DomainKind::Target, Some(3), 7).unwrap();
        assert_eq!(s.task_object_id(), Some(3));
        assert!((2..=6).contains(&s.clutter_count()));
        assert!(s.objects.iter().all(|o| o.kind != ObjectKind::Template));
        assert_eq!(s.objects.last().unwrap().kind, ObjectKind::TaskObject(3));
    }

    #[test]
    fn same_seed_same_scene() {
        let a = sample_scene(Task::Pouring, DomainKind::Target, Some(2), 99).unwrap();
        let b = sample_scene(Task::Pouring, DomainKind::Target, Some(2), 99).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn invalid_ids_rejected() {
        assert!(sample_scene(Task::Pouring, DomainKind::Target, Some(4), 1).is_err());
        assert!(sample_scene(Task::Picking, DomainKind::Target, Some(0), 1).is_err());
        assert!(sample_scene(Task::Picking, DomainKind::SourcePlain, Some(1), 1).is_err());
    }

    #[test]
    fn clutter_only_scene() {
        let s = sample_scene(Task::Picking, DomainKind::Target, None, 5).unwrap();
        assert!(s.goal_object().is_none());
        assert!(s.goal_point().is_err());
        assert!(s.clutter_count() >= 2);
    }

    #[test]
    fn text_roundtrip_is_exact() {
        for seed in 0..20 {
            let s = sample_scene(Task::Picking, DomainKind::SourceExtraInfo, None, seed).unwrap();
            assert_eq!(SceneSpec::from_text(&s.to_text()).unwrap(), s);
        }
    }

    #[test]
    fn pour_point_sits_above_cup() {
        let s = sample_scene(Task::Pouring, DomainKind::Target, Some(1), 3).unwrap();
        let cup = s.goal_object().unwrap();
        assert_eq!(s.goal_point().unwrap(), [cup.x, cup.y + cup.size]);
    }

    #[test]
    fn unseen_ids_disjoint_from_seen() {
        let seen = Task::Picking.seen_ids();
        assert_eq!(seen.len(), 15);
        assert!(Task::Picking.unseen_ids().iter().all(|id| !seen.contains(id)));
    }
}
