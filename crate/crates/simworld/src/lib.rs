//! Synthetic tabletop used to train and evaluate visuomotor policies.
//!
//! Scenes are declarative ([`SceneSpec`]) and fully determined by their
//! arguments and seed; [`render`] rasterizes them to small RGB images, and a
//! [`Trajectory`] of planar displacements is executed kinematically from a
//! fixed start and scored geometrically.

mod motion;
mod render;
mod scene;

pub use motion::{
    execute, execute_from, oracle_trajectory, picking_rubric, score, score_picking, score_pouring,
    straight_trajectory, Trajectory, ACTION_DIM, HORIZON, MAX_STEP, ORACLE_NOISE, PICK_INNER,
    PICK_OUTER, POUR_RADIUS, START,
};
pub use render::{pixel_center, render, Image, BACKGROUND, CHANNELS, IMAGE_SIZE};
pub use scene::{
    clutter_ids, sample_scene, DomainKind, ObjectKind, ObjectSpec, SceneSpec, Shape, Task,
    MAX_CLUTTER, MAX_PLACEMENT_TRIES, MIN_CLUTTER, PLACEMENT_GAP, PLACE_MAX, PLACE_MIN,
};

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("could not place object after {attempts} attempts")]
    Placement { attempts: usize },
    #[error("object id {id} is not valid for the {task} task")]
    InvalidObject { task: Task, id: u16 },
    #[error("scene has no template or task object")]
    NoGoal,
    #[error("goal at distance {distance:.3} is out of reach")]
    Unreachable { distance: f64 },
    #[error("trajectory has {0} steps, expected {HORIZON}")]
    TrajectoryLength(usize),
    #[error("non-finite trajectory value")]
    NonFinite,
    #[error("scene is for the {0} task")]
    WrongTask(Task),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SimError>;
