use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::scene::{SceneSpec, Task};
use crate::{Result, SimError};

/// Steps per trajectory.
pub const HORIZON: usize = 20;
/// Action dimensions per step.
pub const ACTION_DIM: usize = 2;
/// Largest allowed per-step displacement (Euclidean).
pub const MAX_STEP: f64 = 0.08;
pub const START: [f64; 2] = [0.5, 0.05];

pub const PICK_INNER: f64 = 0.04;
pub const PICK_OUTER: f64 = 0.08;
pub const POUR_RADIUS: f64 = 0.05;
/// Default per-step noise of the scripted oracle.
pub const ORACLE_NOISE: f64 = 0.003;

/// `HORIZON` planar displacements.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    steps: Vec<[f64; 2]>,
}

impl Trajectory {
    /// Builds a trajectory, shrinking any step longer than `MAX_STEP`.
    pub fn new(steps: Vec<[f64; 2]>) -> Result<Trajectory> {
        if steps.len() != HORIZON {
            return Err(SimError::TrajectoryLength(steps.len()));
        }
        if steps.iter().flatten().any(|v| !v.is_finite()) {
            return Err(SimError::NonFinite);
        }
        Ok(Trajectory {
            steps: steps.into_iter().map(clamp_step).collect(),
        })
    }

    pub fn zeros() -> Trajectory {
        Trajectory {
            steps: vec![[0.0; 2]; HORIZON],
        }
    }

    /// Reads `HORIZON * ACTION_DIM` interleaved values.
    pub fn from_flat(values: &[f64]) -> Result<Trajectory> {
        if values.len() != HORIZON * ACTION_DIM {
            return Err(SimError::TrajectoryLength(values.len() / ACTION_DIM));
        }
        Trajectory::new(values.chunks(2).map(|c| [c[0], c[1]]).collect())
    }

    pub fn steps(&self) -> &[[f64; 2]] {
        &self.steps
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.steps.iter().flatten().copied().collect()
    }

    /// Unclipped sum of all steps.
    pub fn displacement(&self) -> [f64; 2] {
        self.steps.iter().fold([0.0, 0.0], |a, s| [a[0] + s[0], a[1] + s[1]])
    }
}

fn clamp_step(s: [f64; 2]) -> [f64; 2] {
    let n = (s[0] * s[0] + s[1] * s[1]).sqrt();
    if n > MAX_STEP {
        let k = MAX_STEP / n;
        [s[0] * k, s[1] * k]
    } else {
        s
    }
}

/// Final end-effector position: `clip(START + Σu, [0,1]²)`.
pub fn execute(traj: &Trajectory) -> [f64; 2] {
    execute_from(traj, START)
}

pub fn execute_from(traj: &Trajectory, start: [f64; 2]) -> [f64; 2] {
    let d = traj.displacement();
    [(start[0] + d[0]).clamp(0.0, 1.0), (start[1] + d[1]).clamp(0.0, 1.0)]
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// 1 near the object center, 0.5 for an off-center grasp, else 0.
pub fn score_picking(end: [f64; 2], scene: &SceneSpec) -> Result<f64> {
    if scene.task != Task::Picking {
        return Err(SimError::WrongTask(scene.task));
    }
    let obj = scene.goal_object().ok_or(SimError::NoGoal)?;
    Ok(picking_rubric(dist(end, obj.center())))
}

pub fn picking_rubric(d: f64) -> f64 {
    if d <= PICK_INNER {
        1.0
    } else if d <= PICK_OUTER {
        0.5
    } else {
        0.0
    }
}

/// 1 when the end point lies within `POUR_RADIUS` of the pour point (inclusive).
pub fn score_pouring(end: [f64; 2], scene: &SceneSpec) -> Result<f64> {
    if scene.task != Task::Pouring {
        return Err(SimError::WrongTask(scene.task));
    }
    let goal = scene.goal_point()?;
    Ok(if dist(end, goal) <= POUR_RADIUS { 1.0 } else { 0.0 })
}

/// Task-appropriate score of the trajectory's end point.
pub fn score(traj: &Trajectory, scene: &SceneSpec) -> Result<f64> {
    let end = execute(traj);
    match scene.task {
        Task::Picking => score_picking(end, scene),
        Task::Pouring => score_pouring(end, scene),
    }
}

/// Straight path from `START` to `goal` split into equal steps.
pub fn straight_trajectory(goal: [f64; 2]) -> Result<Trajectory> {
    let d = dist(goal, START);
    if d / HORIZON as f64 > MAX_STEP {
        return Err(SimError::Unreachable { distance: d });
    }
    let step = [(goal[0] - START[0]) / HORIZON as f64, (goal[1] - START[1]) / HORIZON as f64];
    Trajectory::new(vec![step; HORIZON])
}

/// Scripted expert: the straight path to the scene's goal point plus
/// independent Gaussian noise of standard deviation `noise` per component.
pub fn oracle_trajectory<R: Rng>(scene: &SceneSpec, noise: f64, rng: &mut R) -> Result<Trajectory> {
    let base = straight_trajectory(scene.goal_point()?)?;
    if noise == 0.0 {
        return Ok(base);
    }
    let n = Normal::new(0.0, noise).map_err(|_| SimError::NonFinite)?;
    let steps = base
        .steps()
        .iter()
        .map(|s| [s[0] + n.sample(rng), s[1] + n.sample(rng)])
        .collect();
    Trajectory::new(steps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{sample_scene, DomainKind};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_trajectory_stays_at_start() {
        assert_eq!(execute(&Trajectory::zeros()), START);
    }

    #[test]
    fn constant_upward_steps() {
        let t = Trajectory::new(vec![[0.0, 0.04]; HORIZON]).unwrap();
        let end = execute(&t);
        assert_eq!(end[0], 0.5);
        assert!((end[1] - 0.85).abs() < 1e-12);
    }

    #[test]
    fn overshoot_is_clipped() {
        let t = Trajectory::new(vec![[0.08, 0.0]; HORIZON]).unwrap();
        assert_eq!(execute(&t), [1.0, 0.05]);
    }

    #[test]
    fn long_steps_are_shrunk() {
        let t = Trajectory::new(vec![[0.3, 0.4]; HORIZON]).unwrap();
        for s in t.steps() {
            assert!((s[0].hypot(s[1]) - MAX_STEP).abs() < 1e-12);
        }
    }

    #[test]
    fn wrong_length_rejected() {
        assert!(Trajectory::new(vec![[0.0; 2]; 3]).is_err());
        assert!(Trajectory::from_flat(&[0.0; 41]).is_err());
    }

    #[test]
    fn rubric_thresholds() {
        assert_eq!(picking_rubric(0.0), 1.0);
        assert_eq!(picking_rubric(0.04), 1.0);
        assert_eq!(picking_rubric(0.06), 0.5);
        assert_eq!(picking_rubric(0.5), 0.0);
    }

    #[test]
    fn uniform_split_to_fixed_goal() {
        let t = straight_trajectory([0.5, 0.85]).unwrap();
        for s in t.steps() {
            assert_eq!(s[0], 0.0);
            assert!((s[1] - 0.04).abs() < 1e-15);
        }
    }

    #[test]
    fn noiseless_oracle_scores_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for seed in 0..50 {
            let s = sample_scene(Task::Picking, DomainKind::Target, Some(1 + (seed % 20) as u16), seed).unwrap();
            let t = oracle_trajectory(&s, 0.0, &mut rng).unwrap();
            assert_eq!(score(&t, &s).unwrap(), 1.0);
            let s = sample_scene(Task::Pouring, DomainKind::SourceExtraInfo, None, seed).unwrap();
            let t = oracle_trajectory(&s, 0.0, &mut rng).unwrap();
            assert_eq!(score(&t, &s).unwrap(), 1.0);
        }
    }

    #[test]
    fn pouring_boundary_is_inclusive() {
        let mut s = sample_scene(Task::Pouring, DomainKind::SourcePlain, None, 4).unwrap();
        let g = s.goal_point().unwrap();
        assert_eq!(score_pouring(g, &s).unwrap(), 1.0);
        assert_eq!(score_pouring([g[0] + 0.2, g[1]], &s).unwrap(), 0.0);
        assert!(score_picking(g, &s).is_err());
        // a cup whose pour point is the origin makes the boundary distance exact
        let cup = &mut s.objects[0];
        cup.x = 0.0;
        cup.y = -cup.size;
        assert_eq!(s.goal_point().unwrap(), [0.0, 0.0]);
        assert_eq!(score_pouring([POUR_RADIUS, 0.0], &s).unwrap(), 1.0);
        assert_eq!(score_pouring([0.0, POUR_RADIUS * 1.0001], &s).unwrap(), 0.0);
    }
}
