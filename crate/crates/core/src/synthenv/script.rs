//! Scripted manipulation: arm kinematics, end-effector splines, object
//! attachment and ballistic pour particles.

use rand::Rng;

use super::task::{Shape, TaskKind, TaskSpec};
use crate::error::{Error, Result};
use crate::scenecam::{
    add, norm, normalize, palette, scale, sub, Edge, Keypoint3, KeypointSet3D, Quat,
};

pub const SHOULDER: [f64; 3] = [0.17, 0.04, 0.33];
pub const UPPER_ARM: f64 = 0.34;
pub const FOREARM: f64 = 0.32;
/// Fraction of full arm extension a target may require.
pub const REACH_MARGIN: f64 = 0.98;
pub const FINGER_LENGTH: f64 = 0.09;
pub const FINGER_SPREAD_DEG: [f64; 5] = [-50.0, -25.0, 0.0, 25.0, 50.0];

/// Wall-clock duration of every episode; frame k sits at k / (L - 1).
pub const EPISODE_SECONDS: f64 = 3.0;
pub const GRAVITY: f64 = 9.81;
/// Each settled particle shows as one fill pixel in the container.
pub const POUR_PARTICLES: usize = 96;

const POUR_TILT_RAD: f64 = -115.0 * std::f64::consts::PI / 180.0;

pub const KEYPOINT_IDS: [&str; 8] = [
    "shoulder", "elbow", "wrist", "tip1", "tip2", "tip3", "tip4", "tip5",
];

/// Skeleton edges as index pairs into [`KEYPOINT_IDS`].
pub fn skeleton_edges() -> Vec<Edge> {
    let mut pairs = vec![(0, 1), (1, 2)];
    pairs.extend((3..8).map(|k| (2, k)));
    pairs
        .into_iter()
        .map(|(a, b)| Edge {
            a,
            b,
            color: palette::edge_color(KEYPOINT_IDS[a], KEYPOINT_IDS[b]),
        })
        .collect()
}

fn smoothstep(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * (3.0 - 2.0 * x)
}

fn lerp(a: [f64; 3], b: [f64; 3], f: f64) -> [f64; 3] {
    add(a, scale(sub(b, a), f))
}

/// Elbow position from two-link inverse kinematics; the elbow bends toward
/// the outside and down.
pub fn solve_elbow(shoulder: [f64; 3], wrist: [f64; 3]) -> [f64; 3] {
    let axis = sub(wrist, shoulder);
    let d = norm(axis).clamp(1e-9, UPPER_ARM + FOREARM);
    let n = scale(axis, 1.0 / norm(axis).max(1e-9));
    let along = (UPPER_ARM * UPPER_ARM - FOREARM * FOREARM + d * d) / (2.0 * d);
    let radius = (UPPER_ARM * UPPER_ARM - along * along).max(0.0).sqrt();
    let pole = normalize([1.0, 0.0, -1.0]);
    let mut perp = sub(pole, scale(n, crate::scenecam::dot(pole, n)));
    if norm(perp) < 1e-9 {
        perp = [0.0, 0.0, -1.0];
    }
    add(
        add(shoulder, scale(n, along)),
        scale(normalize(perp), radius),
    )
}

/// Full arm + hand keypoint set for a wrist position.
pub fn arm_keypoints(wrist: [f64; 3]) -> KeypointSet3D {
    let elbow = solve_elbow(SHOULDER, wrist);
    let mut fwd = sub(wrist, elbow);
    fwd[2] = 0.0;
    let fwd = if norm(fwd) < 1e-6 {
        [0.0, 1.0, 0.0]
    } else {
        normalize(fwd)
    };
    let right = [fwd[1], -fwd[0], 0.0];
    let mut pos = vec![SHOULDER, elbow, wrist];
    for deg in FINGER_SPREAD_DEG {
        let a = deg.to_radians();
        let dir = add(scale(fwd, a.cos()), scale(right, a.sin()));
        pos.push(add(
            wrist,
            add(scale(dir, FINGER_LENGTH), [0.0, 0.0, -0.015]),
        ));
    }
    KeypointSet3D {
        points: KEYPOINT_IDS
            .iter()
            .zip(pos)
            .map(|(id, position)| Keypoint3 {
                id: id.to_string(),
                position,
            })
            .collect(),
        edges: skeleton_edges(),
    }
}

#[derive(Debug, Clone, Copy)]
struct Attachment {
    object: usize,
    from: f64,
    to: f64,
    /// object center = wrist - offset
    offset: [f64; 3],
}

#[derive(Debug, Clone)]
struct Emission {
    start: f64,
    end: f64,
    mouth: [f64; 3],
    settle_z: f64,
    jitter: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, Copy)]
struct Tilt {
    object: usize,
    from: f64,
    to: f64,
    angle: f64,
}

/// Time-parameterized script for one episode.
#[derive(Debug, Clone)]
pub struct Script {
    task: TaskSpec,
    keys: Vec<(f64, [f64; 3])>,
    attachments: Vec<Attachment>,
    tilt: Option<Tilt>,
    emission: Option<Emission>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectState {
    pub shape: Shape,
    pub color: [f32; 3],
    pub center: [f64; 3],
    pub orientation: Quat,
    pub size: [f64; 3],
}

/// Scene snapshot that the renderer consumes.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneState {
    pub objects: Vec<ObjectState>,
    /// Empty when no arm is in the scene.
    pub keypoints: KeypointSet3D,
    pub particles: Vec<[f64; 3]>,
    /// Settled particle count per container object.
    pub settled: Vec<(usize, usize)>,
}

impl SceneState {
    pub fn empty() -> Self {
        SceneState {
            objects: Vec::new(),
            keypoints: KeypointSet3D {
                points: Vec::new(),
                edges: Vec::new(),
            },
            particles: Vec::new(),
            settled: Vec::new(),
        }
    }
}

impl Script {
    pub fn new<R: Rng>(task: &TaskSpec, rng: &mut R) -> Result<Self> {
        task.validate()?;
        let rest = [
            0.14 + rng.random_range(-0.02..0.02),
            0.27 + rng.random_range(-0.02..0.02),
            0.14 + rng.random_range(-0.02..0.02),
        ];
        let rest_end = add(
            rest,
            [
                rng.random_range(-0.02..0.02),
                rng.random_range(-0.02..0.02),
                0.0,
            ],
        );
        let up = |p: [f64; 3], h: f64| add(p, [0.0, 0.0, h]);
        let o = &task.objects[0];
        let mut script = Script {
            task: task.clone(),
            keys: Vec::new(),
            attachments: Vec::new(),
            tilt: None,
            emission: None,
        };
        match task.kind {
            TaskKind::PickPlace | TaskKind::Stack => {
                let offset = [0.0, 0.0, o.size[2] / 2.0 + 0.03];
                let grasp = add(o.position, offset);
                let place = add(task.target.position, offset);
                script.keys = vec![
                    (0.0, rest),
                    (0.18, up(grasp, 0.07)),
                    (0.28, grasp),
                    (0.42, up(grasp, 0.10)),
                    (0.62, up(place, 0.10)),
                    (0.74, place),
                    (0.84, up(place, 0.08)),
                    (1.0, rest_end),
                ];
                script.attachments.push(Attachment {
                    object: 0,
                    from: 0.28,
                    to: 0.74,
                    offset,
                });
            }
            TaskKind::Push => {
                let mut dir = sub(task.target.position, o.position);
                dir[2] = 0.0;
                let dir = normalize(dir);
                // wrist sits behind the object, slightly above its center
                let offset = add(scale(dir, -(o.size[0] / 2.0 + 0.03)), [0.0, 0.0, 0.01]);
                let contact = add(o.position, offset);
                let finish = add(task.target.position, offset);
                script.keys = vec![
                    (0.0, rest),
                    (0.18, up(contact, 0.08)),
                    (0.30, contact),
                    (0.70, finish),
                    (0.82, up(finish, 0.08)),
                    (1.0, rest_end),
                ];
                script.attachments.push(Attachment {
                    object: 0,
                    from: 0.30,
                    to: 0.70,
                    offset,
                });
            }
            TaskKind::Pour => {
                let cup = &task.objects[task.target.object.unwrap_or(1)];
                let grip = [0.07, 0.0, 0.03];
                let offset = grip;
                let grasp = add(o.position, grip);
                let pour_center = add(cup.position, [0.09, 0.0, cup.size[2] / 2.0 + 0.08]);
                let pour = add(pour_center, grip);
                script.keys = vec![(0.0, rest), (0.03, grasp), (0.055, pour), (1.0, pour)];
                script.attachments.push(Attachment {
                    object: 0,
                    from: 0.03,
                    to: 1.0,
                    offset,
                });
                script.tilt = Some(Tilt {
                    object: 0,
                    from: 0.03,
                    to: 0.055,
                    angle: POUR_TILT_RAD,
                });
                let tilt = Quat::from_axis_angle([0.0, 1.0, 0.0], POUR_TILT_RAD);
                let mouth = add(pour_center, tilt.rotate([0.0, 0.0, o.size[2] / 2.0]));
                let jitter = (0..POUR_PARTICLES)
                    .map(|_| {
                        [
                            rng.random_range(-0.008..0.008),
                            rng.random_range(-0.008..0.008),
                        ]
                    })
                    .collect();
                script.emission = Some(Emission {
                    start: 0.06,
                    end: 0.94,
                    mouth,
                    settle_z: cup.position[2] - cup.size[2] / 2.0 + 0.02,
                    jitter,
                });
            }
        }
        let limit = REACH_MARGIN * (UPPER_ARM + FOREARM);
        for (_, w) in &script.keys {
            let d = norm(sub(*w, SHOULDER));
            if d > limit {
                return Err(Error::Unreachable {
                    task: task.kind.name().into(),
                    reason: format!(
                        "wrist target {w:?} is {d:.3} m from the shoulder (reach {limit:.3} m)"
                    ),
                });
            }
        }
        Ok(script)
    }

    pub fn wrist(&self, s: f64) -> [f64; 3] {
        let keys = &self.keys;
        if s <= keys[0].0 {
            return keys[0].1;
        }
        for w in keys.windows(2) {
            let ((s0, a), (s1, b)) = (w[0], w[1]);
            if s <= s1 {
                let f = if s1 > s0 { (s - s0) / (s1 - s0) } else { 1.0 };
                return lerp(a, b, smoothstep(f));
            }
        }
        keys[keys.len() - 1].1
    }

    fn emission_time(&self, e: &Emission, i: usize) -> f64 {
        e.start + (e.end - e.start) * i as f64 / e.jitter.len() as f64
    }

    /// Particles of the pour stream at time `s`: (flying positions, settled count).
    pub fn particles(&self, s: f64) -> (Vec<[f64; 3]>, usize) {
        let Some(e) = &self.emission else {
            return (Vec::new(), 0);
        };
        let mut flying = Vec::new();
        let mut settled = 0;
        for (i, j) in e.jitter.iter().enumerate() {
            let t0 = self.emission_time(e, i);
            if s < t0 {
                continue;
            }
            let dt = (s - t0) * EPISODE_SECONDS;
            let z = e.mouth[2] - 0.5 * GRAVITY * dt * dt;
            if z <= e.settle_z {
                settled += 1;
            } else {
                flying.push([e.mouth[0] + j[0], e.mouth[1] + j[1], z]);
            }
        }
        (flying, settled)
    }

    pub fn total_particles(&self) -> usize {
        self.emission.as_ref().map_or(0, |e| e.jitter.len())
    }

    pub fn state(&self, s: f64) -> SceneState {
        let wrist = self.wrist(s);
        let mut objects: Vec<ObjectState> = self
            .task
            .objects
            .iter()
            .map(|o| ObjectState {
                shape: o.shape,
                color: o.color,
                center: o.position,
                orientation: Quat::from_axis_angle([0.0, 0.0, 1.0], o.yaw),
                size: o.size,
            })
            .collect();
        for a in &self.attachments {
            if s >= a.from {
                let w = self.wrist(s.min(a.to));
                objects[a.object].center = sub(w, a.offset);
            }
        }
        if let Some(t) = &self.tilt {
            let f = smoothstep((s - t.from) / (t.to - t.from));
            let q = Quat::from_axis_angle([0.0, 1.0, 0.0], t.angle * f);
            objects[t.object].orientation = q.mul(&objects[t.object].orientation);
        }
        let (particles, count) = self.particles(s);
        let settled = match (&self.emission, self.task.target.object) {
            (Some(_), Some(cup)) => vec![(cup, count)],
            _ => Vec::new(),
        };
        SceneState {
            objects,
            keypoints: arm_keypoints(wrist),
            particles,
            settled,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn ik_preserves_link_lengths() {
        for w in [[0.0, 0.4, 0.05], [-0.15, 0.5, 0.1], [0.2, 0.3, 0.2]] {
            let e = solve_elbow(SHOULDER, w);
            assert!((norm(sub(e, SHOULDER)) - UPPER_ARM).abs() < 1e-9);
            assert!((norm(sub(w, e)) - FOREARM).abs() < 1e-9);
        }
    }

    #[test]
    fn unreachable_target_names_task() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut task = TaskSpec::sample(TaskKind::PickPlace, &mut rng);
        task.target.position = [0.2, 0.56, 0.03];
        task.objects[0].position = [-0.22, 0.56, 0.03];
        let err = Script::new(&task, &mut rng).unwrap_err();
        assert!(
            matches!(err, Error::Unreachable { ref task, .. } if task == "pick_place"),
            "{err}"
        );
    }

    #[test]
    fn pour_particles_conserved_and_monotone() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let task = TaskSpec::sample(TaskKind::Pour, &mut rng);
        let script = Script::new(&task, &mut rng).unwrap();
        let mut last = 0;
        for k in 0..=200 {
            let s = k as f64 / 200.0;
            let (flying, settled) = script.particles(s);
            assert!(settled >= last);
            last = settled;
            let pending = (0..POUR_PARTICLES)
                .filter(|&i| s < script.emission_time(script.emission.as_ref().unwrap(), i))
                .count();
            assert_eq!(flying.len() + settled + pending, script.total_particles());
        }
        assert_eq!(last, POUR_PARTICLES);
    }
}
