use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenecam::palette;

/// Workspace box on the table, meters (x right, y away from the actor, z up).
pub const WORKSPACE_MIN: [f64; 3] = [-0.22, 0.26, 0.0];
pub const WORKSPACE_MAX: [f64; 3] = [0.22, 0.56, 0.40];

pub const TABLE_COLOR: [f32; 3] = [0.5, 0.5, 0.5];
pub const SKIN_COLOR: [f32; 3] = [0.85, 0.7, 0.55];
pub const PARTICLE_COLOR: [f32; 3] = [0.0, 0.5, 1.0];

/// Object colors, all at least 0.25 (L-infinity) away from every marker and
/// from the particle color.
pub const OBJECT_COLORS: [([f32; 3], &str); 6] = [
    ([0.75, 0.5, 0.25], "orange"),
    ([0.25, 0.5, 0.75], "blue"),
    ([0.5, 0.75, 0.25], "green"),
    ([0.75, 0.25, 0.5], "pink"),
    ([0.25, 0.75, 0.5], "teal"),
    ([0.5, 0.25, 0.75], "purple"),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Push,
    PickPlace,
    Stack,
    Pour,
}

impl TaskKind {
    pub const ALL: [TaskKind; 4] = [
        TaskKind::Push,
        TaskKind::PickPlace,
        TaskKind::Stack,
        TaskKind::Pour,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            TaskKind::Push => "push",
            TaskKind::PickPlace => "pick_place",
            TaskKind::Stack => "stack",
            TaskKind::Pour => "pour",
        }
    }

    /// Text template id consumed by the model.
    pub fn template_id(&self) -> usize {
        Self::ALL.iter().position(|k| k == self).unwrap()
    }

    pub fn template(&self) -> &'static str {
        match self {
            TaskKind::Push => "push the {color} {shape} across the table",
            TaskKind::PickPlace => "pick up the {color} {shape} and put it down",
            TaskKind::Stack => "stack the {color} {shape} on the {color2} {shape2}",
            TaskKind::Pour => "pour from the {color} {shape} into the {color2} {shape2}",
        }
    }

    pub fn parse(s: &str) -> Option<TaskKind> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }
}

pub const NUM_TEMPLATES: usize = TaskKind::ALL.len();

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Block,
    Cup,
    Bottle,
}

impl Shape {
    pub fn name(&self) -> &'static str {
        match self {
            Shape::Block => "block",
            Shape::Cup => "cup",
            Shape::Bottle => "bottle",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectDesc {
    pub shape: Shape,
    pub color: [f32; 3],
    /// Center of the object's bounding box.
    pub position: [f64; 3],
    pub yaw: f64,
    /// Full extents (x, y, z); cylinders use x as the diameter.
    pub size: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetDesc {
    /// Goal center of the manipulated object (push, pick_place, stack).
    pub position: [f64; 3],
    /// Base block for stack, receiving container for pour.
    pub object: Option<usize>,
}

/// One manipulation task. `objects[0]` is always the manipulated object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub kind: TaskKind,
    pub objects: Vec<ObjectDesc>,
    pub target: TargetDesc,
    pub template: String,
}

fn linf(a: [f32; 3], b: [f32; 3]) -> f32 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f32::max)
}

pub fn color_name(c: [f32; 3]) -> &'static str {
    OBJECT_COLORS
        .iter()
        .min_by(|a, b| linf(a.0, c).total_cmp(&linf(b.0, c)))
        .map(|(_, n)| *n)
        .unwrap_or("plain")
}

impl TaskSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| {
            Err(Error::InvalidArgument(format!(
                "task {}: {msg}",
                self.kind.name()
            )))
        };
        if self.objects.is_empty() {
            return bad("no objects".into());
        }
        for (i, o) in self.objects.iter().enumerate() {
            let inside = (0..3)
                .all(|k| o.position[k] >= WORKSPACE_MIN[k] && o.position[k] <= WORKSPACE_MAX[k]);
            if !inside || o.size.iter().any(|s| !(*s > 0.0)) {
                return bad(format!("object {i} outside the workspace or degenerate"));
            }
            let reserved = palette::MARKERS
                .iter()
                .chain(std::iter::once(&PARTICLE_COLOR))
                .chain(self.objects[..i].iter().map(|p| &p.color));
            for c in reserved {
                if linf(*c, o.color) < 0.25 {
                    return bad(format!("object {i} color too close to {c:?}"));
                }
            }
        }
        let needs_ref = matches!(self.kind, TaskKind::Stack | TaskKind::Pour);
        match self.target.object {
            Some(j) if j == 0 || j >= self.objects.len() => {
                bad(format!("target object {j} invalid"))
            }
            None if needs_ref => bad("target object required".into()),
            _ => Ok(()),
        }
    }

    pub fn text(&self) -> String {
        let o = &self.objects[0];
        let mut s = self
            .template
            .replace("{color}", color_name(o.color))
            .replace("{shape}", o.shape.name());
        if let Some(t) = self.target.object.and_then(|j| self.objects.get(j)) {
            s = s
                .replace("{color2}", color_name(t.color))
                .replace("{shape2}", t.shape.name());
        }
        s
    }

    /// Samples a reachable task of the given kind.
    pub fn sample<R: Rng>(kind: TaskKind, rng: &mut R) -> TaskSpec {
        let mut colors: Vec<usize> = (0..OBJECT_COLORS.len()).collect();
        for i in (1..colors.len()).rev() {
            let j = rng.random_range(0..=i);
            colors.swap(i, j);
        }
        let color = |k: usize| OBJECT_COLORS[colors[k]].0;
        let block = |rng: &mut R, c: [f32; 3], x: f64, y: f64| {
            let s = rng.random_range(0.05..0.07);
            ObjectDesc {
                shape: Shape::Block,
                color: c,
                position: [x, y, s / 2.0],
                yaw: rng.random_range(-0.4..0.4),
                size: [s, s, s],
            }
        };
        match kind {
            TaskKind::Push => {
                let x = rng.random_range(-0.12..0.12);
                let y = rng.random_range(0.34..0.42);
                let o = block(rng, color(0), x, y);
                let dist = rng.random_range(0.08..0.12);
                let ang: f64 = rng.random_range(-0.6..0.6);
                let target = [x + dist * ang.sin(), y + dist * ang.cos(), o.position[2]];
                TaskSpec {
                    kind,
                    objects: vec![o],
                    target: TargetDesc {
                        position: target,
                        object: None,
                    },
                    template: kind.template().into(),
                }
            }
            TaskKind::PickPlace => {
                let x = rng.random_range(0.0..0.14);
                let y = rng.random_range(0.34..0.46);
                let o = block(rng, color(0), x, y);
                let tx = rng.random_range(-0.14..-0.04);
                let ty = rng.random_range(0.34..0.46);
                let target = [tx, ty, o.position[2]];
                TaskSpec {
                    kind,
                    objects: vec![o],
                    target: TargetDesc {
                        position: target,
                        object: None,
                    },
                    template: kind.template().into(),
                }
            }
            TaskKind::Stack => {
                let x = rng.random_range(0.04..0.14);
                let y = rng.random_range(0.34..0.46);
                let o = block(rng, color(0), x, y);
                let bx = rng.random_range(-0.14..-0.06);
                let by = rng.random_range(0.34..0.46);
                let mut base = block(rng, color(1), bx, by);
                base.size = [0.075, 0.075, 0.06];
                base.position[2] = 0.03;
                let target = [bx, by, base.size[2] + o.size[2] / 2.0];
                TaskSpec {
                    kind,
                    objects: vec![o, base],
                    target: TargetDesc {
                        position: target,
                        object: Some(1),
                    },
                    template: kind.template().into(),
                }
            }
            TaskKind::Pour => {
                let cx = rng.random_range(-0.12..-0.04);
                let cy = rng.random_range(0.36..0.46);
                let cup = ObjectDesc {
                    shape: Shape::Cup,
                    color: color(1),
                    position: [cx, cy, 0.05],
                    yaw: 0.0,
                    size: [0.1, 0.1, 0.1],
                };
                let bottle = ObjectDesc {
                    shape: Shape::Bottle,
                    color: color(0),
                    position: [
                        cx + rng.random_range(0.18..0.22),
                        cy + rng.random_range(-0.04..0.04),
                        0.07,
                    ],
                    yaw: 0.0,
                    size: [0.06, 0.06, 0.14],
                };
                TaskSpec {
                    kind,
                    target: TargetDesc {
                        position: cup.position,
                        object: Some(1),
                    },
                    objects: vec![bottle, cup],
                    template: kind.template().into(),
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn sampled_tasks_validate() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            for kind in TaskKind::ALL {
                TaskSpec::sample(kind, &mut rng).validate().unwrap();
            }
        }
    }

    #[test]
    fn marker_colored_object_rejected() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut t = TaskSpec::sample(TaskKind::Push, &mut rng);
        t.objects[0].color = [0.95, 0.05, 0.0];
        assert!(t.validate().is_err());
    }

    #[test]
    fn text_fills_template() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let t = TaskSpec::sample(TaskKind::Pour, &mut rng);
        let text = t.text();
        assert!(text.starts_with("pour from the "));
        assert!(text.contains("bottle") && text.contains("cup") && !text.contains('{'));
    }
}
