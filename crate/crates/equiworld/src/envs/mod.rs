//! Deterministic synthetic environments with known hidden state and a known
//! ground-truth group action on states, actions, and observations.

mod arm;
mod dataset;
mod grid;
mod pose;
mod sine;

pub use arm::{ArmEnv, ArmState};
pub use dataset::{generate_dataset, orbit_complete, TransitionDataset, TransitionTriple};
pub use grid::{Dir, GridEnv, GridRender, GridState, RelDir};
pub use pose::PoseEnv;
pub use sine::make_sine_dataset;

use crate::groups::{direct_product, make_cyclic, make_symmetric, permutations, FiniteGroup, Rotation3};
use crate::{Arr, F};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("empty action subset")]
    EmptyActionSubset,
    #[error("unknown action name '{0}' for this environment")]
    UnknownAction(String),
    #[error("environment '{env}' has no exact ground-truth observation transform: {reason}")]
    UnsupportedTransform { env: String, reason: String },
    #[error("dataset file malformed: {0}")]
    MalformedDataset(String),
}

/// Hidden generative state; used by oracles and metrics, never fed to models.
#[derive(Clone, Debug, PartialEq)]
pub enum Hidden {
    Grid(GridState),
    Arm(ArmState),
    Pose(Rotation3<F>),
}

/// Environment action.
#[derive(Clone, Debug, PartialEq)]
pub enum Action {
    /// Move one grid object. `dir` is an absolute direction for the shapes
    /// world and heading-relative for the rush-hour variant.
    Grid { obj: usize, dir: usize },
    /// Joint forces in [-1, 1]^2.
    Arm([F; 2]),
    /// A rotation applied on the left of the pose.
    Pose(Rotation3<F>),
}

/// Environment kinds, fully determined by their serializable parameters.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Env {
    Shapes(GridEnv),
    RushHour(GridEnv),
    Arm(ArmEnv),
    Pose(PoseEnv),
}

impl Env {
    pub fn name(&self) -> &'static str {
        match self {
            Env::Shapes(_) => "shapes",
            Env::RushHour(_) => "rush_hour",
            Env::Arm(_) => "arm",
            Env::Pose(_) => "pose",
        }
    }

    pub fn grid(&self) -> Option<&GridEnv> {
        match self {
            Env::Shapes(g) | Env::RushHour(g) => Some(g),
            _ => None,
        }
    }

    pub fn is_rush_hour(&self) -> bool {
        matches!(self, Env::RushHour(_))
    }

    pub fn obs_shape(&self) -> Vec<usize> {
        match self {
            Env::Shapes(g) | Env::RushHour(g) => g.obs_shape(),
            Env::Arm(a) => a.obs_shape(),
            Env::Pose(p) => p.obs_shape(),
        }
    }

    pub fn sample_state<R: Rng>(&self, rng: &mut R) -> Hidden {
        match self {
            Env::Shapes(g) => Hidden::Grid(g.sample_state(rng, false)),
            Env::RushHour(g) => Hidden::Grid(g.sample_state(rng, true)),
            Env::Arm(a) => Hidden::Arm(a.sample_state(rng)),
            Env::Pose(_) => Hidden::Pose(Rotation3::sample(rng)),
        }
    }

    /// Uniform random action, optionally restricted to named directions
    /// (grid environments only).
    pub fn sample_action<R: Rng>(&self, rng: &mut R, filter: Option<&[usize]>) -> Action {
        match self {
            Env::Shapes(g) | Env::RushHour(g) => {
                let dirs = filter.map(<[usize]>::to_vec).unwrap_or_else(|| (0..4).collect());
                let obj = rng.gen_range(0..g.k);
                let dir = dirs[rng.gen_range(0..dirs.len())];
                Action::Grid { obj, dir }
            }
            Env::Arm(_) => Action::Arm([rng.gen_range(-1.0..=1.0), rng.gen_range(-1.0..=1.0)]),
            Env::Pose(_) => Action::Pose(Rotation3::sample(rng)),
        }
    }

    /// Resolve direction names ("up", "forward", ...) to direction indices.
    pub fn parse_action_filter(&self, names: &[String]) -> Result<Vec<usize>, EnvError> {
        if names.is_empty() {
            return Err(EnvError::EmptyActionSubset);
        }
        names
            .iter()
            .map(|s| match self {
                Env::Shapes(_) => Dir::from_name(s).map(|d| d.cw_index()).ok_or_else(|| EnvError::UnknownAction(s.clone())),
                Env::RushHour(_) => RelDir::from_name(s).map(|d| d as usize).ok_or_else(|| EnvError::UnknownAction(s.clone())),
                _ => Err(EnvError::UnknownAction(s.clone())),
            })
            .collect()
    }

    pub fn step(&self, state: &Hidden, action: &Action) -> Hidden {
        match (self, state, action) {
            (Env::Shapes(g), Hidden::Grid(s), Action::Grid { obj, dir }) => {
                Hidden::Grid(g.step(s, *obj, *dir, false))
            }
            (Env::RushHour(g), Hidden::Grid(s), Action::Grid { obj, dir }) => {
                Hidden::Grid(g.step(s, *obj, *dir, true))
            }
            (Env::Arm(a), Hidden::Arm(s), Action::Arm(f)) => Hidden::Arm(a.step(s, *f)),
            (Env::Pose(_), Hidden::Pose(z), Action::Pose(a)) => Hidden::Pose(a.mul(z)),
            _ => panic!("state/action kind does not match environment {}", self.name()),
        }
    }

    pub fn render(&self, state: &Hidden) -> Arr {
        match (self, state) {
            (Env::Shapes(g) | Env::RushHour(g), Hidden::Grid(s)) => g.render(s),
            (Env::Arm(a), Hidden::Arm(s)) => a.render(s),
            (Env::Pose(p), Hidden::Pose(z)) => p.render(z),
            _ => panic!("state kind does not match environment {}", self.name()),
        }
    }

    /// Order of the finite symmetry group (grid: |C4 x S_k|, arm: |D4|).
    /// The pose world's group is continuous; callers sample instead.
    pub fn group(&self) -> Option<Arc<FiniteGroup>> {
        match self {
            Env::Shapes(g) | Env::RushHour(g) => Some(grid_group(g.k)),
            Env::Arm(_) => Some(crate::equivariant::Fiber::P4M.group().clone()),
            Env::Pose(_) => None,
        }
    }

    /// Ground-truth action of group element `g` on the hidden state.
    pub fn transform_state(&self, g: usize, state: &Hidden) -> Hidden {
        match (self, state) {
            (Env::Shapes(ge) | Env::RushHour(ge), Hidden::Grid(s)) => {
                let (rot, perm) = grid_split(ge.k, g);
                Hidden::Grid(ge.transform(s, rot, &perm))
            }
            (Env::Arm(a), Hidden::Arm(s)) => Hidden::Arm(a.transform(g, s)),
            (Env::Pose(_), Hidden::Pose(_)) => panic!("pose world uses transform_state_so3"),
            _ => panic!("state kind mismatch"),
        }
    }

    pub fn transform_action(&self, g: usize, action: &Action) -> Action {
        match (self, action) {
            (Env::Shapes(ge), Action::Grid { obj, dir }) => {
                let (rot, perm) = grid_split(ge.k, g);
                // Rotation cycles absolute directions up -> left -> down -> right.
                let dir = Dir::from_cw_index(*dir).rotate_ccw(rot).cw_index();
                Action::Grid { obj: perm[*obj], dir }
            }
            (Env::RushHour(ge), Action::Grid { obj, dir }) => {
                // Relative actions are fixed by rotations, reindexed by the permutation.
                let (_, perm) = grid_split(ge.k, g);
                Action::Grid { obj: perm[*obj], dir: *dir }
            }
            (Env::Arm(_), Action::Arm(a)) => {
                // Forces carry the flip sign: unchanged by rotations, negated
                // by reflections.
                if g >= 4 {
                    Action::Arm([-a[0], -a[1]])
                } else {
                    Action::Arm(*a)
                }
            }
            (Env::Pose(_), Action::Pose(_)) => panic!("pose world uses transform_action_so3"),
            _ => panic!("action kind mismatch"),
        }
    }

    /// Exact ground-truth observation transform, where one exists: channel
    /// permutation + plane rotation for the channels grid render, the pixel
    /// D4 action for the unsheared arm render. Errors otherwise.
    pub fn transform_obs(&self, g: usize, obs: &Arr) -> Result<Arr, EnvError> {
        match self {
            Env::Shapes(ge) | Env::RushHour(ge) => match ge.render {
                GridRender::Channels => {
                    let (rot, perm) = grid_split(ge.k, g);
                    Ok(ge.transform_channels_obs(obs, rot, &perm))
                }
                GridRender::Pixel => Err(EnvError::UnsupportedTransform {
                    env: self.name().to_string(),
                    reason: "object permutations recolor pixels; no index transform exists".into(),
                }),
            },
            Env::Arm(a) => {
                if a.shear != 0.0 {
                    return Err(EnvError::UnsupportedTransform {
                        env: self.name().to_string(),
                        reason: format!("shear {} breaks the exact pixel rotation", a.shear),
                    });
                }
                Ok(arm::transform_obs(obs, g))
            }
            Env::Pose(_) => Err(EnvError::UnsupportedTransform {
                env: self.name().to_string(),
                reason: "pose observations transform by re-rendering the transformed state".into(),
            }),
        }
    }

    /// SO(3) state/action transforms for the pose world.
    pub fn transform_state_so3(&self, g: &Rotation3<F>, state: &Hidden) -> Hidden {
        match state {
            Hidden::Pose(z) => Hidden::Pose(g.mul(z)),
            _ => panic!("not a pose state"),
        }
    }

    pub fn transform_action_so3(&self, g: &Rotation3<F>, action: &Action) -> Action {
        match action {
            Action::Pose(a) => Action::Pose(Rotation3::conjugate(g, a)),
            _ => panic!("not a pose action"),
        }
    }

    /// Flatten a hidden state for serialization.
    pub fn hidden_to_array(&self, h: &Hidden) -> Arr {
        match h {
            Hidden::Grid(s) => s.to_array(),
            Hidden::Arm(s) => Arr::from_f64(&[4], &[s.th1, s.th2, s.om1, s.om2]),
            Hidden::Pose(z) => Arr::new(vec![9], z.as_flat().to_vec()),
        }
    }

    pub fn hidden_from_array(&self, a: &Arr) -> Result<Hidden, EnvError> {
        match self {
            Env::Shapes(g) | Env::RushHour(g) => {
                GridState::from_array(a, g.k, self.is_rush_hour()).map(Hidden::Grid)
            }
            Env::Arm(_) => {
                let d = a.data();
                if d.len() != 4 {
                    return Err(EnvError::MalformedDataset("arm state needs 4 values".into()));
                }
                Ok(Hidden::Arm(ArmState { th1: d[0], th2: d[1], om1: d[2], om2: d[3] }))
            }
            Env::Pose(_) => {
                let d = a.data();
                if d.len() != 9 {
                    return Err(EnvError::MalformedDataset("pose state needs 9 values".into()));
                }
                let mut m = [0.0; 9];
                m.copy_from_slice(d);
                Rotation3::from_flat(m, 1e-8)
                    .map(Hidden::Pose)
                    .map_err(|e| EnvError::MalformedDataset(e.to_string()))
            }
        }
    }

    pub fn action_to_array(&self, a: &Action) -> Arr {
        match a {
            Action::Grid { obj, dir } => Arr::from_f64(&[2], &[*obj as f64, *dir as f64]),
            Action::Arm(f) => Arr::from_f64(&[2], &[f[0], f[1]]),
            Action::Pose(r) => Arr::new(vec![9], r.as_flat().to_vec()),
        }
    }

    pub fn action_from_array(&self, a: &Arr) -> Result<Action, EnvError> {
        match self {
            Env::Shapes(_) | Env::RushHour(_) => {
                let d = a.data();
                if d.len() != 2 {
                    return Err(EnvError::MalformedDataset("grid action needs 2 values".into()));
                }
                Ok(Action::Grid { obj: d[0] as usize, dir: d[1] as usize })
            }
            Env::Arm(_) => {
                let d = a.data();
                if d.len() != 2 {
                    return Err(EnvError::MalformedDataset("arm action needs 2 values".into()));
                }
                Ok(Action::Arm([d[0], d[1]]))
            }
            Env::Pose(_) => {
                let d = a.data();
                if d.len() != 9 {
                    return Err(EnvError::MalformedDataset("pose action needs 9 values".into()));
                }
                let mut m = [0.0; 9];
                m.copy_from_slice(d);
                Rotation3::from_flat(m, 1e-8)
                    .map(Action::Pose)
                    .map_err(|e| EnvError::MalformedDataset(e.to_string()))
            }
        }
    }
}

type GroupCache = Mutex<HashMap<usize, (Arc<FiniteGroup>, Arc<Vec<Vec<usize>>>)>>;
static GRID_GROUPS: OnceLock<GroupCache> = OnceLock::new();

/// C4 x S_k with its permutation table, cached per k.
pub fn grid_group(k: usize) -> Arc<FiniteGroup> {
    grid_group_entry(k).0
}

/// Lexicographic permutation list backing the S_k factor indexing.
pub fn grid_perms(k: usize) -> Arc<Vec<Vec<usize>>> {
    grid_group_entry(k).1
}

fn grid_group_entry(k: usize) -> (Arc<FiniteGroup>, Arc<Vec<Vec<usize>>>) {
    let cache = GRID_GROUPS.get_or_init(|| Mutex::new(HashMap::new()));
    let mut map = cache.lock().unwrap();
    map.entry(k)
        .or_insert_with(|| {
            let c4 = make_cyclic(4).unwrap();
            let sk = make_symmetric(k).unwrap();
            let g = direct_product(&c4, &sk).unwrap();
            (g, Arc::new(permutations(k)))
        })
        .clone()
}

/// Split a C4 x S_k element into (rotation count, permutation vector).
pub fn grid_split(k: usize, g: usize) -> (usize, Vec<usize>) {
    let group = grid_group(k);
    let (rot, pidx) = group.product_split(g).expect("grid group is a product");
    (rot, grid_perms(k)[pidx].clone())
}
