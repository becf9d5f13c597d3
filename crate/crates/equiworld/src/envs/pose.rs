use crate::autodiff::matmul_plain;
use crate::groups::Rotation3;
use crate::{Arr, F};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

/// World whose hidden state is a 3-D pose. The observation is a fixed-seed
/// two-layer random nonlinear map (tanh hidden of width 128) of the nine
/// pose-matrix entries: deterministic, injective with overwhelming
/// probability, and with no simple linear group action on observations.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct PoseEnv {
    pub d: usize,
    pub map_seed: u64,
}

struct ObsMap {
    w1: Arr,
    b1: Arr,
    w2: Arr,
    b2: Arr,
}

type MapCache = Mutex<HashMap<(usize, u64), Arc<ObsMap>>>;
static MAPS: OnceLock<MapCache> = OnceLock::new();

const HIDDEN: usize = 128;

fn obs_map(d: usize, map_seed: u64) -> Arc<ObsMap> {
    let cache = MAPS.get_or_init(|| Mutex::new(HashMap::new()));
    let mut map = cache.lock().unwrap();
    map.entry((d, map_seed))
        .or_insert_with(|| {
            let mut rng = ChaCha20Rng::seed_from_u64(map_seed ^ 0x9E37_79B9_7F4A_7C15);
            Arc::new(ObsMap {
                w1: Arr::rand_normal(&mut rng, &[HIDDEN, 9]).scale(0.8),
                b1: Arr::rand_normal(&mut rng, &[HIDDEN, 1]).scale(0.3),
                w2: Arr::rand_normal(&mut rng, &[d, HIDDEN]).scale(1.0 / (HIDDEN as f64).sqrt()),
                b2: Arr::rand_normal(&mut rng, &[d, 1]).scale(0.1),
            })
        })
        .clone()
}

impl PoseEnv {
    pub fn obs_shape(&self) -> Vec<usize> {
        vec![self.d]
    }

    pub fn render(&self, z: &Rotation3<F>) -> Arr {
        let map = obs_map(self.d, self.map_seed);
        let x = Arr::new(vec![9, 1], z.as_flat().to_vec());
        let h = matmul_plain(&map.w1, &x).add(&map.b1).map(F::tanh);
        let y = matmul_plain(&map.w2, &h).add(&map.b2);
        y.reshaped(&[self.d])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::groups::Rotation3;

    #[test]
    fn identity_action_fixes_state() {
        let z = {
            let mut rng = ChaCha20Rng::seed_from_u64(0);
            Rotation3::<F>::sample(&mut rng)
        };
        let id = Rotation3::identity();
        let stepped = id.mul(&z);
        assert!(stepped.max_abs_diff(&z) == 0.0);
    }

    #[test]
    fn conjugated_action_on_rotated_state_matches_rotated_next_state() {
        // (g a g^-1)(g z) = g (a z)
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        for _ in 0..100 {
            let g = Rotation3::<F>::sample(&mut rng);
            let a = Rotation3::<F>::sample(&mut rng);
            let z = Rotation3::<F>::sample(&mut rng);
            let lhs = Rotation3::conjugate(&g, &a).mul(&g.mul(&z));
            let rhs = g.mul(&a.mul(&z));
            assert!(lhs.max_abs_diff(&rhs) <= 1e-12);
        }
    }

    #[test]
    fn step_composes_by_left_multiplication() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        for _ in 0..100 {
            let a1 = Rotation3::<F>::sample(&mut rng);
            let a2 = Rotation3::<F>::sample(&mut rng);
            let z = Rotation3::<F>::sample(&mut rng);
            let seq = a2.mul(&a1.mul(&z));
            let joint = a2.mul(&a1).mul(&z);
            assert!(seq.max_abs_diff(&joint) <= 1e-12);
        }
    }

    #[test]
    fn distinct_poses_render_distinctly() {
        let env = PoseEnv { d: 64, map_seed: 7 };
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        for _ in 0..50 {
            let z1 = Rotation3::<F>::sample(&mut rng);
            let z2 = Rotation3::<F>::sample(&mut rng);
            if z1.max_abs_diff(&z2) < 1e-3 {
                continue;
            }
            let diff = env.render(&z1).max_abs_diff(&env.render(&z2));
            assert!(diff > 1e-6, "observations nearly collide: {diff:.3e}");
        }
    }

    #[test]
    fn render_is_deterministic_across_env_clones() {
        let env1 = PoseEnv { d: 32, map_seed: 11 };
        let env2 = PoseEnv { d: 32, map_seed: 11 };
        let z = {
            let mut rng = ChaCha20Rng::seed_from_u64(4);
            Rotation3::<F>::sample(&mut rng)
        };
        assert_eq!(env1.render(&z), env2.render(&z));
    }
}
