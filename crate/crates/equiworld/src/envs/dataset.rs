use super::{Action, Env, EnvError, Hidden};
use crate::autodiff::{read_array, write_array};
use crate::groups::Rotation3;
use crate::{Arr, F};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use std::io::{self, Read, Write};

/// One observed transition plus the hidden generative states behind it.
/// Hidden states feed oracles and metrics only, never models.
#[derive(Clone, Debug)]
pub struct TransitionTriple {
    pub obs: Arr,
    pub action: Action,
    pub next_obs: Arr,
    pub hidden: Hidden,
    pub hidden_next: Hidden,
    pub episode: usize,
    pub step: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct DatasetHeader {
    env: Env,
    seed: u64,
    episodes: usize,
    horizon: usize,
    count: usize,
    action_filter: Option<Vec<String>>,
    has_orbit_tags: bool,
}

/// Dataset of transitions from one environment and seed. When produced by
/// [`orbit_complete`], `orbit_tags[i]` records (source triple, group element).
#[derive(Clone, Debug)]
pub struct TransitionDataset {
    pub env: Env,
    pub seed: u64,
    pub episodes: usize,
    pub horizon: usize,
    pub action_filter: Option<Vec<String>>,
    pub triples: Vec<TransitionTriple>,
    pub orbit_tags: Option<Vec<(usize, usize)>>,
}

/// Roll episodes with a uniform random policy over the full action space or
/// the named subset. Per-episode RNG streams keep generation deterministic
/// and order-independent.
pub fn generate_dataset(
    env: &Env,
    episodes: usize,
    horizon: usize,
    seed: u64,
    action_filter: Option<&[String]>,
) -> Result<TransitionDataset, EnvError> {
    let filter_idx = match action_filter {
        Some(names) => Some(env.parse_action_filter(names)?),
        None => None,
    };
    let mut triples = Vec::with_capacity(episodes * horizon);
    for ep in 0..episodes {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(ep as u64 + 1);
        let mut state = env.sample_state(&mut rng);
        for st in 0..horizon {
            let action = env.sample_action(&mut rng, filter_idx.as_deref());
            let next = env.step(&state, &action);
            triples.push(TransitionTriple {
                obs: env.render(&state),
                action,
                next_obs: env.render(&next),
                hidden: state.clone(),
                hidden_next: next.clone(),
                episode: ep,
                step: st,
            });
            state = next;
        }
    }
    Ok(TransitionDataset {
        env: env.clone(),
        seed,
        episodes,
        horizon,
        action_filter: action_filter.map(<[String]>::to_vec),
        triples,
        orbit_tags: None,
    })
}

impl TransitionDataset {
    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    /// Check the construction invariant s' = render(step(hidden, a)) on every
    /// triple by replaying the hidden states.
    pub fn replay_check(&self) -> bool {
        self.triples.iter().all(|t| {
            let next = self.env.step(&t.hidden, &t.action);
            next == t.hidden_next && self.env.render(&next) == t.next_obs
        })
    }

    /// Episode-grouped views, step-ordered; used by multi-step evaluation.
    pub fn episodes_view(&self) -> Vec<Vec<&TransitionTriple>> {
        let mut out: Vec<Vec<&TransitionTriple>> = Vec::new();
        for t in &self.triples {
            if t.step == 0 {
                out.push(Vec::new());
            }
            out.last_mut().expect("episode starts at step 0").push(t);
        }
        out
    }

    pub fn write<W: Write>(&self, w: &mut W) -> io::Result<()> {
        let header = DatasetHeader {
            env: self.env.clone(),
            seed: self.seed,
            episodes: self.episodes,
            horizon: self.horizon,
            count: self.triples.len(),
            action_filter: self.action_filter.clone(),
            has_orbit_tags: self.orbit_tags.is_some(),
        };
        let hjson = serde_json::to_vec(&header).map_err(io::Error::other)?;
        w.write_all(b"EQWD")?;
        w.write_all(&(hjson.len() as u32).to_le_bytes())?;
        w.write_all(&hjson)?;
        for t in &self.triples {
            write_array(w, &t.obs)?;
            write_array(w, &self.env.action_to_array(&t.action))?;
            write_array(w, &t.next_obs)?;
            write_array(w, &self.env.hidden_to_array(&t.hidden))?;
            write_array(w, &self.env.hidden_to_array(&t.hidden_next))?;
            write_array(w, &Arr::from_f64(&[2], &[t.episode as f64, t.step as f64]))?;
        }
        if let Some(tags) = &self.orbit_tags {
            for &(src, g) in tags {
                w.write_all(&(src as u64).to_le_bytes())?;
                w.write_all(&(g as u64).to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read<R: Read>(r: &mut R) -> Result<Self, EnvError> {
        let bad = |m: &str| EnvError::MalformedDataset(m.to_string());
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|e| bad(&e.to_string()))?;
        if &magic != b"EQWD" {
            return Err(bad("bad magic"));
        }
        let mut lenb = [0u8; 4];
        r.read_exact(&mut lenb).map_err(|e| bad(&e.to_string()))?;
        let mut hjson = vec![0u8; u32::from_le_bytes(lenb) as usize];
        r.read_exact(&mut hjson).map_err(|e| bad(&e.to_string()))?;
        let header: DatasetHeader =
            serde_json::from_slice(&hjson).map_err(|e| bad(&e.to_string()))?;
        let mut triples = Vec::with_capacity(header.count);
        for _ in 0..header.count {
            let obs: Arr = read_array(r).map_err(|e| bad(&e.to_string()))?;
            let action = header.env.action_from_array(&read_array(r).map_err(|e| bad(&e.to_string()))?)?;
            let next_obs: Arr = read_array(r).map_err(|e| bad(&e.to_string()))?;
            let hidden = header.env.hidden_from_array(&read_array(r).map_err(|e| bad(&e.to_string()))?)?;
            let hidden_next =
                header.env.hidden_from_array(&read_array(r).map_err(|e| bad(&e.to_string()))?)?;
            let meta: Arr = read_array(r).map_err(|e| bad(&e.to_string()))?;
            triples.push(TransitionTriple {
                obs,
                action,
                next_obs,
                hidden,
                hidden_next,
                episode: meta.data()[0] as usize,
                step: meta.data()[1] as usize,
            });
        }
        let orbit_tags = if header.has_orbit_tags {
            let mut tags = Vec::with_capacity(header.count);
            for _ in 0..header.count {
                let mut b = [0u8; 8];
                r.read_exact(&mut b).map_err(|e| bad(&e.to_string()))?;
                let src = u64::from_le_bytes(b) as usize;
                r.read_exact(&mut b).map_err(|e| bad(&e.to_string()))?;
                tags.push((src, u64::from_le_bytes(b) as usize));
            }
            Some(tags)
        } else {
            None
        };
        Ok(TransitionDataset {
            env: header.env,
            seed: header.seed,
            episodes: header.episodes,
            horizon: header.horizon,
            action_filter: header.action_filter,
            triples,
            orbit_tags,
        })
    }
}

/// The set of all group transforms of all samples: for each triple and each
/// g, transform the hidden states and actions, re-deriving observations
/// through the exact ground-truth transform. Requires an environment with an
/// exact observation transform (channels grid, unsheared arm); the pose
/// world passes explicit rotations instead.
pub fn orbit_complete(dataset: &TransitionDataset, group_elements: Option<&[usize]>) -> Result<TransitionDataset, EnvError> {
    let env = &dataset.env;
    let group = env.group().ok_or_else(|| EnvError::UnsupportedTransform {
        env: env.name().to_string(),
        reason: "continuous symmetry group; use orbit_complete_so3".into(),
    })?;
    // Fail fast if the observation transform is unsupported.
    if let Some(t) = dataset.triples.first() {
        env.transform_obs(group.identity(), &t.obs)?;
    }
    let elements: Vec<usize> = match group_elements {
        Some(e) => e.to_vec(),
        None => group.elements().collect(),
    };
    let mut triples = Vec::with_capacity(dataset.len() * elements.len());
    let mut tags = Vec::with_capacity(dataset.len() * elements.len());
    for (src, t) in dataset.triples.iter().enumerate() {
        for &g in &elements {
            triples.push(TransitionTriple {
                obs: env.transform_obs(g, &t.obs)?,
                action: env.transform_action(g, &t.action),
                next_obs: env.transform_obs(g, &t.next_obs)?,
                hidden: env.transform_state(g, &t.hidden),
                hidden_next: env.transform_state(g, &t.hidden_next),
                episode: t.episode,
                step: t.step,
            });
            tags.push((src, g));
        }
    }
    Ok(TransitionDataset {
        env: env.clone(),
        seed: dataset.seed,
        episodes: dataset.episodes,
        horizon: dataset.horizon,
        action_filter: dataset.action_filter.clone(),
        triples,
        orbit_tags: Some(tags),
    })
}

/// Pose-world orbit over an explicit list of rotations (the group is
/// continuous, so callers choose a finite sample). Observations are
/// re-rendered from the transformed hidden states.
pub fn orbit_complete_so3(
    dataset: &TransitionDataset,
    rotations: &[Rotation3<F>],
) -> Result<TransitionDataset, EnvError> {
    let Env::Pose(_) = &dataset.env else {
        return Err(EnvError::UnsupportedTransform {
            env: dataset.env.name().to_string(),
            reason: "orbit_complete_so3 is pose-only".into(),
        });
    };
    let env = &dataset.env;
    let mut triples = Vec::with_capacity(dataset.len() * rotations.len());
    let mut tags = Vec::with_capacity(triples.capacity());
    for (src, t) in dataset.triples.iter().enumerate() {
        for (gi, g) in rotations.iter().enumerate() {
            let hidden = env.transform_state_so3(g, &t.hidden);
            let hidden_next = env.transform_state_so3(g, &t.hidden_next);
            triples.push(TransitionTriple {
                obs: env.render(&hidden),
                action: env.transform_action_so3(g, &t.action),
                next_obs: env.render(&hidden_next),
                hidden,
                hidden_next,
                episode: t.episode,
                step: t.step,
            });
            tags.push((src, gi));
        }
    }
    Ok(TransitionDataset {
        env: env.clone(),
        seed: dataset.seed,
        episodes: dataset.episodes,
        horizon: dataset.horizon,
        action_filter: dataset.action_filter.clone(),
        triples,
        orbit_tags: Some(tags),
    })
}

#[cfg(test)]
mod tests {
    use super::super::{GridEnv, GridRender};
    use super::*;

    fn shapes_env() -> Env {
        Env::Shapes(GridEnv { n: 4, k: 3, render: GridRender::Channels, cell_px: 10 })
    }

    #[test]
    fn horizon_one_yields_one_triple_per_episode() {
        let ds = generate_dataset(&shapes_env(), 7, 1, 3, None).unwrap();
        assert_eq!(ds.len(), 7);
        assert!(ds.replay_check());
    }

    #[test]
    fn limited_actions_only_contain_up() {
        let names = vec!["up".to_string()];
        let ds = generate_dataset(&shapes_env(), 20, 3, 4, Some(&names)).unwrap();
        for t in &ds.triples {
            match &t.action {
                Action::Grid { dir, .. } => assert_eq!(*dir, 0),
                _ => panic!(),
            }
        }
    }

    #[test]
    fn empty_action_subset_is_an_error() {
        let err = generate_dataset(&shapes_env(), 1, 1, 0, Some(&[])).unwrap_err();
        assert!(matches!(err, EnvError::EmptyActionSubset));
    }

    #[test]
    fn identical_config_serializes_to_identical_bytes() {
        let env = shapes_env();
        let mut bufs = Vec::new();
        for _ in 0..2 {
            let ds = generate_dataset(&env, 5, 4, 11, None).unwrap();
            let mut buf = Vec::new();
            ds.write(&mut buf).unwrap();
            bufs.push(buf);
        }
        assert_eq!(bufs[0], bufs[1]);
    }

    #[test]
    fn roundtrip_preserves_everything() {
        let env = Env::Arm(super::super::ArmEnv { b: 16, shear: 0.1 });
        let ds = generate_dataset(&env, 3, 2, 5, None).unwrap();
        let mut buf = Vec::new();
        ds.write(&mut buf).unwrap();
        let rt = TransitionDataset::read(&mut buf.as_slice()).unwrap();
        assert_eq!(rt.len(), ds.len());
        assert_eq!(rt.env, ds.env);
        for (a, b) in ds.triples.iter().zip(&rt.triples) {
            assert_eq!(a.obs, b.obs);
            assert_eq!(a.action, b.action);
            assert_eq!(a.hidden, b.hidden);
            assert_eq!(a.episode, b.episode);
        }
        let mut buf2 = Vec::new();
        rt.write(&mut buf2).unwrap();
        assert_eq!(buf, buf2);
    }

    #[test]
    fn orbit_complete_expands_by_group_order_and_replays() {
        let ds = generate_dataset(&shapes_env(), 3, 2, 6, None).unwrap();
        let orbit = orbit_complete(&ds, None).unwrap();
        let order = ds.env.group().unwrap().order();
        assert_eq!(orbit.len(), ds.len() * order);
        assert!(orbit.replay_check(), "every transformed triple must satisfy s' = render(step(s, a))");
        // Identity element reproduces sources.
        let id = ds.env.group().unwrap().identity();
        let tags = orbit.orbit_tags.as_ref().unwrap();
        for (i, t) in orbit.triples.iter().enumerate() {
            if tags[i].1 == id {
                let src = &ds.triples[tags[i].0];
                assert_eq!(t.obs, src.obs);
                assert_eq!(t.hidden, src.hidden);
            }
        }
    }

    #[test]
    fn orbit_complete_rejects_pixel_grid() {
        let env = Env::Shapes(GridEnv { n: 4, k: 2, render: GridRender::Pixel, cell_px: 6 });
        let ds = generate_dataset(&env, 1, 1, 0, None).unwrap();
        assert!(matches!(orbit_complete(&ds, None), Err(EnvError::UnsupportedTransform { .. })));
    }
}
