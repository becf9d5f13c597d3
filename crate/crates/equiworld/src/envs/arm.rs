use crate::equivariant::{transform_image, Fiber};
use crate::{Arr, F};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Two-joint arm state: joint angles (wrapped to (-pi, pi]) and per-step
/// angular velocities.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ArmState {
    pub th1: F,
    pub th2: F,
    pub om1: F,
    pub om2: F,
}

fn wrap(mut x: F) -> F {
    while x > PI {
        x -= 2.0 * PI;
    }
    while x <= -PI {
        x += 2.0 * PI;
    }
    x
}

/// Planar two-segment arm with damped velocity dynamics, rasterized into two
/// stacked binary frames (previous and current pose) so velocity is visible.
/// `shear` skews the projection so the pixel-level D4 action is only
/// approximate, mimicking an oblique camera.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ArmEnv {
    pub b: usize,
    pub shear: F,
}

const DAMPING: F = 0.9;
const GAIN: F = 0.2;

impl ArmEnv {
    pub fn obs_shape(&self) -> Vec<usize> {
        vec![2, self.b, self.b]
    }

    pub fn sample_state<R: Rng>(&self, rng: &mut R) -> ArmState {
        ArmState {
            th1: rng.gen_range(-PI..PI),
            th2: rng.gen_range(-PI..PI),
            om1: rng.gen_range(-0.4..0.4),
            om2: rng.gen_range(-0.4..0.4),
        }
    }

    /// Velocities decay and integrate clamped joint forces; angles wrap.
    pub fn step(&self, s: &ArmState, a: [F; 2]) -> ArmState {
        let a0 = a[0].clamp(-1.0, 1.0);
        let a1 = a[1].clamp(-1.0, 1.0);
        let om1 = DAMPING * s.om1 + GAIN * a0;
        let om2 = DAMPING * s.om2 + GAIN * a1;
        ArmState { th1: wrap(s.th1 + om1), th2: wrap(s.th2 + om2), om1, om2 }
    }

    /// D4 action: reflections negate all angles and velocities, quarter
    /// rotations add pi/2 to the base joint only. Element g indexes D4 as
    /// r^k f^j with j = g / 4, applied flip-first.
    pub fn transform(&self, g: usize, s: &ArmState) -> ArmState {
        let (k, j) = (g % 4, g / 4);
        let mut out = *s;
        if j == 1 {
            out = ArmState { th1: -out.th1, th2: -out.th2, om1: -out.om1, om2: -out.om2 };
        }
        for _ in 0..k {
            out.th1 = wrap(out.th1 + PI / 2.0);
        }
        out
    }

    pub fn render(&self, s: &ArmState) -> Arr {
        let b = self.b;
        assert!(b >= 16, "render grid must be at least 16 pixels, got {b}");
        let mut out = Arr::zeros(&[2, b, b]);
        let prev = (s.th1 - s.om1, s.th2 - s.om2);
        let cur = (s.th1, s.th2);
        for (frame, &(t1, t2)) in [prev, cur].iter().enumerate() {
            self.raster_frame(&mut out, frame, t1, t2);
        }
        out
    }

    fn raster_frame(&self, out: &mut Arr, frame: usize, t1: F, t2: F) {
        let b = self.b;
        let len = 0.42;
        let sh = self.shear;
        let skew = |p: (F, F)| (p.0 + sh * p.1, p.1);
        let p0 = skew((0.0, 0.0));
        let elbow = (len * t1.cos(), len * t1.sin());
        let p1 = skew(elbow);
        let tip = (elbow.0 + len * (t1 + t2).cos(), elbow.1 + len * (t1 + t2).sin());
        let p2 = skew(tip);
        let thick = 2.2 / b as F;
        let scale = 2.0 / b as F;
        for i in 0..b {
            for j in 0..b {
                let x = (j as F + 0.5) * scale - 1.0;
                let y = 1.0 - (i as F + 0.5) * scale;
                let d = seg_dist((x, y), p0, p1).min(seg_dist((x, y), p1, p2));
                if d <= thick {
                    out.data_mut()[(frame * b + i) * b + j] = 1.0;
                }
            }
        }
    }
}

fn seg_dist(p: (F, F), a: (F, F), b: (F, F)) -> F {
    let (vx, vy) = (b.0 - a.0, b.1 - a.1);
    let (wx, wy) = (p.0 - a.0, p.1 - a.1);
    let len2 = vx * vx + vy * vy;
    let t = if len2 > 0.0 { ((wx * vx + wy * vy) / len2).clamp(0.0, 1.0) } else { 0.0 };
    let (dx, dy) = (wx - t * vx, wy - t * vy);
    (dx * dx + dy * dy).sqrt()
}

/// Exact pixel-level D4 action on an arm observation [2, B, B]. Matches the
/// renderer only when shear is zero.
pub fn transform_obs(obs: &Arr, g: usize) -> Arr {
    let sh = obs.shape().to_vec();
    let batched = obs.clone().reshaped(&[1, sh[0], sh[1], sh[2]]);
    transform_image(&batched, Fiber::P4M, g).reshaped(&sh)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn zero_action_zero_velocity_is_fixed_point() {
        let env = ArmEnv { b: 16, shear: 0.0 };
        let s = ArmState { th1: 0.3, th2: -1.0, om1: 0.0, om2: 0.0 };
        assert_eq!(env.step(&s, [0.0, 0.0]), s);
    }

    #[test]
    fn reflection_equivariance_is_exact() {
        let env = ArmEnv { b: 16, shear: 0.0 };
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        for _ in 0..100 {
            let s = env.sample_state(&mut rng);
            let a = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            // flip is element 4 (f).
            let lhs = env.step(&env.transform(4, &s), [-a[0], -a[1]]);
            let rhs = env.transform(4, &env.step(&s, a));
            assert_eq!(lhs, rhs);
        }
    }

    #[test]
    fn quarter_turn_equivariance() {
        let env = ArmEnv { b: 16, shear: 0.0 };
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        for _ in 0..100 {
            let s = env.sample_state(&mut rng);
            let a = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            let lhs = env.step(&env.transform(1, &s), a);
            let rhs = env.transform(1, &env.step(&s, a));
            assert!((lhs.th1 - rhs.th1).abs() < 1e-12 || (lhs.th1 - rhs.th1).abs() > 2.0 * PI - 1e-12);
            assert!((lhs.th2 - rhs.th2).abs() < 1e-12);
            assert!((lhs.om1 - rhs.om1).abs() < 1e-12);
            assert!((lhs.om2 - rhs.om2).abs() < 1e-12);
        }
    }

    #[test]
    fn state_transform_is_a_d4_action() {
        let env = ArmEnv { b: 16, shear: 0.0 };
        let d4 = Fiber::P4M.group();
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        for _ in 0..50 {
            let s = env.sample_state(&mut rng);
            for g1 in d4.elements() {
                for g2 in d4.elements() {
                    let seq = env.transform(g1, &env.transform(g2, &s));
                    let joint = env.transform(d4.mul(g1, g2), &s);
                    let close = |a: F, b: F| {
                        let d = (a - b).abs();
                        d < 1e-12 || (d - 2.0 * PI).abs() < 1e-12
                    };
                    assert!(close(seq.th1, joint.th1), "g1={g1} g2={g2}");
                    assert!(close(seq.th2, joint.th2));
                }
            }
        }
    }

    #[test]
    fn horizontal_arm_draws_along_positive_x() {
        let env = ArmEnv { b: 32, shear: 0.0 };
        let s = ArmState { th1: 0.0, th2: 0.0, om1: 0.0, om2: 0.0 };
        let obs = env.render(&s);
        // Current frame: pixels on the +x half of the middle rows are lit.
        let b = 32;
        let mid = b / 2;
        let lit_right: f64 = (mid..b).map(|j| obs.data()[(b + mid - 1) * b + j]).sum();
        let lit_left: f64 = (0..mid - 2).map(|j| obs.data()[(b + mid - 1) * b + j]).sum();
        assert!(lit_right > 4.0, "expected lit pixels along +x, got {lit_right}");
        assert_eq!(lit_left, 0.0, "no pixels should be lit along -x");
    }

    #[test]
    fn unsheared_render_commutes_with_pixel_d4() {
        let env = ArmEnv { b: 24, shear: 0.0 };
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        for _ in 0..20 {
            let s = env.sample_state(&mut rng);
            let obs = env.render(&s);
            for g in Fiber::P4M.group().elements() {
                let direct = env.render(&env.transform(g, &s));
                let via_pixels = transform_obs(&obs, g);
                assert!(
                    direct.max_abs_diff(&via_pixels) == 0.0,
                    "g={g}: renders differ by {}",
                    direct.max_abs_diff(&via_pixels)
                );
            }
        }
    }

    #[test]
    fn sheared_render_breaks_pixel_rotation() {
        let env = ArmEnv { b: 24, shear: 0.2 };
        let s = ArmState { th1: 0.5, th2: 0.9, om1: 0.1, om2: -0.2 };
        let obs = env.render(&s);
        let mut any_mismatch = 0.0;
        for g in 1..8 {
            let direct = env.render(&env.transform(g, &s));
            any_mismatch += transform_obs(&obs, g).max_abs_diff(&direct);
        }
        assert!(any_mismatch > 0.0, "shear should break the exact pixel action");
    }
}
