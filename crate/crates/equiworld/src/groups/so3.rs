use super::GroupError;
use crate::Scalar;
use rand::Rng;

/// Rotation axes used by the pose traversals.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    /// About +z.
    Yaw,
    /// About +y.
    Pitch,
    /// About +x.
    Roll,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::Yaw, Axis::Pitch, Axis::Roll];

    pub fn name(&self) -> &'static str {
        match self {
            Axis::Yaw => "yaw",
            Axis::Pitch => "pitch",
            Axis::Roll => "roll",
        }
    }
}

/// 3x3 rotation matrix (row-major), orthogonal with determinant +1.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rotation3<S> {
    m: [S; 9],
}

impl<S: Scalar> Default for Rotation3<S> {
    fn default() -> Self {
        Self::identity()
    }
}

impl<S: Scalar> Rotation3<S> {
    pub fn identity() -> Self {
        let mut m = [S::zero(); 9];
        m[0] = S::one();
        m[4] = S::one();
        m[8] = S::one();
        Rotation3 { m }
    }

    /// Wrap a row-major 3x3 without validating. Callers must uphold the
    /// orthonormality invariant.
    pub fn from_flat_unchecked(m: [S; 9]) -> Self {
        Rotation3 { m }
    }

    /// Wrap a row-major 3x3, rejecting inputs more than `tol` from SO(3).
    pub fn from_flat(m: [S; 9], tol: f64) -> Result<Self, GroupError> {
        let r = Rotation3 { m };
        let ortho = r.orthogonality_deviation();
        if ortho > tol {
            return Err(GroupError::InvalidRotation { reason: "not orthonormal", deviation: ortho });
        }
        let det_dev = (r.det().to_f64().unwrap() - 1.0).abs();
        if det_dev > tol {
            return Err(GroupError::InvalidRotation { reason: "determinant is not +1", deviation: det_dev });
        }
        Ok(r)
    }

    pub fn as_flat(&self) -> &[S; 9] {
        &self.m
    }

    pub fn at(&self, r: usize, c: usize) -> S {
        self.m[r * 3 + c]
    }

    pub fn det(&self) -> S {
        let m = &self.m;
        m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6])
            + m[2] * (m[3] * m[7] - m[4] * m[6])
    }

    /// Max-abs deviation of R^T R from the identity.
    pub fn orthogonality_deviation(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..3 {
            for j in 0..3 {
                let mut acc = S::zero();
                for k in 0..3 {
                    acc += self.m[k * 3 + i] * self.m[k * 3 + j];
                }
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((acc.to_f64().unwrap() - target).abs());
            }
        }
        worst
    }

    pub fn mul(&self, other: &Self) -> Self {
        let mut m = [S::zero(); 9];
        for r in 0..3 {
            for c in 0..3 {
                let mut acc = S::zero();
                for k in 0..3 {
                    acc += self.m[r * 3 + k] * other.m[k * 3 + c];
                }
                m[r * 3 + c] = acc;
            }
        }
        Rotation3 { m }
    }

    /// Inverse = transpose.
    pub fn inverse(&self) -> Self {
        let mut m = [S::zero(); 9];
        for r in 0..3 {
            for c in 0..3 {
                m[r * 3 + c] = self.m[c * 3 + r];
            }
        }
        Rotation3 { m }
    }

    pub fn apply(&self, v: [S; 3]) -> [S; 3] {
        let m = &self.m;
        [
            m[0] * v[0] + m[1] * v[1] + m[2] * v[2],
            m[3] * v[0] + m[4] * v[1] + m[5] * v[2],
            m[6] * v[0] + m[7] * v[1] + m[8] * v[2],
        ]
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.m
            .iter()
            .zip(&other.m)
            .map(|(&a, &b)| (a - b).abs().to_f64().unwrap())
            .fold(0.0, f64::max)
    }

    /// Haar-uniform sample via a normalized quaternion of four Gaussians.
    pub fn sample<R: Rng>(rng: &mut R) -> Self {
        loop {
            let q: Vec<f64> = (0..4).map(|_| normal(rng)).collect();
            let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
            if n < 1e-6 {
                continue;
            }
            let (w, x, y, z) = (q[0] / n, q[1] / n, q[2] / n, q[3] / n);
            let m = [
                1.0 - 2.0 * (y * y + z * z),
                2.0 * (x * y - w * z),
                2.0 * (x * z + w * y),
                2.0 * (x * y + w * z),
                1.0 - 2.0 * (x * x + z * z),
                2.0 * (y * z - w * x),
                2.0 * (x * z - w * y),
                2.0 * (y * z + w * x),
                1.0 - 2.0 * (x * x + y * y),
            ];
            return Rotation3 { m: m.map(S::from_f64_lossy) };
        }
    }

    /// Rotation by `angle` radians about a named axis.
    pub fn axis(axis: Axis, angle: f64) -> Self {
        let (c, s) = (S::from_f64_lossy(angle.cos()), S::from_f64_lossy(angle.sin()));
        let (zero, one) = (S::zero(), S::one());
        let m = match axis {
            Axis::Yaw => [c, -s, zero, s, c, zero, zero, zero, one],
            Axis::Pitch => [c, zero, s, zero, one, zero, -s, zero, c],
            Axis::Roll => [one, zero, zero, zero, c, -s, zero, s, c],
        };
        Rotation3 { m }
    }

    /// Conjugation g a g^-1: how a latent action transforms when the whole
    /// scene rotates by g.
    pub fn conjugate(g: &Self, a: &Self) -> Self {
        g.mul(a).mul(&g.inverse())
    }

    /// Geodesic distance in radians: arccos((tr(R1^T R2) - 1)/2), with the
    /// argument clamped to [-1, 1] against rounding.
    pub fn geodesic(r1: &Self, r2: &Self) -> f64 {
        let prod = r1.inverse().mul(r2);
        let tr = (prod.m[0] + prod.m[4] + prod.m[8]).to_f64().unwrap();
        (((tr - 1.0) / 2.0).clamp(-1.0, 1.0)).acos()
    }
}

fn normal<R: Rng>(rng: &mut R) -> f64 {
    loop {
        let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
        let u2: f64 = rng.gen_range(0.0..1.0);
        let v = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
        if v.is_finite() {
            return v;
        }
    }
}

/// Build the positively-oriented orthonormal frame [u' v' w'] (columns) from
/// two free vectors: u' = u/|u|, v' is v orthogonalized against u' and
/// normalized, w' = u' x v'. Degenerate inputs (near-zero or near-parallel)
/// are an explicit error, never silently renormalized.
pub fn gram_schmidt_frame<S: Scalar>(u: [S; 3], v: [S; 3]) -> Result<Rotation3<S>, GroupError> {
    let tau = 1e-8;
    let nu = (u[0] * u[0] + u[1] * u[1] + u[2] * u[2]).sqrt();
    if nu.to_f64().unwrap() <= tau {
        return Err(GroupError::DegenerateFrame(format!(
            "|u| = {:.3e} below threshold {tau:.0e}",
            nu.to_f64().unwrap()
        )));
    }
    let up = [u[0] / nu, u[1] / nu, u[2] / nu];
    let d = up[0] * v[0] + up[1] * v[1] + up[2] * v[2];
    let r = [v[0] - d * up[0], v[1] - d * up[1], v[2] - d * up[2]];
    let nr = (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt();
    if nr.to_f64().unwrap() <= tau {
        return Err(GroupError::DegenerateFrame(format!(
            "v is parallel to u within threshold: residual norm {:.3e}",
            nr.to_f64().unwrap()
        )));
    }
    let vp = [r[0] / nr, r[1] / nr, r[2] / nr];
    let wp = [
        up[1] * vp[2] - up[2] * vp[1],
        up[2] * vp[0] - up[0] * vp[2],
        up[0] * vp[1] - up[1] * vp[0],
    ];
    Ok(Rotation3::from_flat_unchecked([
        up[0], vp[0], wp[0], up[1], vp[1], wp[1], up[2], vp[2], wp[2],
    ]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn geodesic_of_equal_rotations_is_zero() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let r = Rotation3::<f64>::sample(&mut rng);
        // acos near 1 amplifies rounding to sqrt(eps) scale.
        assert!(Rotation3::geodesic(&r, &r) < 1e-7);
        let id = Rotation3::<f64>::identity();
        assert_eq!(Rotation3::geodesic(&id, &id), 0.0);
    }

    #[test]
    fn conjugation_by_identity_is_identity_map() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let a = Rotation3::<f64>::sample(&mut rng);
        let c = Rotation3::conjugate(&Rotation3::identity(), &a);
        assert!(c.max_abs_diff(&a) < 1e-15);
    }

    #[test]
    fn thirty_yaw_increments_return_to_identity() {
        let step = Rotation3::<f64>::axis(Axis::Yaw, std::f64::consts::PI / 15.0);
        let mut acc = Rotation3::identity();
        for _ in 0..30 {
            acc = step.mul(&acc);
        }
        assert!(acc.max_abs_diff(&Rotation3::identity()) < 1e-9);
    }

    #[test]
    fn conjugation_composes() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        for _ in 0..50 {
            let g1 = Rotation3::<f64>::sample(&mut rng);
            let g2 = Rotation3::<f64>::sample(&mut rng);
            let a = Rotation3::<f64>::sample(&mut rng);
            let lhs = Rotation3::conjugate(&g1.mul(&g2), &a);
            let rhs = Rotation3::conjugate(&g1, &Rotation3::conjugate(&g2, &a));
            assert!(lhs.max_abs_diff(&rhs) <= 1e-12);
        }
    }

    #[test]
    fn frame_from_standard_basis_is_identity() {
        let r = gram_schmidt_frame([1.0, 0.0, 0.0], [0.0, 1.0, 0.0]).unwrap();
        assert!(r.max_abs_diff(&Rotation3::identity()) == 0.0);
        // Scaling and shear are removed.
        let r = gram_schmidt_frame([2.0, 0.0, 0.0], [1.0, 1.0, 0.0]).unwrap();
        assert!(r.max_abs_diff(&Rotation3::identity()) < 1e-15);
    }

    #[test]
    fn frame_satisfies_rotation_invariants_on_random_inputs() {
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        for _ in 0..200 {
            let u = [(); 3].map(|_| rng.gen_range(-2.0..2.0));
            let v = [(); 3].map(|_| rng.gen_range(-2.0..2.0));
            match gram_schmidt_frame::<f64>(u, v) {
                Ok(r) => {
                    assert!(r.orthogonality_deviation() <= 1e-10);
                    assert!((r.det() - 1.0).abs() <= 1e-10);
                }
                Err(GroupError::DegenerateFrame(_)) => {}
                Err(e) => panic!("unexpected error {e}"),
            }
        }
    }

    #[test]
    fn frame_rejects_degenerate_inputs() {
        assert!(matches!(
            gram_schmidt_frame([0.0, 0.0, 0.0], [0.0, 1.0, 0.0]),
            Err(GroupError::DegenerateFrame(_))
        ));
        assert!(matches!(
            gram_schmidt_frame([1.0, 0.0, 0.0], [2.0, 1e-12, 0.0]),
            Err(GroupError::DegenerateFrame(_))
        ));
    }

    #[test]
    fn frame_is_left_equivariant() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        for _ in 0..100 {
            let u: [f64; 3] = [(); 3].map(|_| rng.gen_range(-2.0..2.0));
            let v: [f64; 3] = [(); 3].map(|_| rng.gen_range(-2.0..2.0));
            let g = Rotation3::<f64>::sample(&mut rng);
            let Ok(frame) = gram_schmidt_frame(u, v) else { continue };
            let rotated = gram_schmidt_frame(g.apply(u), g.apply(v)).unwrap();
            assert!(rotated.max_abs_diff(&g.mul(&frame)) <= 1e-10);
        }
    }
}
