use super::{FiniteGroup, GroupError};
use crate::autodiff::{matmul_plain, Array};
use crate::Scalar;
use std::sync::Arc;

/// Orthogonal matrix representation of a finite group: one dim x dim matrix
/// per element with rho(g h) = rho(g) rho(h).
#[derive(Clone, Debug)]
pub struct Representation<S> {
    group: Arc<FiniteGroup>,
    dim: usize,
    mats: Vec<Array<S>>,
    label: String,
}

impl<S: Scalar> Representation<S> {
    pub fn from_matrices(
        group: Arc<FiniteGroup>,
        mats: Vec<Array<S>>,
        label: impl Into<String>,
    ) -> Self {
        assert_eq!(mats.len(), group.order(), "one matrix per element");
        let dim = mats[0].shape()[0];
        for m in &mats {
            assert_eq!(m.shape(), &[dim, dim], "square matrices of equal dim");
        }
        Representation { group, dim, mats, label: label.into() }
    }

    pub fn group(&self) -> &Arc<FiniteGroup> {
        &self.group
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn mat(&self, g: usize) -> &Array<S> {
        &self.mats[g]
    }

    pub fn apply_vec(&self, g: usize, x: &[S]) -> Vec<S> {
        assert_eq!(x.len(), self.dim);
        let m = &self.mats[g];
        (0..self.dim)
            .map(|i| (0..self.dim).map(|j| m.at2(i, j) * x[j]).sum())
            .collect()
    }

    /// Exhaustive validation: identity maps to I, every matrix is orthogonal,
    /// and the homomorphism property holds over all |G|^2 pairs.
    pub fn validate(&self, tol: f64) -> Result<(), GroupError> {
        let n = self.group.order();
        let eye = Array::<S>::eye(self.dim);
        let dev = self.mats[self.group.identity()].max_abs_diff(&eye).to_f64().unwrap();
        if dev > tol {
            return Err(GroupError::InvalidRepresentation {
                label: self.label.clone(),
                reason: "identity does not map to I",
                deviation: dev,
            });
        }
        for g in 0..n {
            let gt = self.mats[g].transpose2();
            let dev = matmul_plain(&gt, &self.mats[g]).max_abs_diff(&eye).to_f64().unwrap();
            if dev > tol {
                return Err(GroupError::InvalidRepresentation {
                    label: self.label.clone(),
                    reason: "matrix not orthogonal",
                    deviation: dev,
                });
            }
        }
        let mut worst = 0.0f64;
        for g in 0..n {
            for h in 0..n {
                let prod = matmul_plain(&self.mats[g], &self.mats[h]);
                let dev = prod.max_abs_diff(&self.mats[self.group.mul(g, h)]).to_f64().unwrap();
                worst = worst.max(dev);
            }
        }
        if worst > tol {
            return Err(GroupError::InvalidRepresentation {
                label: self.label.clone(),
                reason: "homomorphism property fails",
                deviation: worst,
            });
        }
        Ok(())
    }

    /// True when every matrix is a 0/1 permutation matrix (within tol).
    /// Pointwise nonlinearities commute exactly with such representations.
    pub fn is_permutation_rep(&self, tol: f64) -> bool {
        for m in &self.mats {
            for i in 0..self.dim {
                let mut row = 0usize;
                for j in 0..self.dim {
                    let v = m.at2(i, j).to_f64().unwrap();
                    if (v - 1.0).abs() <= tol {
                        row += 1;
                    } else if v.abs() > tol {
                        return false;
                    }
                }
                if row != 1 {
                    return false;
                }
            }
        }
        true
    }

    /// Character (trace) of each element.
    pub fn character(&self) -> Vec<f64> {
        self.mats
            .iter()
            .map(|m| (0..self.dim).map(|i| m.at2(i, i).to_f64().unwrap()).sum())
            .collect()
    }

    /// JSON export: group name, dim, row-major matrices per element.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "group": self.group.name(),
            "label": self.label,
            "dim": self.dim,
            "matrices": self.mats.iter().map(|m| {
                m.data().iter().map(|v| v.to_f64().unwrap()).collect::<Vec<f64>>()
            }).collect::<Vec<_>>(),
        })
    }
}

/// cos/sin of 2 pi k / n, exact at quarter turns so the C4/D4 matrices are
/// integer-valued.
fn turn_entries(k: usize, n: usize) -> (f64, f64) {
    if (4 * k) % n == 0 {
        match (4 * k / n) % 4 {
            0 => (1.0, 0.0),
            1 => (0.0, 1.0),
            2 => (-1.0, 0.0),
            _ => (0.0, -1.0),
        }
    } else {
        let theta = 2.0 * std::f64::consts::PI * k as f64 / n as f64;
        (theta.cos(), theta.sin())
    }
}

/// Standard representation: 2-D rotations for C_n, rotations plus the
/// diag(1,-1) reflection for D_n, coordinate permutation matrices for S_n.
pub fn rep_std<S: Scalar>(group: &Arc<FiniteGroup>) -> Result<Representation<S>, GroupError> {
    let name = group.name();
    let order = group.order();
    if let Some(n) = name.strip_prefix('C').and_then(|s| s.parse::<usize>().ok()) {
        if n == order {
            let mats = (0..n)
                .map(|k| {
                    let (c, s) = turn_entries(k, n);
                    Array::from_f64(&[2, 2], &[c, -s, s, c])
                })
                .collect();
            return Ok(Representation::from_matrices(group.clone(), mats, format!("std({name})")));
        }
    }
    if let Some(n) = name.strip_prefix('D').and_then(|s| s.parse::<usize>().ok()) {
        if 2 * n == order {
            // Element j*n + k is r^k f^j; the reflection axis is fixed as
            // diag(1,-1) (x-axis flip).
            let mut mats = Vec::with_capacity(order);
            for j in 0..2 {
                for k in 0..n {
                    let (c, s) = turn_entries(k, n);
                    let m = if j == 0 { [c, -s, s, c] } else { [c, s, s, -c] };
                    mats.push(Array::from_f64(&[2, 2], &m));
                }
            }
            return Ok(Representation::from_matrices(group.clone(), mats, format!("std({name})")));
        }
    }
    if let Some(n) = name.strip_prefix('S').and_then(|s| s.parse::<usize>().ok()) {
        let perms = super::permutations(n);
        if perms.len() == order {
            let rep = rep_permutation(group.clone(), &perms, format!("std({name})"));
            return Ok(rep);
        }
    }
    Err(GroupError::Unsupported { op: "rep_std", group: name.to_string() })
}

/// Permutation representation from one coordinate permutation per element:
/// rho(g) maps e_i to e_{perm_g(i)}.
pub fn rep_permutation<S: Scalar>(
    group: Arc<FiniteGroup>,
    perms: &[Vec<usize>],
    label: impl Into<String>,
) -> Representation<S> {
    assert_eq!(perms.len(), group.order());
    let dim = perms[0].len();
    let mats = perms
        .iter()
        .map(|p| {
            let mut m = Array::zeros(&[dim, dim]);
            for (i, &pi) in p.iter().enumerate() {
                m.set2(pi, i, S::one());
            }
            m
        })
        .collect();
    Representation::from_matrices(group, mats, label)
}

/// Regular representation: |G|-dimensional, rho(g) e_h = e_{g h}.
pub fn rep_regular<S: Scalar>(group: &Arc<FiniteGroup>) -> Representation<S> {
    let n = group.order();
    let perms: Vec<Vec<usize>> = (0..n).map(|g| (0..n).map(|h| group.mul(g, h)).collect()).collect();
    rep_permutation(group.clone(), &perms, format!("reg({})", group.name()))
}

/// Trivial representation: 1x1 identity for every element.
pub fn rep_trivial<S: Scalar>(group: &Arc<FiniteGroup>) -> Representation<S> {
    let mats = (0..group.order()).map(|_| Array::eye(1)).collect();
    Representation::from_matrices(group.clone(), mats, format!("triv({})", group.name()))
}

/// Sign representation of D_n: +1 on rotations, -1 on reflections.
pub fn rep_flip<S: Scalar>(group: &Arc<FiniteGroup>) -> Result<Representation<S>, GroupError> {
    let name = group.name();
    let n = name
        .strip_prefix('D')
        .and_then(|s| s.parse::<usize>().ok())
        .filter(|n| 2 * n == group.order())
        .ok_or_else(|| GroupError::Unsupported { op: "rep_flip", group: name.to_string() })?;
    let mats = (0..group.order())
        .map(|g| {
            let sign = if g < n { S::one() } else { -S::one() };
            Array::new(vec![1, 1], vec![sign])
        })
        .collect();
    Ok(Representation::from_matrices(group.clone(), mats, format!("flip({name})")))
}

/// Direct sum of two representations of the same group.
pub fn rep_direct_sum<S: Scalar>(
    r1: &Representation<S>,
    r2: &Representation<S>,
) -> Result<Representation<S>, GroupError> {
    if !Arc::ptr_eq(r1.group(), r2.group()) && r1.group().name() != r2.group().name() {
        return Err(GroupError::GroupMismatch {
            left: r1.group().name().to_string(),
            right: r2.group().name().to_string(),
        });
    }
    if r1.group().order() != r2.group().order() {
        return Err(GroupError::GroupMismatch {
            left: r1.group().name().to_string(),
            right: r2.group().name().to_string(),
        });
    }
    let dim = r1.dim() + r2.dim();
    let mats = (0..r1.group().order())
        .map(|g| {
            let mut m = Array::zeros(&[dim, dim]);
            for i in 0..r1.dim() {
                for j in 0..r1.dim() {
                    m.set2(i, j, r1.mat(g).at2(i, j));
                }
            }
            for i in 0..r2.dim() {
                for j in 0..r2.dim() {
                    m.set2(r1.dim() + i, r1.dim() + j, r2.mat(g).at2(i, j));
                }
            }
            m
        })
        .collect();
    Ok(Representation::from_matrices(
        r1.group().clone(),
        mats,
        format!("{}(+){}", r1.label(), r2.label()),
    ))
}

/// Box product: a representation of G1 x G2 on the tensor product space,
/// acting factor-wise. Matrices are Kronecker products ordered (r1 ⊗ r2),
/// so index i1*dim2 + i2 carries (factor-1 coordinate, factor-2 coordinate).
pub fn rep_box_product<S: Scalar>(
    product: &Arc<FiniteGroup>,
    r1: &Representation<S>,
    r2: &Representation<S>,
) -> Result<Representation<S>, GroupError> {
    let split_ok = product
        .product_split(product.order() - 1)
        .map(|(a, b)| a == r1.group().order() - 1 && b == r2.group().order() - 1)
        .unwrap_or(false);
    if !split_ok {
        return Err(GroupError::GroupMismatch {
            left: product.name().to_string(),
            right: format!("{}x{}", r1.group().name(), r2.group().name()),
        });
    }
    let mats = (0..product.order())
        .map(|g| {
            let (g1, g2) = product.product_split(g).unwrap();
            r1.mat(g1).kron(r2.mat(g2))
        })
        .collect();
    Ok(Representation::from_matrices(
        product.clone(),
        mats,
        format!("{}(x){}", r1.label(), r2.label()),
    ))
}
