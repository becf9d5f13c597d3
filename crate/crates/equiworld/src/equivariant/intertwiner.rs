use super::EquivError;
use crate::autodiff::{matmul_plain, Array};
use crate::groups::Representation;
use crate::Scalar;
use nalgebra::DMatrix;
use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

/// Orthonormal basis (Frobenius inner product) of the space of linear maps
/// commuting with two representations, plus the invariant-vector basis for
/// biases. An equivariant linear layer is any coefficient combination.
#[derive(Clone, Debug)]
pub struct IntertwinerBasis<S> {
    pub rep_in: Representation<S>,
    pub rep_out: Representation<S>,
    /// dim_out x dim_in matrices B with B rho_in(g) = rho_out(g) B.
    pub basis: Vec<Array<S>>,
    /// dim_out vectors b with rho_out(g) b = b.
    pub bias_basis: Vec<Array<S>>,
}

impl<S: Scalar> IntertwinerBasis<S> {
    pub fn dim_in(&self) -> usize {
        self.rep_in.dim()
    }

    pub fn dim_out(&self) -> usize {
        self.rep_out.dim()
    }

    /// Worst equivariance violation of any basis element over the full group.
    pub fn max_equivariance_deviation(&self) -> f64 {
        let mut worst = 0.0f64;
        for g in self.rep_in.group().elements() {
            for b in &self.basis {
                let lhs = matmul_plain(b, self.rep_in.mat(g));
                let rhs = matmul_plain(self.rep_out.mat(g), b);
                worst = worst.max(lhs.max_abs_diff(&rhs).to_f64().unwrap());
            }
            for v in &self.bias_basis {
                let rv = matmul_plain(self.rep_out.mat(g), &v.clone().reshaped(&[v.numel(), 1]));
                worst = worst.max(rv.reshaped(&[v.numel()]).max_abs_diff(v).to_f64().unwrap());
            }
        }
        worst
    }
}

fn to_na<S: Scalar>(a: &Array<S>) -> DMatrix<f64> {
    DMatrix::from_fn(a.shape()[0], a.shape()[1], |i, j| a.at2(i, j).to_f64().unwrap())
}

/// Rows of the constraint block for one group element g, acting on the
/// row-major vectorization of B: I (x) rho_in(g)^T - rho_out(g) (x) I.
fn constraint_block(rin: &DMatrix<f64>, rout: &DMatrix<f64>) -> DMatrix<f64> {
    let din = rin.nrows();
    let dout = rout.nrows();
    let n = din * dout;
    let mut c = DMatrix::zeros(n, n);
    for i in 0..dout {
        for j in 0..din {
            let row = i * din + j;
            // (B rho_in)[i,j] = sum_k B[i,k] rin[k,j]
            for k in 0..din {
                c[(row, i * din + k)] += rin[(k, j)];
            }
            // (rho_out B)[i,j] = sum_k rout[i,k] B[k,j]
            for k in 0..dout {
                c[(row, k * din + j)] -= rout[(i, k)];
            }
        }
    }
    c
}

/// Null space of vertically stacked blocks by SVD, rank cut at
/// sigma < 1e-8 * sigma_max. Returns orthonormal null vectors as rows.
fn null_space(blocks: Vec<DMatrix<f64>>, n: usize) -> Vec<Vec<f64>> {
    if blocks.is_empty() {
        // No constraints: the whole space, standard basis.
        return (0..n)
            .map(|i| {
                let mut v = vec![0.0; n];
                v[i] = 1.0;
                v
            })
            .collect();
    }
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut stacked = DMatrix::zeros(rows, n);
    let mut r0 = 0;
    for b in blocks {
        stacked.view_mut((r0, 0), (b.nrows(), n)).copy_from(&b);
        r0 += b.nrows();
    }
    let svd = stacked.svd(false, true);
    let vt = svd.v_t.expect("svd v_t");
    let smax = svd.singular_values.iter().fold(0.0f64, |m, &v| m.max(v));
    let tol = 1e-8 * smax;
    let mut null = Vec::new();
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if smax == 0.0 || s < tol {
            null.push(vt.row(i).iter().copied().collect());
        }
    }
    // Thin SVD may carry fewer singular values than columns; the remaining
    // right singular vectors are null by construction.
    for i in svd.singular_values.len()..vt.nrows() {
        null.push(vt.row(i).iter().copied().collect());
    }
    null
}

/// Solve for the intertwiner space Hom_G(rep_in, rep_out) and the invariant
/// bias space. Constraints are assembled from the group's generators
/// (generators generate, so the null space is the same), then verified over
/// every group element. An empty basis is a valid result: only the zero map
/// is equivariant.
pub fn solve_intertwiner_basis<S: Scalar>(
    rep_in: &Representation<S>,
    rep_out: &Representation<S>,
) -> Result<IntertwinerBasis<S>, EquivError> {
    if rep_in.group().name() != rep_out.group().name()
        || rep_in.group().order() != rep_out.group().order()
    {
        return Err(EquivError::GroupMismatch {
            left: rep_in.group().name().to_string(),
            right: rep_out.group().name().to_string(),
        });
    }
    let (din, dout) = (rep_in.dim(), rep_out.dim());
    let gens = rep_in.group().generators();

    let blocks: Vec<DMatrix<f64>> = gens
        .iter()
        .map(|&g| constraint_block(&to_na(rep_in.mat(g)), &to_na(rep_out.mat(g))))
        .collect();
    let basis: Vec<Array<S>> = null_space(blocks, din * dout)
        .into_iter()
        .map(|v| Array::from_f64(&[dout, din], &v))
        .collect();

    // Bias constraints: (rho_out(g) - I) b = 0.
    let bias_blocks: Vec<DMatrix<f64>> = gens
        .iter()
        .map(|&g| to_na(rep_out.mat(g)) - DMatrix::<f64>::identity(dout, dout))
        .collect();
    let bias_basis: Vec<Array<S>> = null_space(bias_blocks, dout)
        .into_iter()
        .map(|v| Array::from_f64(&[dout], &v))
        .collect();

    let solved = IntertwinerBasis { rep_in: rep_in.clone(), rep_out: rep_out.clone(), basis, bias_basis };
    let dev = solved.max_equivariance_deviation();
    assert!(
        dev <= 1e-10,
        "intertwiner basis failed full-group verification: deviation {dev:.3e} for {} -> {}",
        rep_in.label(),
        rep_out.label()
    );
    Ok(solved)
}

type BasisCache = Mutex<HashMap<String, Arc<IntertwinerBasis<f64>>>>;
static CACHE: OnceLock<BasisCache> = OnceLock::new();

/// Cached solve keyed by (group, rep labels); rep labels must uniquely
/// identify the matrices, which holds for all constructor-built reps.
pub fn solve_cached(
    rep_in: &Representation<f64>,
    rep_out: &Representation<f64>,
) -> Result<Arc<IntertwinerBasis<f64>>, EquivError> {
    let key = format!("{}|{}|{}", rep_in.group().name(), rep_in.label(), rep_out.label());
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(hit) = cache.lock().unwrap().get(&key) {
        return Ok(hit.clone());
    }
    let solved = Arc::new(solve_intertwiner_basis(rep_in, rep_out)?);
    cache.lock().unwrap().insert(key, solved.clone());
    Ok(solved)
}

/// Independent oracle: dimension of the joint null space assembled over
/// every group element (not just generators), computed by symmetric
/// eigendecomposition of the accumulated Gram matrix rather than SVD.
pub fn brute_force_hom_dim<S: Scalar>(rep_in: &Representation<S>, rep_out: &Representation<S>) -> usize {
    let (din, dout) = (rep_in.dim(), rep_out.dim());
    let n = din * dout;
    let mut gram = DMatrix::<f64>::zeros(n, n);
    for g in rep_in.group().elements() {
        let c = constraint_block(&to_na(rep_in.mat(g)), &to_na(rep_out.mat(g)));
        gram += c.transpose() * c;
    }
    let eig = gram.symmetric_eigen();
    let emax = eig.eigenvalues.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    if emax == 0.0 {
        return n;
    }
    eig.eigenvalues.iter().filter(|&&v| v.abs() < 1e-10 * emax).count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::groups::{make_cyclic, make_dihedral, rep_regular, rep_std, rep_trivial};

    #[test]
    fn hom_dims_match_brute_force_oracles() {
        let c4 = make_cyclic(4).unwrap();
        let d4 = make_dihedral(4).unwrap();
        let std_c4 = rep_std::<f64>(&c4).unwrap();
        let reg_d4 = rep_regular::<f64>(&d4);
        let triv_c4 = rep_trivial::<f64>(&c4);

        // End(std) of C4 is the complex numbers: dimension 2.
        let b = solve_intertwiner_basis(&std_c4, &std_c4).unwrap();
        assert_eq!(b.basis.len(), 2);
        assert_eq!(brute_force_hom_dim(&std_c4, &std_c4), 2);

        // End(reg) of D4 is the real group algebra R^4 + M2(R): dimension 8.
        let b = solve_intertwiner_basis(&reg_d4, &reg_d4).unwrap();
        assert_eq!(b.basis.len(), 8);
        assert_eq!(brute_force_hom_dim(&reg_d4, &reg_d4), 8);

        // No trivial component inside std: only the zero map.
        let b = solve_intertwiner_basis(&triv_c4, &std_c4).unwrap();
        assert_eq!(b.basis.len(), 0);
        assert_eq!(brute_force_hom_dim(&triv_c4, &std_c4), 0);
    }

    #[test]
    fn basis_is_frobenius_orthonormal() {
        let d4 = make_dihedral(4).unwrap();
        let reg = rep_regular::<f64>(&d4);
        let b = solve_intertwiner_basis(&reg, &reg).unwrap();
        for i in 0..b.basis.len() {
            for j in 0..b.basis.len() {
                let ip = b.basis[i].dot(&b.basis[j]);
                let target = if i == j { 1.0 } else { 0.0 };
                assert!((ip - target).abs() < 1e-10, "({i},{j}) -> {ip}");
            }
        }
    }

    #[test]
    fn bias_basis_spans_invariants_of_regular_rep() {
        // The only invariant vectors of a regular rep are multiples of all-ones.
        let c4 = make_cyclic(4).unwrap();
        let reg = rep_regular::<f64>(&c4);
        let b = solve_intertwiner_basis(&reg, &reg).unwrap();
        assert_eq!(b.bias_basis.len(), 1);
        let v = &b.bias_basis[0];
        for i in 1..4 {
            assert!((v.data()[i] - v.data()[0]).abs() < 1e-10);
        }
    }

    #[test]
    fn group_mismatch_is_an_error() {
        let c4 = make_cyclic(4).unwrap();
        let d4 = make_dihedral(4).unwrap();
        let a = rep_std::<f64>(&c4).unwrap();
        let b = rep_std::<f64>(&d4).unwrap();
        assert!(matches!(solve_intertwiner_basis(&a, &b), Err(EquivError::GroupMismatch { .. })));
    }
}
