use super::{GroupError, Representation};
use crate::autodiff::Array;
use crate::Scalar;
use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

/// One isotypic entry of a decomposition: `multiplicity` copies of a real
/// irrep of dimension `dim`, occupying basis columns `start .. start + dim*multiplicity`.
#[derive(Clone, Debug, PartialEq)]
pub struct IrrepBlock {
    pub label: String,
    pub dim: usize,
    pub multiplicity: usize,
    pub start: usize,
}

impl IrrepBlock {
    pub fn len(&self) -> usize {
        self.dim * self.multiplicity
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Column range of copy `m` within the change-of-basis matrix.
    pub fn copy_range(&self, m: usize) -> std::ops::Range<usize> {
        let s = self.start + m * self.dim;
        s..s + self.dim
    }
}

/// Orthogonal change of basis that block-diagonalizes every matrix of a
/// representation into real irreducibles.
#[derive(Clone, Debug)]
pub struct IrrepDecomposition<S> {
    /// Columns are the new basis vectors; orthogonal.
    pub basis: Array<S>,
    pub blocks: Vec<IrrepBlock>,
}

impl<S: Scalar> IrrepDecomposition<S> {
    /// Worst off-block magnitude of basis^T rho(g) basis over all g.
    pub fn residual(&self, rep: &Representation<S>) -> f64 {
        let d = rep.dim();
        let basis = to_na(&self.basis);
        let mut worst = 0.0f64;
        let mut owner = vec![usize::MAX; d];
        for (bi, b) in self.blocks.iter().enumerate() {
            for m in 0..b.multiplicity {
                for c in b.copy_range(m) {
                    owner[c] = bi * 1000 + m;
                }
            }
        }
        for g in rep.group().elements() {
            let m = basis.transpose() * to_na(rep.mat(g)) * &basis;
            for i in 0..d {
                for j in 0..d {
                    if owner[i] != owner[j] {
                        worst = worst.max(m[(i, j)].abs());
                    }
                }
            }
        }
        worst
    }
}

fn to_na<S: Scalar>(a: &Array<S>) -> DMatrix<f64> {
    let (r, c) = (a.shape()[0], a.shape()[1]);
    DMatrix::from_fn(r, c, |i, j| a.at2(i, j).to_f64().unwrap())
}

fn from_na<S: Scalar>(m: &DMatrix<f64>) -> Array<S> {
    let mut out = Array::zeros(&[m.nrows(), m.ncols()]);
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.set2(i, j, S::from_f64_lossy(m[(i, j)]));
        }
    }
    out
}

/// Decompose an orthogonal representation into real irreducibles.
///
/// A random symmetric matrix is averaged over the group (so it commutes with
/// every rho(g)); the eigenspaces of the average are invariant subspaces and,
/// for a generic draw, each eigenvalue cluster spans exactly one irrep copy.
/// Copies are matched into isotypic blocks by their characters. Deterministic:
/// the internal RNG is fixed-seeded, retried with fresh draws if an unlucky
/// eigenvalue collision leaves residual above tolerance.
pub fn decompose_irreps<S: Scalar>(rep: &Representation<S>) -> Result<IrrepDecomposition<S>, GroupError> {
    let d = rep.dim();
    assert!(d <= 64, "irrep decomposition supports dim <= 64, got {d}");
    let group = rep.group();
    let n = group.order();
    let mats: Vec<DMatrix<f64>> = (0..n).map(|g| to_na(rep.mat(g))).collect();
    let mut rng = ChaCha20Rng::seed_from_u64(0x1_5EED);
    let mut last_residual = f64::INFINITY;

    for _attempt in 0..8 {
        // Symmetrize a random matrix, then average over the group.
        let raw = DMatrix::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0f64));
        let sym = (&raw + raw.transpose()) * 0.5;
        let mut avg = DMatrix::zeros(d, d);
        for m in &mats {
            avg += m * &sym * m.transpose();
        }
        avg /= n as f64;
        let eig = SymmetricEigen::new(avg);

        // Sort eigenpairs and cluster nearly-equal eigenvalues.
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap());
        let scale = eig.eigenvalues.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        let gap = 1e-6 * scale;
        let mut clusters: Vec<Vec<usize>> = Vec::new();
        for &i in &order {
            match clusters.last_mut() {
                Some(c) if (eig.eigenvalues[i] - eig.eigenvalues[*c.last().unwrap()]).abs() <= gap => {
                    c.push(i);
                }
                _ => clusters.push(vec![i]),
            }
        }

        // Character of each cluster's subrepresentation.
        let cluster_cols: Vec<DMatrix<f64>> = clusters
            .iter()
            .map(|c| {
                let mut q = DMatrix::zeros(d, c.len());
                for (k, &i) in c.iter().enumerate() {
                    q.set_column(k, &eig.eigenvectors.column(i));
                }
                q
            })
            .collect();
        let chars: Vec<Vec<f64>> = cluster_cols
            .iter()
            .map(|q| mats.iter().map(|m| (q.transpose() * m * q).trace()).collect())
            .collect();

        // Group clusters with equal characters into isotypic blocks.
        let mut kinds: Vec<(Vec<f64>, usize, Vec<usize>)> = Vec::new(); // (character, dim, cluster ids)
        'cluster: for (ci, ch) in chars.iter().enumerate() {
            for kind in kinds.iter_mut() {
                if kind.1 == clusters[ci].len()
                    && kind.0.iter().zip(ch).all(|(a, b)| (a - b).abs() <= 1e-6)
                {
                    kind.2.push(ci);
                    continue 'cluster;
                }
            }
            kinds.push((ch.clone(), clusters[ci].len(), vec![ci]));
        }
        // Canonical order: ascending dimension, then character lexicographically
        // descending (puts the trivial irrep first among the 1-dimensional ones).
        kinds.sort_by(|a, b| {
            a.1.cmp(&b.1).then_with(|| {
                for (x, y) in a.0.iter().zip(&b.0) {
                    if (x - y).abs() > 1e-6 {
                        return y.partial_cmp(x).unwrap();
                    }
                }
                std::cmp::Ordering::Equal
            })
        });

        let mut basis = DMatrix::zeros(d, d);
        let mut blocks = Vec::new();
        let mut col = 0;
        for (ki, (_, kdim, members)) in kinds.iter().enumerate() {
            let start = col;
            for &ci in members {
                for k in 0..clusters[ci].len() {
                    basis.set_column(col, &cluster_cols[ci].column(k));
                    col += 1;
                }
            }
            blocks.push(IrrepBlock {
                label: format!("irrep{}_{}d", ki, kdim),
                dim: *kdim,
                multiplicity: members.len(),
                start,
            });
        }

        let decomp = IrrepDecomposition { basis: from_na::<S>(&basis), blocks };
        let res = decomp.residual(rep);
        if res <= 1e-10 {
            return Ok(decomp);
        }
        last_residual = last_residual.min(res);
    }
    Err(GroupError::DecompositionResidual { residual: last_residual })
}

#[cfg(test)]
mod tests {
    use super::super::{make_cyclic, make_dihedral, rep_regular, rep_trivial};
    use super::*;

    /// Multiplicity oracle from character theory alone: for a real irrep
    /// chi_i found by the decomposition, <chi_rho, chi_i> / <chi_i, chi_i>
    /// counts its copies in rho, independent of how the basis was built.
    fn character_multiplicity(rep_char: &[f64], irrep_char: &[f64]) -> f64 {
        let n = rep_char.len() as f64;
        let inner: f64 = rep_char.iter().zip(irrep_char).map(|(a, b)| a * b).sum::<f64>() / n;
        let self_inner: f64 = irrep_char.iter().map(|a| a * a).sum::<f64>() / n;
        inner / self_inner
    }

    fn block_character(decomp: &IrrepDecomposition<f64>, rep: &Representation<f64>, b: &IrrepBlock) -> Vec<f64> {
        // Character of the first copy in the block.
        let d = rep.dim();
        let mut chi = Vec::new();
        for g in rep.group().elements() {
            let m = rep.mat(g);
            let mut tr = 0.0;
            for c in b.copy_range(0) {
                for r in 0..d {
                    for r2 in 0..d {
                        tr += decomp.basis.at2(r, c) * m.at2(r, r2) * decomp.basis.at2(r2, c);
                    }
                }
            }
            chi.push(tr);
        }
        chi
    }

    #[test]
    fn d4_regular_rep_decomposes_as_four_lines_plus_double_plane() {
        let d4 = make_dihedral(4).unwrap();
        let reg = rep_regular::<f64>(&d4);
        let decomp = decompose_irreps(&reg).unwrap();
        let mut ones = 0;
        let mut twos = 0;
        for b in &decomp.blocks {
            match b.dim {
                1 => ones += b.multiplicity,
                2 => {
                    twos += 1;
                    assert_eq!(b.multiplicity, 2);
                }
                d => panic!("unexpected irrep dim {d}"),
            }
        }
        assert_eq!(ones, 4);
        assert_eq!(twos, 1);
        assert!(decomp.residual(&reg) <= 1e-10);
        // Cross-check multiplicities against the character oracle.
        let rep_char = reg.character();
        for b in &decomp.blocks {
            let chi = block_character(&decomp, &reg, b);
            let mult = character_multiplicity(&rep_char, &chi);
            assert!(
                (mult - b.multiplicity as f64).abs() < 1e-6,
                "character oracle {mult} vs block {b:?}"
            );
        }
    }

    #[test]
    fn c4_regular_rep_over_reals_has_one_plane() {
        let c4 = make_cyclic(4).unwrap();
        let reg = rep_regular::<f64>(&c4);
        let decomp = decompose_irreps(&reg).unwrap();
        let dims: Vec<(usize, usize)> = decomp.blocks.iter().map(|b| (b.dim, b.multiplicity)).collect();
        // trivial + sign + one 2-dim rotation block (the conjugate complex pair).
        assert_eq!(dims, vec![(1, 1), (1, 1), (2, 1)]);
        assert!(decomp.residual(&reg) <= 1e-10);
    }

    #[test]
    fn trivial_rep_decomposes_to_itself() {
        let c4 = make_cyclic(4).unwrap();
        let triv = rep_trivial::<f64>(&c4);
        let decomp = decompose_irreps(&triv).unwrap();
        assert_eq!(decomp.blocks.len(), 1);
        assert_eq!(decomp.blocks[0].dim, 1);
        assert_eq!(decomp.blocks[0].multiplicity, 1);
        assert!((decomp.basis.at2(0, 0).abs() - 1.0).abs() < 1e-12);
    }
}
