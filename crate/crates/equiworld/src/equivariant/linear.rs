use super::intertwiner::{solve_cached, IntertwinerBasis};
use super::EquivError;
use crate::autodiff::{BoundParams, ParamId, ParamStore, Var};
use crate::groups::Representation;
use crate::{Arr, Tape, F};
use rand::Rng;
use std::rc::Rc;
use std::sync::Arc;

/// Linear layer constrained to the intertwiner space: y = (sum_k c_k B_k) x
/// + sum_j d_j b_j. Equivariant for every coefficient choice.
pub struct EquivLinear {
    basis: Arc<IntertwinerBasis<F>>,
    /// [K, din*dout]; row k is B_k^T flattened, so W^T assembles by matmul.
    bt_rows: Arr,
    /// [J, dout]; row j is the invariant bias vector b_j.
    bias_rows: Arr,
    coeffs: ParamId,
    bias_coeffs: ParamId,
}

impl EquivLinear {
    pub fn new(
        rep_in: &Representation<F>,
        rep_out: &Representation<F>,
        params: &mut ParamStore<F>,
        rng: &mut impl Rng,
        name: &str,
    ) -> Result<Self, EquivError> {
        let basis = solve_cached(rep_in, rep_out)?;
        let (din, dout) = (basis.dim_in(), basis.dim_out());
        let k = basis.basis.len();
        let j = basis.bias_basis.len();
        let mut bt_rows = Arr::zeros(&[k, din * dout]);
        for (ki, b) in basis.basis.iter().enumerate() {
            let bt = b.transpose2();
            bt_rows.data_mut()[ki * din * dout..(ki + 1) * din * dout].copy_from_slice(bt.data());
        }
        let mut bias_rows = Arr::zeros(&[j, dout]);
        for (ji, b) in basis.bias_basis.iter().enumerate() {
            bias_rows.data_mut()[ji * dout..(ji + 1) * dout].copy_from_slice(b.data());
        }
        let s = 1.0 / (din as f64).sqrt();
        let coeffs = params.add(format!("{name}.coeffs"), Arr::rand_uniform(rng, &[1, k], -s, s));
        let bias_coeffs = params.add(format!("{name}.bias_coeffs"), Arr::zeros(&[1, j]));
        Ok(EquivLinear { basis, bt_rows, bias_rows, coeffs, bias_coeffs })
    }

    pub fn basis(&self) -> &Arc<IntertwinerBasis<F>> {
        &self.basis
    }

    /// x: [B, din] -> [B, dout].
    pub fn forward<'t>(&self, tape: &'t Tape, p: &BoundParams<'t, F>, x: Var<'t, F>) -> Var<'t, F> {
        let (din, dout) = (self.basis.dim_in(), self.basis.dim_out());
        let bt = tape.leaf(self.bt_rows.clone());
        let wt = p.var(self.coeffs).matmul(bt).reshape(&[din, dout]);
        let mut y = x.matmul(wt);
        if !self.basis.bias_basis.is_empty() {
            let br = tape.leaf(self.bias_rows.clone());
            let bias = p.var(self.bias_coeffs).matmul(br).reshape(&[dout]);
            y = y.add_row(bias);
        }
        y
    }
}

/// Stack of equivariant linear layers with ReLU between them and a tied
/// (scalar-affine) LayerNorm after the second layer. Hidden representations
/// must be permutation representations so the pointwise ReLU is exactly
/// equivariant; only the final layer may target an arbitrary representation.
pub struct EquivMlp {
    layers: Vec<EquivLinear>,
    /// Tied LayerNorm (scalar gain/bias) after this layer index, when set.
    ln: Option<(usize, ParamId, ParamId)>,
}

impl EquivMlp {
    pub fn new(
        reps: &[Representation<F>],
        ln_after_second: bool,
        params: &mut ParamStore<F>,
        rng: &mut impl Rng,
        name: &str,
    ) -> Result<Self, EquivError> {
        if reps.len() < 2 {
            return Err(EquivError::TooFewLayers);
        }
        for (i, rep) in reps.iter().enumerate().skip(1).take(reps.len().saturating_sub(2)) {
            if !rep.is_permutation_rep(1e-12) {
                return Err(EquivError::NonPermutationHidden { index: i, label: rep.label().to_string() });
            }
        }
        let mut layers = Vec::new();
        for i in 0..reps.len() - 1 {
            layers.push(EquivLinear::new(&reps[i], &reps[i + 1], params, rng, &format!("{name}.{i}"))?);
        }
        let ln = if ln_after_second && layers.len() >= 2 {
            let gain = params.add(format!("{name}.ln_gain"), Arr::scalar(1.0));
            let bias = params.add(format!("{name}.ln_bias"), Arr::scalar(0.0));
            Some((1usize, gain, bias))
        } else {
            None
        };
        Ok(EquivMlp { layers, ln })
    }

    pub fn forward<'t>(&self, tape: &'t Tape, p: &BoundParams<'t, F>, mut x: Var<'t, F>) -> Var<'t, F> {
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.forward(tape, p, x);
            if let Some((after, gain, bias)) = self.ln {
                if i == after {
                    let d = x.shape()[1];
                    let idx = Rc::new(vec![0usize; d]);
                    let g = p.var(gain).gather(idx.clone(), &[d]);
                    let b = p.var(bias).gather(idx, &[d]);
                    x = x.layer_norm(g, b, 1e-5);
                }
            }
            if i != last {
                x = x.relu();
            }
        }
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::groups::{make_cyclic, make_dihedral, rep_direct_sum, rep_regular, rep_std, rep_trivial};
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn apply_equiv_mlp(mlp: &EquivMlp, params: &ParamStore<F>, x: &Arr) -> Arr {
        let tape = Tape::new();
        let bound = params.bind(&tape);
        let xin = tape.leaf(x.clone());
        mlp.forward(&tape, &bound, xin).value()
    }

    #[test]
    fn zero_coefficients_give_zero_map() {
        let c4 = make_cyclic(4).unwrap();
        let reg = rep_regular::<F>(&c4);
        let mut params = ParamStore::new();
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        let layer = EquivLinear::new(&reg, &reg, &mut params, &mut rng, "t").unwrap();
        for i in 0..params.len() {
            let a = params.value_mut(ParamId(i));
            *a = Arr::zeros(a.shape());
        }
        let tape = Tape::new();
        let bound = params.bind(&tape);
        let x = tape.leaf(Arr::from_f64(&[1, 4], &[1.0, 2.0, 3.0, 4.0]));
        let y = layer.forward(&tape, &bound, x);
        assert!(y.value().max_abs() == 0.0);
    }

    #[test]
    fn trivial_to_trivial_is_scalar_multiply() {
        let c4 = make_cyclic(4).unwrap();
        let triv = rep_trivial::<F>(&c4);
        let mut params = ParamStore::new();
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let layer = EquivLinear::new(&triv, &triv, &mut params, &mut rng, "t").unwrap();
        let tape = Tape::new();
        let bound = params.bind(&tape);
        let x = tape.leaf(Arr::from_f64(&[2, 1], &[3.0, -1.0]));
        let y = layer.forward(&tape, &bound, x).value();
        let ratio = y.data()[0] / 3.0;
        assert!((y.data()[1] / -1.0 - ratio).abs() < 1e-12);
    }

    #[test]
    fn single_regular_layer_with_relu_is_equivariant_for_all_elements() {
        let d4 = make_dihedral(4).unwrap();
        let reg = rep_regular::<F>(&d4);
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        for _ in 0..20 {
            let mut params = ParamStore::new();
            let layer = EquivLinear::new(&reg, &reg, &mut params, &mut rng, "t").unwrap();
            let x = Arr::rand_uniform(&mut rng, &[1, 8], -1.0, 1.0);
            for g in d4.elements() {
                let gx = Arr::new(vec![1, 8], reg.apply_vec(g, x.data()));
                let run = |inp: &Arr| {
                    let tape = Tape::new();
                    let bound = params.bind(&tape);
                    let v = tape.leaf(inp.clone());
                    layer.forward(&tape, &bound, v).relu().value()
                };
                let lhs = run(&gx);
                let rhs = Arr::new(vec![1, 8], reg.apply_vec(g, run(&x).data()));
                assert!(lhs.max_abs_diff(&rhs) <= 1e-10);
            }
        }
    }

    #[test]
    fn three_layer_d4_stack_with_std_head_is_equivariant() {
        let d4 = make_dihedral(4).unwrap();
        let reg = rep_regular::<F>(&d4);
        let reg2 = rep_direct_sum(&reg, &reg).unwrap();
        let std = rep_std::<F>(&d4).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        for trial in 0..10 {
            let mut params = ParamStore::new();
            let mlp = EquivMlp::new(
                &[reg.clone(), reg2.clone(), reg2.clone(), std.clone()],
                true,
                &mut params,
                &mut rng,
                "m",
            )
            .unwrap();
            let x = Arr::rand_uniform(&mut rng, &[1, 8], -1.0, 1.0);
            for g in d4.elements() {
                let gx = Arr::new(vec![1, 8], reg.apply_vec(g, x.data()));
                let lhs = apply_equiv_mlp(&mlp, &params, &gx);
                let rhs = Arr::new(vec![1, 2], std.apply_vec(g, apply_equiv_mlp(&mlp, &params, &x).data()));
                assert!(
                    lhs.max_abs_diff(&rhs) <= 1e-9,
                    "trial {trial} element {g}: {:?}",
                    lhs.max_abs_diff(&rhs)
                );
            }
        }
    }

    #[test]
    fn non_permutation_hidden_rep_is_rejected() {
        let d4 = make_dihedral(4).unwrap();
        let reg = rep_regular::<F>(&d4);
        let std = rep_std::<F>(&d4).unwrap();
        let mut params = ParamStore::new();
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let err = EquivMlp::new(&[reg.clone(), std.clone(), reg.clone()], false, &mut params, &mut rng, "m");
        assert!(matches!(err, Err(EquivError::NonPermutationHidden { index: 1, .. })));
    }
}
