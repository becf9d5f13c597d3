//! Central finite-difference oracle for the analytic adjoints. Lives in the
//! library (not test-only) because the acceptance suite runs it.

use super::{Array, Tape, Var};
use crate::Scalar;

/// Compare analytic gradients of a scalar-valued graph against central finite
/// differences with step `h`. Returns the worst hybrid relative error
/// `|a - n| / max(|a| + |n|, 1)` over all input elements.
pub fn max_grad_error<S, FBuild>(build: FBuild, inputs: &[Array<S>], h: f64) -> f64
where
    S: Scalar,
    FBuild: for<'t> Fn(&'t Tape<S>, &[Var<'t, S>]) -> Var<'t, S>,
{
    let eval = |arrays: &[Array<S>]| -> f64 {
        let tape = Tape::new();
        let vars: Vec<Var<'_, S>> = arrays.iter().map(|a| tape.leaf(a.clone())).collect();
        let out = build(&tape, &vars);
        out.scalar_value().to_f64().unwrap()
    };

    // Analytic pass.
    let tape = Tape::new();
    let vars: Vec<Var<'_, S>> = inputs.iter().map(|a| tape.leaf(a.clone())).collect();
    let out = build(&tape, &vars);
    assert_eq!(out.shape().len(), 1, "gradcheck target must be scalar");
    assert_eq!(out.shape()[0], 1, "gradcheck target must be scalar");
    let grads = tape.backward(out);
    let analytic: Vec<Array<S>> = vars.iter().map(|v| grads.get_or_zeros(*v)).collect();

    let mut worst = 0.0f64;
    let mut work: Vec<Array<S>> = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        for j in 0..input.numel() {
            let orig = input.data()[j].to_f64().unwrap();
            work[i].data_mut()[j] = S::from_f64_lossy(orig + h);
            let up = eval(&work);
            work[i].data_mut()[j] = S::from_f64_lossy(orig - h);
            let down = eval(&work);
            work[i].data_mut()[j] = S::from_f64_lossy(orig);
            let numeric = (up - down) / (2.0 * h);
            let a = analytic[i].data()[j].to_f64().unwrap();
            let err = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1.0);
            if err > worst {
                worst = err;
            }
        }
    }
    worst
}

/// Run the randomized finite-difference suite over every differentiable
/// primitive. Returns (primitive name, worst error over `instances` draws).
pub fn primitive_suite(instances: usize, seed: u64) -> Vec<(&'static str, f64)> {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;
    use std::rc::Rc;

    type A = Array<f64>;
    let h = 1e-5;
    let mut results = Vec::new();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);

    let mut run = |name: &'static str,
                   mut one: Box<dyn FnMut(&mut ChaCha20Rng) -> f64>,
                   rng: &mut ChaCha20Rng| {
        let mut worst = 0.0f64;
        for _ in 0..instances {
            worst = worst.max(one(rng));
        }
        results.push((name, worst));
    };

    run(
        "matmul",
        Box::new(move |rng| {
            let a = A::rand_uniform(rng, &[3, 4], -1.0, 1.0);
            let b = A::rand_uniform(rng, &[4, 2], -1.0, 1.0);
            max_grad_error(|_, v| v[0].matmul(v[1]).square().sum(), &[a, b], h)
        }),
        &mut rng,
    );
    run(
        "conv2d",
        Box::new(move |rng| {
            let x = A::rand_uniform(rng, &[2, 2, 5, 5], -1.0, 1.0);
            let k = A::rand_uniform(rng, &[3, 2, 3, 3], -1.0, 1.0);
            let stride = rng.gen_range(1..=2);
            max_grad_error(move |_, v| v[0].conv2d(v[1], stride, 1).square().sum(), &[x, k], h)
        }),
        &mut rng,
    );
    run(
        "conv1d",
        Box::new(move |rng| {
            let x = A::rand_uniform(rng, &[2, 2, 9], -1.0, 1.0);
            let k = A::rand_uniform(rng, &[2, 2, 3], -1.0, 1.0);
            let circular = rng.gen_bool(0.5);
            max_grad_error(move |_, v| v[0].conv1d(v[1], 1, 1, circular).square().sum(), &[x, k], h)
        }),
        &mut rng,
    );
    run(
        "pointwise_chain",
        Box::new(move |rng| {
            // relu/add/sub/mul/scale/square/max-with-constant in one graph.
            let a = A::rand_uniform(rng, &[6], -1.0, 1.0);
            let b = A::rand_uniform(rng, &[6], -1.0, 1.0);
            max_grad_error(
                |_, v| {
                    let x = v[0].mul(v[1]).add(v[0]).scale(0.7).relu();
                    let y = v[0].sub(v[1]).max_const(-0.2).square();
                    x.add(y).sum()
                },
                &[a, b],
                h,
            )
        }),
        &mut rng,
    );
    run(
        "sqrt_recip",
        Box::new(move |rng| {
            let a = A::rand_uniform(rng, &[5], 0.3, 2.0);
            max_grad_error(|_, v| v[0].sqrt().recip().sum(), &[a], h)
        }),
        &mut rng,
    );
    run(
        "layer_norm",
        Box::new(move |rng| {
            let x = A::rand_uniform(rng, &[3, 6], -2.0, 2.0);
            let gain = A::rand_uniform(rng, &[6], 0.5, 1.5);
            let bias = A::rand_uniform(rng, &[6], -0.5, 0.5);
            max_grad_error(|_, v| v[0].layer_norm(v[1], v[2], 1e-5).square().sum(), &[x, gain, bias], h)
        }),
        &mut rng,
    );
    run(
        "gather_slice_concat_reshape",
        Box::new(move |rng| {
            let a = A::rand_uniform(rng, &[2, 6], -1.0, 1.0);
            let idx = Rc::new((0..8).map(|_| rng.gen_range(0..12)).collect::<Vec<_>>());
            max_grad_error(
                move |tape, v| {
                    let g = v[0].gather(idx.clone(), &[2, 4]);
                    let s = v[0].slice_cols(1, 3);
                    let c = tape.concat_cols(&[g, s]);
                    c.reshape(&[14]).square().sum()
                },
                &[a],
                h,
            )
        }),
        &mut rng,
    );
    run(
        "permute_rows_cols",
        Box::new(move |rng| {
            let a = A::rand_uniform(rng, &[4, 3], -1.0, 1.0);
            let mut pr: Vec<usize> = (0..4).collect();
            let mut pc: Vec<usize> = (0..3).collect();
            for i in (1..4).rev() {
                pr.swap(i, rng.gen_range(0..=i));
            }
            for i in (1..3).rev() {
                pc.swap(i, rng.gen_range(0..=i));
            }
            let (pr, pc) = (Rc::new(pr), Rc::new(pc));
            max_grad_error(
                move |_, v| v[0].permute_rows(pr.clone()).permute_cols(pc.clone()).square().sum(),
                &[a],
                h,
            )
        }),
        &mut rng,
    );
    run(
        "reductions_broadcasts",
        Box::new(move |rng| {
            let x = A::rand_uniform(rng, &[3, 4], -1.0, 1.0);
            let row = A::rand_uniform(rng, &[4], -1.0, 1.0);
            let col = A::rand_uniform(rng, &[3], 0.2, 1.2);
            max_grad_error(
                |_, v| {
                    let y = v[0].add_row(v[1]).mul_col(v[2]);
                    y.row_sum().square().sum().add(y.mean())
                },
                &[x, row, col],
                h,
            )
        }),
        &mut rng,
    );
    run(
        "chan_bias",
        Box::new(move |rng| {
            let x = A::rand_uniform(rng, &[2, 3, 2, 2], -1.0, 1.0);
            let b = A::rand_uniform(rng, &[3], -0.5, 0.5);
            max_grad_error(|_, v| v[0].add_chan_bias(v[1]).square().sum(), &[x, b], h)
        }),
        &mut rng,
    );
    run(
        "cross3_rotmul",
        Box::new(move |rng| {
            let u = A::rand_uniform(rng, &[3, 3], -1.0, 1.0);
            let v2 = A::rand_uniform(rng, &[3, 3], -1.0, 1.0);
            let mut rots = A::zeros(&[3, 9]);
            for b in 0..3 {
                let q = crate::groups::Rotation3::<f64>::sample(rng);
                rots.data_mut()[b * 9..b * 9 + 9].copy_from_slice(q.as_flat());
            }
            max_grad_error(
                move |tape, v| {
                    let c = v[0].cross3(v[1]);
                    let z = tape.concat_cols(&[v[0], v[1], c]);
                    z.rot_left_mul(&rots).square().sum()
                },
                &[u, v2],
                h,
            )
        }),
        &mut rng,
    );
    run(
        "fiber_max_pool",
        Box::new(move |rng| {
            let x = A::rand_uniform(rng, &[2, 2, 4, 2, 2], -1.0, 1.0);
            max_grad_error(|_, v| v[0].fiber_max_pool().square().sum(), &[x], h)
        }),
        &mut rng,
    );
    run(
        "bce_with_logits",
        Box::new(move |rng| {
            let x = A::rand_uniform(rng, &[2, 5], -2.0, 2.0);
            let labels = A::new(
                vec![2, 5],
                (0..10).map(|_| if rng.gen_bool(0.3) { 1.0 } else { 0.0 }).collect(),
            );
            max_grad_error(move |_, v| v[0].bce_with_logits(&labels), &[x], h)
        }),
        &mut rng,
    );

    results
}

#[cfg(test)]
mod tests {
    #[test]
    fn every_primitive_matches_finite_differences() {
        for (name, err) in super::primitive_suite(100, 7) {
            assert!(err <= 1e-4, "{name}: finite-difference error {err:.3e} exceeds 1e-4");
        }
    }
}

