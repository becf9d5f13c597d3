use crate::autodiff::{BoundParams, ParamId, ParamStore, Var};
use crate::groups::{make_cyclic, make_dihedral, FiniteGroup};
use crate::{Arr, Tape, F};
use rand::Rng;
use std::rc::Rc;
use std::sync::{Arc, OnceLock};

/// Fiber group of a group convolution: p4 (quarter rotations) or
/// p4m (rotations and flips).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fiber {
    P4,
    P4M,
}

static C4: OnceLock<Arc<FiniteGroup>> = OnceLock::new();
static D4: OnceLock<Arc<FiniteGroup>> = OnceLock::new();

impl Fiber {
    pub fn group(&self) -> &Arc<FiniteGroup> {
        match self {
            Fiber::P4 => C4.get_or_init(|| make_cyclic(4).unwrap()),
            Fiber::P4M => D4.get_or_init(|| make_dihedral(4).unwrap()),
        }
    }

    pub fn size(&self) -> usize {
        match self {
            Fiber::P4 => 4,
            Fiber::P4M => 8,
        }
    }

    /// Action of element g on an index of an n x n array: rotations map
    /// (r, c) to (n-1-c, r); the reflection generator flips rows. Applied
    /// right-to-left (flip first), matching the Cayley convention.
    pub fn pixel_map(&self, g: usize, n: usize, r: usize, c: usize) -> (usize, usize) {
        let (k, j) = match self {
            Fiber::P4 => (g, 0),
            Fiber::P4M => (g % 4, g / 4),
        };
        let (mut r, mut c) = if j == 1 { (n - 1 - r, c) } else { (r, c) };
        for _ in 0..k {
            let (nr, nc) = (n - 1 - c, r);
            r = nr;
            c = nc;
        }
        (r, c)
    }
}

/// Transform an image batch [B,C,H,W] by a fiber element: out[y] = in[g^-1 y].
pub fn transform_image(x: &Arr, fiber: Fiber, g: usize) -> Arr {
    let sh = x.shape();
    assert_eq!(sh.len(), 4, "transform_image expects [B,C,H,W], got {sh:?}");
    let (b, c, h, w) = (sh[0], sh[1], sh[2], sh[3]);
    assert_eq!(h, w, "square images only");
    let ginv = fiber.group().inv(g);
    let mut out = Arr::zeros(sh);
    for bi in 0..b {
        for ci in 0..c {
            let base = (bi * c + ci) * h * w;
            for y in 0..h {
                for xx in 0..w {
                    let (sy, sx) = fiber.pixel_map(ginv, h, y, xx);
                    out.data_mut()[base + y * w + xx] = x.data()[base + sy * w + sx];
                }
            }
        }
    }
    out
}

/// Transform a lifted feature batch [B,C,F,H,W]: out[f, y] = in[g^-1 f, g^-1 y].
pub fn transform_lifted(x: &Arr, fiber: Fiber, g: usize) -> Arr {
    let sh = x.shape();
    assert_eq!(sh.len(), 5, "transform_lifted expects [B,C,F,H,W], got {sh:?}");
    let (b, c, nf, h, w) = (sh[0], sh[1], sh[2], sh[3], sh[4]);
    assert_eq!(nf, fiber.size());
    assert_eq!(h, w, "square features only");
    let grp = fiber.group();
    let ginv = grp.inv(g);
    let mut out = Arr::zeros(sh);
    for bi in 0..b {
        for ci in 0..c {
            for f in 0..nf {
                let sf = grp.mul(ginv, f);
                let obase = (((bi * c + ci) * nf) + f) * h * w;
                let ibase = (((bi * c + ci) * nf) + sf) * h * w;
                for y in 0..h {
                    for xx in 0..w {
                        let (sy, sx) = fiber.pixel_map(ginv, h, y, xx);
                        out.data_mut()[obase + y * w + xx] = x.data()[ibase + sy * w + sx];
                    }
                }
            }
        }
    }
    out
}

fn init_kernels(
    params: &mut ParamStore<F>,
    rng: &mut impl Rng,
    name: &str,
    shape: &[usize],
    fan_in: usize,
) -> (ParamId, ParamId) {
    // Uniform in [-s, s] with s = fan_in^(-1/2); fan-in counted once on the
    // shared kernel, not per fiber copy.
    let s = 1.0 / (fan_in as f64).sqrt();
    let k = params.add(format!("{name}.kernels"), Arr::rand_uniform(rng, shape, -s, s));
    let b = params.add(format!("{name}.bias"), Arr::zeros(&[shape[0]]));
    (k, b)
}

/// Lifting convolution: correlate the input with every fiber-transformed
/// copy of one shared kernel tensor, producing a fiber channel axis.
pub struct LiftConv {
    pub fiber: Fiber,
    in_ch: usize,
    out_ch: usize,
    ksize: usize,
    stride: usize,
    pad: usize,
    kernels: ParamId,
    bias: ParamId,
    expand_idx: Rc<Vec<usize>>,
    bias_idx: Rc<Vec<usize>>,
}

impl LiftConv {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        fiber: Fiber,
        in_ch: usize,
        out_ch: usize,
        ksize: usize,
        stride: usize,
        pad: usize,
        params: &mut ParamStore<F>,
        rng: &mut impl Rng,
        name: &str,
    ) -> Self {
        let (kernels, bias) =
            init_kernels(params, rng, name, &[out_ch, in_ch, ksize, ksize], in_ch * ksize * ksize);
        let nf = fiber.size();
        let grp = fiber.group();
        // expanded[(co*F + f), ci, y, x] = base[co, ci, f^-1 (y, x)]
        let mut idx = Vec::with_capacity(out_ch * nf * in_ch * ksize * ksize);
        for co in 0..out_ch {
            for f in 0..nf {
                let finv = grp.inv(f);
                for ci in 0..in_ch {
                    for y in 0..ksize {
                        for x in 0..ksize {
                            let (sy, sx) = fiber.pixel_map(finv, ksize, y, x);
                            idx.push(((co * in_ch + ci) * ksize + sy) * ksize + sx);
                        }
                    }
                }
            }
        }
        let bias_idx = (0..out_ch * nf).map(|i| i / nf).collect();
        LiftConv {
            fiber,
            in_ch,
            out_ch,
            ksize,
            stride,
            pad,
            kernels,
            bias,
            expand_idx: Rc::new(idx),
            bias_idx: Rc::new(bias_idx),
        }
    }

    /// [B, Cin, H, W] -> [B, Cout, |F|, H', W'].
    pub fn forward<'t>(&self, tape: &'t Tape, p: &BoundParams<'t, F>, x: Var<'t, F>) -> Var<'t, F> {
        let sh = x.shape();
        assert_eq!(sh.len(), 4, "lift conv input [B,Cin,H,W], got {sh:?}");
        let (b, h, w) = (sh[0], sh[2], sh[3]);
        assert_eq!(h, w, "lift conv requires square spatial input, got {sh:?}");
        assert_eq!(sh[1], self.in_ch, "channel mismatch");
        assert_eq!(
            (h + 2 * self.pad - self.ksize) % self.stride,
            0,
            "geometry (H + 2p - k) must be divisible by stride for exact equivariance"
        );
        let nf = self.fiber.size();
        let expanded = p.var(self.kernels).gather(
            self.expand_idx.clone(),
            &[self.out_ch * nf, self.in_ch, self.ksize, self.ksize],
        );
        let bias = p.var(self.bias).gather(self.bias_idx.clone(), &[self.out_ch * nf]);
        let y = x.conv2d(expanded, self.stride, self.pad).add_chan_bias(bias);
        let ho = (h + 2 * self.pad - self.ksize) / self.stride + 1;
        let _ = tape;
        y.reshape(&[b, self.out_ch, nf, ho, ho])
    }
}

/// Group-to-group convolution: full convolution over the fiber group with
/// spatially transformed kernel copies; exact regular-representation
/// equivariance in the fiber axis.
pub struct GroupConv {
    pub fiber: Fiber,
    in_ch: usize,
    out_ch: usize,
    ksize: usize,
    stride: usize,
    pad: usize,
    kernels: ParamId,
    bias: ParamId,
    expand_idx: Rc<Vec<usize>>,
    bias_idx: Rc<Vec<usize>>,
}

impl GroupConv {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        fiber: Fiber,
        in_ch: usize,
        out_ch: usize,
        ksize: usize,
        stride: usize,
        pad: usize,
        params: &mut ParamStore<F>,
        rng: &mut impl Rng,
        name: &str,
    ) -> Self {
        let nf = fiber.size();
        let (kernels, bias) = init_kernels(
            params,
            rng,
            name,
            &[out_ch, in_ch, nf, ksize, ksize],
            in_ch * nf * ksize * ksize,
        );
        let grp = fiber.group();
        // expanded[(co*F + f), (ci*F + f2), y, x] = base[co, ci, f^-1 f2, f^-1 (y, x)]
        let mut idx = Vec::with_capacity(out_ch * nf * in_ch * nf * ksize * ksize);
        for co in 0..out_ch {
            for f in 0..nf {
                let finv = grp.inv(f);
                for ci in 0..in_ch {
                    for f2 in 0..nf {
                        let sf = grp.mul(finv, f2);
                        for y in 0..ksize {
                            for x in 0..ksize {
                                let (sy, sx) = fiber.pixel_map(finv, ksize, y, x);
                                idx.push((((co * in_ch + ci) * nf + sf) * ksize + sy) * ksize + sx);
                            }
                        }
                    }
                }
            }
        }
        let bias_idx = (0..out_ch * nf).map(|i| i / nf).collect();
        GroupConv {
            fiber,
            in_ch,
            out_ch,
            ksize,
            stride,
            pad,
            kernels,
            bias,
            expand_idx: Rc::new(idx),
            bias_idx: Rc::new(bias_idx),
        }
    }

    /// [B, Cin, |F|, H, W] -> [B, Cout, |F|, H', W'].
    pub fn forward<'t>(&self, tape: &'t Tape, p: &BoundParams<'t, F>, x: Var<'t, F>) -> Var<'t, F> {
        let sh = x.shape();
        assert_eq!(sh.len(), 5, "group conv input [B,Cin,F,H,W], got {sh:?}");
        let nf = self.fiber.size();
        assert_eq!(sh[2], nf, "fiber length mismatch: input {} vs |F| {nf}", sh[2]);
        let (b, h, w) = (sh[0], sh[3], sh[4]);
        assert_eq!(h, w, "group conv requires square spatial input, got {sh:?}");
        assert_eq!(sh[1], self.in_ch, "channel mismatch");
        assert_eq!(
            (h + 2 * self.pad - self.ksize) % self.stride,
            0,
            "geometry (H + 2p - k) must be divisible by stride for exact equivariance"
        );
        let flat = x.reshape(&[b, self.in_ch * nf, h, w]);
        let expanded = p.var(self.kernels).gather(
            self.expand_idx.clone(),
            &[self.out_ch * nf, self.in_ch * nf, self.ksize, self.ksize],
        );
        let bias = p.var(self.bias).gather(self.bias_idx.clone(), &[self.out_ch * nf]);
        let y = flat.conv2d(expanded, self.stride, self.pad).add_chan_bias(bias);
        let ho = (h + 2 * self.pad - self.ksize) / self.stride + 1;
        let _ = tape;
        y.reshape(&[b, self.out_ch, nf, ho, ho])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn run_lift(l: &LiftConv, params: &ParamStore<F>, x: &Arr) -> Arr {
        let tape = Tape::new();
        let bound = params.bind(&tape);
        l.forward(&tape, &bound, tape.leaf(x.clone())).value()
    }

    fn run_group(l: &GroupConv, params: &ParamStore<F>, x: &Arr) -> Arr {
        let tape = Tape::new();
        let bound = params.bind(&tape);
        l.forward(&tape, &bound, tape.leaf(x.clone())).value()
    }

    #[test]
    fn constant_input_gives_equal_fiber_channels() {
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        let mut params = ParamStore::new();
        let lift = LiftConv::new(Fiber::P4, 1, 2, 3, 1, 1, &mut params, &mut rng, "l");
        let x = Arr::full(&[1, 1, 6, 6], 0.7);
        let y = run_lift(&lift, &params, &x);
        // Center pixel sees the full kernel under every rotation.
        let sh = y.shape().to_vec();
        let (cf, h, w) = (sh[2], sh[3], sh[4]);
        for co in 0..sh[1] {
            let v0 = y.data()[((co * cf) * h + 3) * w + 3];
            for f in 1..cf {
                let vf = y.data()[(((co * cf) + f) * h + 3) * w + 3];
                assert!((vf - v0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn one_by_one_kernels_make_identical_fiber_channels() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let mut params = ParamStore::new();
        let lift = LiftConv::new(Fiber::P4, 2, 3, 1, 1, 0, &mut params, &mut rng, "l");
        let x = Arr::rand_uniform(&mut rng, &[1, 2, 5, 5], -1.0, 1.0);
        let y = run_lift(&lift, &params, &x);
        let sh = y.shape().to_vec();
        let hw = sh[3] * sh[4];
        for co in 0..sh[1] {
            for f in 1..sh[2] {
                for i in 0..hw {
                    let a = y.data()[(co * sh[2]) * hw + i];
                    let b = y.data()[(co * sh[2] + f) * hw + i];
                    assert_eq!(a, b);
                }
            }
        }
    }

    #[test]
    fn lift_equivariance_rotation_shifts_fiber_exactly() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        for &fiber in &[Fiber::P4, Fiber::P4M] {
            let mut params = ParamStore::new();
            let lift = LiftConv::new(fiber, 2, 3, 3, 1, 1, &mut params, &mut rng, "l");
            let x = Arr::rand_uniform(&mut rng, &[2, 2, 6, 6], -1.0, 1.0);
            let y = run_lift(&lift, &params, &x);
            for g in fiber.group().elements() {
                let gy = run_lift(&lift, &params, &transform_image(&x, fiber, g));
                let want = transform_lifted(&y, fiber, g);
                assert!(
                    gy.max_abs_diff(&want) <= 1e-12,
                    "fiber {fiber:?} g={g}: {:.3e}",
                    gy.max_abs_diff(&want)
                );
            }
        }
    }

    #[test]
    fn group_conv_equivariance_exhaustive_over_fiber() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        for &fiber in &[Fiber::P4, Fiber::P4M] {
            let mut params = ParamStore::new();
            let gc = GroupConv::new(fiber, 2, 2, 3, 1, 1, &mut params, &mut rng, "g");
            let x = Arr::rand_uniform(&mut rng, &[1, 2, fiber.size(), 6, 6], -1.0, 1.0);
            let y = run_group(&gc, &params, &x);
            for g in fiber.group().elements() {
                let gy = run_group(&gc, &params, &transform_lifted(&x, fiber, g));
                let want = transform_lifted(&y, fiber, g);
                assert!(
                    gy.max_abs_diff(&want) <= 1e-12,
                    "fiber {fiber:?} g={g}: {:.3e}",
                    gy.max_abs_diff(&want)
                );
            }
        }
    }

    #[test]
    fn strided_layers_stay_equivariant_when_geometry_divides() {
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let mut params = ParamStore::new();
        // 8 + 2*1 - 4 = 6, stride 2 divides.
        let lift = LiftConv::new(Fiber::P4M, 1, 2, 4, 2, 1, &mut params, &mut rng, "l");
        let x = Arr::rand_uniform(&mut rng, &[1, 1, 8, 8], -1.0, 1.0);
        let y = run_lift(&lift, &params, &x);
        for g in Fiber::P4M.group().elements() {
            let gy = run_lift(&lift, &params, &transform_image(&x, Fiber::P4M, g));
            let want = transform_lifted(&y, Fiber::P4M, g);
            assert!(gy.max_abs_diff(&want) <= 1e-12);
        }
    }

    #[test]
    fn lift_then_group_then_fiber_max_then_sum_is_invariant() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let mut params = ParamStore::new();
        let lift = LiftConv::new(Fiber::P4, 1, 2, 3, 1, 1, &mut params, &mut rng, "l");
        let gc = GroupConv::new(Fiber::P4, 2, 2, 3, 1, 1, &mut params, &mut rng, "g");
        let x = Arr::rand_uniform(&mut rng, &[1, 1, 6, 6], -1.0, 1.0);
        let run = |inp: &Arr| -> f64 {
            let tape = Tape::new();
            let bound = params.bind(&tape);
            let v = tape.leaf(inp.clone());
            let lifted = lift.forward(&tape, &bound, v).relu();
            let feat = gc.forward(&tape, &bound, lifted);
            feat.fiber_max_pool().sum().scalar_value()
        };
        let base = run(&x);
        for g in Fiber::P4.group().elements() {
            let v = run(&transform_image(&x, Fiber::P4, g));
            assert!((v - base).abs() <= 1e-9, "g={g}: {v} vs {base}");
        }
    }

    #[test]
    #[should_panic(expected = "square spatial input")]
    fn non_square_input_is_rejected() {
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        let mut params = ParamStore::new();
        let lift = LiftConv::new(Fiber::P4, 1, 1, 3, 1, 1, &mut params, &mut rng, "l");
        let x = Arr::zeros(&[1, 1, 6, 4]);
        let tape = Tape::new();
        let bound = params.bind(&tape);
        let _ = lift.forward(&tape, &bound, tape.leaf(x));
    }
}
