//! Plain-array compute kernels shared by the tape and by non-differentiated
//! callers (environments, metrics, representation matrices).

use super::Array;
use crate::Scalar;

/// Standard matrix product of 2-D arrays.
pub fn matmul<S: Scalar>(a: &Array<S>, b: &Array<S>) -> Array<S> {
    assert_eq!(a.shape().len(), 2, "matmul lhs must be 2-D, got {:?}", a.shape());
    assert_eq!(b.shape().len(), 2, "matmul rhs must be 2-D, got {:?}", b.shape());
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let (k2, n) = (b.shape()[0], b.shape()[1]);
    assert_eq!(k, k2, "matmul: inner extents differ, lhs {:?} vs rhs {:?}", a.shape(), b.shape());
    let mut out = Array::zeros(&[m, n]);
    let ad = a.data();
    let bd = b.data();
    let od = out.data_mut();
    // i-k-j order keeps the inner loop contiguous in both b and out.
    for i in 0..m {
        for kk in 0..k {
            let av = ad[i * k + kk];
            if av == S::zero() {
                continue;
            }
            let brow = &bd[kk * n..(kk + 1) * n];
            let orow = &mut od[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
    out
}

/// Output spatial dims of a 2-D cross-correlation.
pub fn conv2d_out_dims(h: usize, w: usize, kh: usize, kw: usize, stride: usize, pad: usize) -> (usize, usize) {
    assert!(stride >= 1, "stride must be >= 1");
    assert!(
        kh <= h + 2 * pad && kw <= w + 2 * pad,
        "kernel {kh}x{kw} larger than padded input {}x{}",
        h + 2 * pad,
        w + 2 * pad
    );
    ((h + 2 * pad - kh) / stride + 1, (w + 2 * pad - kw) / stride + 1)
}

/// Batched 2-D cross-correlation: input [B,Cin,H,W], kernels [Cout,Cin,kh,kw].
pub fn conv2d_fwd<S: Scalar>(input: &Array<S>, kernels: &Array<S>, stride: usize, pad: usize) -> Array<S> {
    let ish = input.shape();
    assert_eq!(ish.len(), 4, "conv2d input must be [B,Cin,H,W], got {ish:?}");
    let ksh = kernels.shape();
    assert_eq!(ksh.len(), 4, "conv2d kernels must be [Cout,Cin,kh,kw], got {ksh:?}");
    let (b, cin, h, w) = (ish[0], ish[1], ish[2], ish[3]);
    let (cout, cink, kh, kw) = (ksh[0], ksh[1], ksh[2], ksh[3]);
    assert_eq!(cin, cink, "conv2d: channel mismatch, input {ish:?} vs kernels {ksh:?}");
    let (ho, wo) = conv2d_out_dims(h, w, kh, kw, stride, pad);
    let mut out = Array::zeros(&[b, cout, ho, wo]);
    let id = input.data();
    let kd = kernels.data();
    let od = out.data_mut();
    for bi in 0..b {
        for co in 0..cout {
            let obase = ((bi * cout) + co) * ho * wo;
            for ci in 0..cin {
                let ibase = ((bi * cin) + ci) * h * w;
                let kbase = ((co * cin) + ci) * kh * kw;
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = S::zero();
                        for ky in 0..kh {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..kw {
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                acc += id[ibase + iy as usize * w + ix as usize] * kd[kbase + ky * kw + kx];
                            }
                        }
                        od[obase + oy * wo + ox] += acc;
                    }
                }
            }
        }
    }
    out
}

/// Gradient of conv2d w.r.t. the input.
pub fn conv2d_back_input<S: Scalar>(
    grad_out: &Array<S>,
    kernels: &Array<S>,
    input_shape: &[usize],
    stride: usize,
    pad: usize,
) -> Array<S> {
    let (b, cin, h, w) = (input_shape[0], input_shape[1], input_shape[2], input_shape[3]);
    let ksh = kernels.shape();
    let (cout, kh, kw) = (ksh[0], ksh[2], ksh[3]);
    let osh = grad_out.shape();
    let (ho, wo) = (osh[2], osh[3]);
    let mut gin = Array::zeros(input_shape);
    let gd = grad_out.data();
    let kd = kernels.data();
    let gid = gin.data_mut();
    for bi in 0..b {
        for co in 0..cout {
            let obase = ((bi * cout) + co) * ho * wo;
            for ci in 0..cin {
                let ibase = ((bi * cin) + ci) * h * w;
                let kbase = ((co * cin) + ci) * kh * kw;
                for oy in 0..ho {
                    for ox in 0..wo {
                        let g = gd[obase + oy * wo + ox];
                        if g == S::zero() {
                            continue;
                        }
                        for ky in 0..kh {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..kw {
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                gid[ibase + iy as usize * w + ix as usize] += g * kd[kbase + ky * kw + kx];
                            }
                        }
                    }
                }
            }
        }
    }
    gin
}

/// Gradient of conv2d w.r.t. the kernels.
pub fn conv2d_back_kernels<S: Scalar>(
    grad_out: &Array<S>,
    input: &Array<S>,
    kernel_shape: &[usize],
    stride: usize,
    pad: usize,
) -> Array<S> {
    let ish = input.shape();
    let (b, cin, h, w) = (ish[0], ish[1], ish[2], ish[3]);
    let (cout, kh, kw) = (kernel_shape[0], kernel_shape[2], kernel_shape[3]);
    let osh = grad_out.shape();
    let (ho, wo) = (osh[2], osh[3]);
    let mut gk = Array::zeros(kernel_shape);
    let gd = grad_out.data();
    let id = input.data();
    let gkd = gk.data_mut();
    for bi in 0..b {
        for co in 0..cout {
            let obase = ((bi * cout) + co) * ho * wo;
            for ci in 0..cin {
                let ibase = ((bi * cin) + ci) * h * w;
                let kbase = ((co * cin) + ci) * kh * kw;
                for oy in 0..ho {
                    for ox in 0..wo {
                        let g = gd[obase + oy * wo + ox];
                        if g == S::zero() {
                            continue;
                        }
                        for ky in 0..kh {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..kw {
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                gkd[kbase + ky * kw + kx] += g * id[ibase + iy as usize * w + ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    gk
}

/// Output length of a 1-D cross-correlation.
pub fn conv1d_out_len(t: usize, k: usize, stride: usize, pad: usize, circular: bool) -> usize {
    assert!(stride >= 1, "stride must be >= 1");
    if circular {
        // Wrapped indexing keeps the full length at stride 1.
        assert!(k <= t, "circular kernel {k} longer than signal {t}");
        (t - 1) / stride + 1
    } else {
        assert!(k <= t + 2 * pad, "kernel {k} larger than padded input {}", t + 2 * pad);
        (t + 2 * pad - k) / stride + 1
    }
}

/// Batched 1-D cross-correlation: input [B,Cin,T], kernels [Cout,Cin,k].
/// With `circular`, indices wrap (and `pad` acts as a pure offset), which
/// makes the map exactly shift-equivariant on periodic signals.
pub fn conv1d_fwd<S: Scalar>(
    input: &Array<S>,
    kernels: &Array<S>,
    stride: usize,
    pad: usize,
    circular: bool,
) -> Array<S> {
    let ish = input.shape();
    assert_eq!(ish.len(), 3, "conv1d input must be [B,Cin,T], got {ish:?}");
    let ksh = kernels.shape();
    assert_eq!(ksh.len(), 3, "conv1d kernels must be [Cout,Cin,k], got {ksh:?}");
    let (b, cin, t) = (ish[0], ish[1], ish[2]);
    let (cout, cink, k) = (ksh[0], ksh[1], ksh[2]);
    assert_eq!(cin, cink, "conv1d: channel mismatch, input {ish:?} vs kernels {ksh:?}");
    let to = conv1d_out_len(t, k, stride, pad, circular);
    let mut out = Array::zeros(&[b, cout, to]);
    let id = input.data();
    let kd = kernels.data();
    let od = out.data_mut();
    for bi in 0..b {
        for co in 0..cout {
            let obase = ((bi * cout) + co) * to;
            for ci in 0..cin {
                let ibase = ((bi * cin) + ci) * t;
                let kbase = ((co * cin) + ci) * k;
                for ot in 0..to {
                    let mut acc = S::zero();
                    for kk in 0..k {
                        let raw = (ot * stride + kk) as isize - pad as isize;
                        let idx = if circular {
                            Some(raw.rem_euclid(t as isize) as usize)
                        } else if raw < 0 || raw >= t as isize {
                            None
                        } else {
                            Some(raw as usize)
                        };
                        if let Some(ix) = idx {
                            acc += id[ibase + ix] * kd[kbase + kk];
                        }
                    }
                    od[obase + ot] += acc;
                }
            }
        }
    }
    out
}

pub fn conv1d_back_input<S: Scalar>(
    grad_out: &Array<S>,
    kernels: &Array<S>,
    input_shape: &[usize],
    stride: usize,
    pad: usize,
    circular: bool,
) -> Array<S> {
    let (b, cin, t) = (input_shape[0], input_shape[1], input_shape[2]);
    let ksh = kernels.shape();
    let (cout, k) = (ksh[0], ksh[2]);
    let to = grad_out.shape()[2];
    let mut gin = Array::zeros(input_shape);
    let gd = grad_out.data();
    let kd = kernels.data();
    let gid = gin.data_mut();
    for bi in 0..b {
        for co in 0..cout {
            let obase = ((bi * cout) + co) * to;
            for ci in 0..cin {
                let ibase = ((bi * cin) + ci) * t;
                let kbase = ((co * cin) + ci) * k;
                for ot in 0..to {
                    let g = gd[obase + ot];
                    if g == S::zero() {
                        continue;
                    }
                    for kk in 0..k {
                        let raw = (ot * stride + kk) as isize - pad as isize;
                        let idx = if circular {
                            Some(raw.rem_euclid(t as isize) as usize)
                        } else if raw < 0 || raw >= t as isize {
                            None
                        } else {
                            Some(raw as usize)
                        };
                        if let Some(ix) = idx {
                            gid[ibase + ix] += g * kd[kbase + kk];
                        }
                    }
                }
            }
        }
    }
    gin
}

pub fn conv1d_back_kernels<S: Scalar>(
    grad_out: &Array<S>,
    input: &Array<S>,
    kernel_shape: &[usize],
    stride: usize,
    pad: usize,
    circular: bool,
) -> Array<S> {
    let ish = input.shape();
    let (b, cin, t) = (ish[0], ish[1], ish[2]);
    let (cout, k) = (kernel_shape[0], kernel_shape[2]);
    let to = grad_out.shape()[2];
    let mut gk = Array::zeros(kernel_shape);
    let gd = grad_out.data();
    let id = input.data();
    let gkd = gk.data_mut();
    for bi in 0..b {
        for co in 0..cout {
            let obase = ((bi * cout) + co) * to;
            for ci in 0..cin {
                let ibase = ((bi * cin) + ci) * t;
                let kbase = ((co * cin) + ci) * k;
                for ot in 0..to {
                    let g = gd[obase + ot];
                    if g == S::zero() {
                        continue;
                    }
                    for kk in 0..k {
                        let raw = (ot * stride + kk) as isize - pad as isize;
                        let idx = if circular {
                            Some(raw.rem_euclid(t as isize) as usize)
                        } else if raw < 0 || raw >= t as isize {
                            None
                        } else {
                            Some(raw as usize)
                        };
                        if let Some(ix) = idx {
                            gkd[kbase + kk] += g * id[ibase + ix];
                        }
                    }
                }
            }
        }
    }
    gk
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv2d_identity_kernel() {
        let x = Array::<f64>::from_f64(&[1, 1, 3, 3], &[1., 2., 3., 4., 5., 6., 7., 8., 9.]);
        let k = Array::from_f64(&[1, 1, 1, 1], &[1.0]);
        let y = conv2d_fwd(&x, &k, 1, 0);
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn conv2d_box_sum() {
        let x = Array::<f64>::full(&[1, 1, 5, 5], 1.0);
        let k = Array::full(&[1, 1, 3, 3], 1.0);
        let y = conv2d_fwd(&x, &k, 1, 0);
        assert_eq!(y.shape(), &[1, 1, 3, 3]);
        assert!(y.data().iter().all(|&v| v == 9.0));
    }

    #[test]
    fn conv1d_circular_shift_equivariance_exact() {
        let t = 10;
        let x: Vec<f64> = (0..t).map(|i| (i as f64 * 0.7).sin()).collect();
        let input = Array::new(vec![1, 1, t], x.clone());
        let k = Array::from_f64(&[1, 1, 3], &[0.25, 0.5, -1.0]);
        let y = conv1d_fwd(&input, &k, 1, 1, true);
        for s in 0..t {
            let shifted: Vec<f64> = (0..t).map(|i| x[(i + t - s) % t]).collect();
            let ys = conv1d_fwd(&Array::new(vec![1, 1, t], shifted), &k, 1, 1, true);
            for i in 0..t {
                assert_eq!(ys.data()[i], y.data()[(i + t - s) % t], "shift {s} index {i}");
            }
        }
    }

    #[test]
    #[should_panic(expected = "larger than padded input")]
    fn conv2d_kernel_too_large() {
        let x = Array::<f64>::zeros(&[1, 1, 3, 3]);
        let k = Array::zeros(&[1, 1, 5, 5]);
        let _ = conv2d_fwd(&x, &k, 1, 0);
    }
}
