//! Convolution and pooling kernels. Convolutions run as per-sample im2col
//! followed by a dense matmul, with the transposed products for the
//! backward pass.

use ndarray::{s, Array2, Array4, ArrayView4};

use crate::num::Scalar;

pub fn conv_out_size(h: usize, k: usize, stride: usize, pad: usize) -> usize {
    (h + 2 * pad - k) / stride + 1
}

/// x: (N, Cin, H, W), w: (Cout, Cin/groups, K, K) -> (N, Cout, OH, OW).
pub fn conv2d_forward<F: Scalar>(
    x: &ArrayView4<F>,
    w: &ArrayView4<F>,
    bias: Option<&[F]>,
    stride: usize,
    pad: usize,
    groups: usize,
) -> Array4<F> {
    let (n, cin, h, width) = x.dim();
    let (cout, cin_g, k, _) = w.dim();
    debug_assert_eq!(cin_g * groups, cin);
    let oh = conv_out_size(h, k, stride, pad);
    let ow = conv_out_size(width, k, stride, pad);
    let cout_g = cout / groups;
    let mut out = Array4::zeros((n, cout, oh, ow));

    for g in 0..groups {
        // (Cout/g, Cin/g*K*K)
        let w_mat = w
            .slice(s![g * cout_g..(g + 1) * cout_g, .., .., ..])
            .to_shape((cout_g, cin_g * k * k))
            .unwrap()
            .to_owned();
        for i in 0..n {
            let col = im2col(x, i, g * cin_g, cin_g, k, stride, pad, oh, ow);
            let y = w_mat.dot(&col); // (Cout/g, OH*OW)
            for c in 0..cout_g {
                for p in 0..oh * ow {
                    out[[i, g * cout_g + c, p / ow, p % ow]] = y[[c, p]];
                }
            }
        }
    }
    if let Some(b) = bias {
        for i in 0..n {
            for c in 0..cout {
                for y in 0..oh {
                    for xx in 0..ow {
                        out[[i, c, y, xx]] += b[c];
                    }
                }
            }
        }
    }
    out
}

/// Gradients of conv2d. Returns (dx, dw, db).
pub fn conv2d_backward<F: Scalar>(
    x: &ArrayView4<F>,
    w: &ArrayView4<F>,
    dy: &ArrayView4<F>,
    has_bias: bool,
    stride: usize,
    pad: usize,
    groups: usize,
) -> (Array4<F>, Array4<F>, Option<Vec<F>>) {
    let (n, cin, h, width) = x.dim();
    let (cout, cin_g, k, _) = w.dim();
    let (_, _, oh, ow) = dy.dim();
    let cout_g = cout / groups;

    let mut dx = Array4::zeros((n, cin, h, width));
    let mut dw = Array4::zeros(w.raw_dim());
    let mut db = if has_bias {
        Some(vec![F::zero(); cout])
    } else {
        None
    };

    for g in 0..groups {
        let w_mat = w
            .slice(s![g * cout_g..(g + 1) * cout_g, .., .., ..])
            .to_shape((cout_g, cin_g * k * k))
            .unwrap()
            .to_owned();
        let w_t = w_mat.t().to_owned();
        let mut dw_mat: Array2<F> = Array2::zeros((cout_g, cin_g * k * k));
        for i in 0..n {
            let mut dy_mat: Array2<F> = Array2::zeros((cout_g, oh * ow));
            for c in 0..cout_g {
                for p in 0..oh * ow {
                    dy_mat[[c, p]] = dy[[i, g * cout_g + c, p / ow, p % ow]];
                }
            }
            let col = im2col(x, i, g * cin_g, cin_g, k, stride, pad, oh, ow);
            dw_mat = dw_mat + dy_mat.dot(&col.t());
            let dcol = w_t.dot(&dy_mat); // (Cin/g*K*K, OH*OW)
            col2im_accumulate(&mut dx, &dcol, i, g * cin_g, cin_g, k, stride, pad, oh, ow);
        }
        for c in 0..cout_g {
            for j in 0..cin_g * k * k {
                dw[[g * cout_g + c, j / (k * k), (j / k) % k, j % k]] = dw_mat[[c, j]];
            }
        }
    }
    if let Some(db) = db.as_mut() {
        for i in 0..n {
            for c in 0..cout {
                for y in 0..oh {
                    for xx in 0..ow {
                        db[c] += dy[[i, c, y, xx]];
                    }
                }
            }
        }
    }
    (dx, dw, db)
}

#[allow(clippy::too_many_arguments)]
fn im2col<F: Scalar>(
    x: &ArrayView4<F>,
    sample: usize,
    c0: usize,
    cin_g: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
) -> Array2<F> {
    let (_, _, h, w) = x.dim();
    let mut col = Array2::zeros((cin_g * k * k, oh * ow));
    for c in 0..cin_g {
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                for oy in 0..oh {
                    let iy = oy * stride + ky;
                    if iy < pad || iy >= h + pad {
                        continue;
                    }
                    let iy = iy - pad;
                    for ox in 0..ow {
                        let ix = ox * stride + kx;
                        if ix < pad || ix >= w + pad {
                            continue;
                        }
                        col[[row, oy * ow + ox]] = x[[sample, c0 + c, iy, ix - pad]];
                    }
                }
            }
        }
    }
    col
}

#[allow(clippy::too_many_arguments)]
fn col2im_accumulate<F: Scalar>(
    dx: &mut Array4<F>,
    dcol: &Array2<F>,
    sample: usize,
    c0: usize,
    cin_g: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
) {
    let (_, _, h, w) = dx.dim();
    for c in 0..cin_g {
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                for oy in 0..oh {
                    let iy = oy * stride + ky;
                    if iy < pad || iy >= h + pad {
                        continue;
                    }
                    let iy = iy - pad;
                    for ox in 0..ow {
                        let ix = ox * stride + kx;
                        if ix < pad || ix >= w + pad {
                            continue;
                        }
                        dx[[sample, c0 + c, iy, ix - pad]] += dcol[[row, oy * ow + ox]];
                    }
                }
            }
        }
    }
}

pub fn maxpool_forward<F: Scalar>(
    x: &ArrayView4<F>,
    k: usize,
    stride: usize,
    pad: usize,
) -> Array4<F> {
    let (n, c, h, w) = x.dim();
    let oh = conv_out_size(h, k, stride, pad);
    let ow = conv_out_size(w, k, stride, pad);
    let mut out = Array4::zeros((n, c, oh, ow));
    for i in 0..n {
        for ch in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    out[[i, ch, oy, ox]] =
                        pool_window_max(x, i, ch, oy, ox, k, stride, pad).0;
                }
            }
        }
    }
    out
}

pub fn maxpool_backward<F: Scalar>(
    x: &ArrayView4<F>,
    dy: &ArrayView4<F>,
    k: usize,
    stride: usize,
    pad: usize,
) -> Array4<F> {
    let (n, c, h, w) = x.dim();
    let (_, _, oh, ow) = dy.dim();
    let mut dx = Array4::zeros((n, c, h, w));
    for i in 0..n {
        for ch in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let (_, ay, ax) = pool_window_max(x, i, ch, oy, ox, k, stride, pad);
                    dx[[i, ch, ay, ax]] += dy[[i, ch, oy, ox]];
                }
            }
        }
    }
    dx
}

/// Max value and its position over one (possibly padding-clipped) window.
fn pool_window_max<F: Scalar>(
    x: &ArrayView4<F>,
    i: usize,
    ch: usize,
    oy: usize,
    ox: usize,
    k: usize,
    stride: usize,
    pad: usize,
) -> (F, usize, usize) {
    let (_, _, h, w) = x.dim();
    let mut best = F::neg_infinity();
    let (mut by, mut bx) = (0usize, 0usize);
    for ky in 0..k {
        let iy = oy * stride + ky;
        if iy < pad || iy >= h + pad {
            continue;
        }
        let iy = iy - pad;
        for kx in 0..k {
            let ix = ox * stride + kx;
            if ix < pad || ix >= w + pad {
                continue;
            }
            let ix = ix - pad;
            let v = x[[i, ch, iy, ix]];
            if v > best {
                best = v;
                by = iy;
                bx = ix;
            }
        }
    }
    (best, by, bx)
}

pub fn avgpool_forward<F: Scalar>(x: &ArrayView4<F>, k: usize, stride: usize) -> Array4<F> {
    let (n, c, h, w) = x.dim();
    let oh = conv_out_size(h, k, stride, 0);
    let ow = conv_out_size(w, k, stride, 0);
    let inv = F::from_f64(1.0 / (k * k) as f64);
    let mut out = Array4::zeros((n, c, oh, ow));
    for i in 0..n {
        for ch in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = F::zero();
                    for ky in 0..k {
                        for kx in 0..k {
                            acc += x[[i, ch, oy * stride + ky, ox * stride + kx]];
                        }
                    }
                    out[[i, ch, oy, ox]] = acc * inv;
                }
            }
        }
    }
    out
}

pub fn avgpool_backward<F: Scalar>(
    x_dim: (usize, usize, usize, usize),
    dy: &ArrayView4<F>,
    k: usize,
    stride: usize,
) -> Array4<F> {
    let (n, c, h, w) = x_dim;
    let (_, _, oh, ow) = dy.dim();
    let inv = F::from_f64(1.0 / (k * k) as f64);
    let mut dx = Array4::zeros((n, c, h, w));
    for i in 0..n {
        for ch in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let g = dy[[i, ch, oy, ox]] * inv;
                    for ky in 0..k {
                        for kx in 0..k {
                            dx[[i, ch, oy * stride + ky, ox * stride + kx]] += g;
                        }
                    }
                }
            }
        }
    }
    dx
}
