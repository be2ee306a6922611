//! Raw array kernels behind the tape ops. Images are `[C, H, W]` row-major.

/// Overlap of a kernel tap at offset `d` with an axis of length `n`:
/// output positions `lo..hi` read input positions `lo+d..hi+d`.
#[inline]
fn tap_range(n: usize, d: isize) -> (usize, usize) {
    let lo = (-d).max(0) as usize;
    let hi = (n as isize - d).min(n as isize).max(0) as usize;
    (lo, hi.max(lo))
}

/// Stride-1 convolution with zero padding `k/2` (cross-correlation, as in
/// deep-learning frameworks).
#[allow(clippy::too_many_arguments)]
pub fn conv2d_forward(
    x: &[f64],
    cin: usize,
    h: usize,
    w: usize,
    weight: &[f64],
    cout: usize,
    k: usize,
    bias: Option<&[f64]>,
) -> Vec<f64> {
    let hw = h * w;
    let pad = (k / 2) as isize;
    let mut out = vec![0.0; cout * hw];
    for o in 0..cout {
        let out_c = &mut out[o * hw..(o + 1) * hw];
        if let Some(b) = bias {
            out_c.fill(b[o]);
        }
        for i in 0..cin {
            let in_c = &x[i * hw..(i + 1) * hw];
            let wk = &weight[(o * cin + i) * k * k..(o * cin + i + 1) * k * k];
            for ky in 0..k {
                let dy = ky as isize - pad;
                let (y0, y1) = tap_range(h, dy);
                for kx in 0..k {
                    let dx = kx as isize - pad;
                    let (x0, x1) = tap_range(w, dx);
                    let wv = wk[ky * k + kx];
                    for y in y0..y1 {
                        let sy = (y as isize + dy) as usize;
                        let src = &in_c[sy * w + (x0 as isize + dx) as usize..sy * w + (x1 as isize + dx) as usize];
                        let dst = &mut out_c[y * w + x0..y * w + x1];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += wv * s;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Gradients of [`conv2d_forward`] with respect to input, weight and bias.
/// Input gradients are only formed when `want_input` is set.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward(
    x: &[f64],
    cin: usize,
    h: usize,
    w: usize,
    weight: &[f64],
    cout: usize,
    k: usize,
    grad_out: &[f64],
    want_input: bool,
) -> (Option<Vec<f64>>, Vec<f64>, Vec<f64>) {
    let hw = h * w;
    let pad = (k / 2) as isize;
    let mut gx = if want_input { Some(vec![0.0; cin * hw]) } else { None };
    let mut gw = vec![0.0; weight.len()];
    let mut gb = vec![0.0; cout];
    for o in 0..cout {
        let g_c = &grad_out[o * hw..(o + 1) * hw];
        gb[o] = g_c.iter().sum();
        for i in 0..cin {
            let in_c = &x[i * hw..(i + 1) * hw];
            let base = (o * cin + i) * k * k;
            for ky in 0..k {
                let dy = ky as isize - pad;
                let (y0, y1) = tap_range(h, dy);
                for kx in 0..k {
                    let dx = kx as isize - pad;
                    let (x0, x1) = tap_range(w, dx);
                    let wv = weight[base + ky * k + kx];
                    let mut acc = 0.0;
                    for y in y0..y1 {
                        let sy = (y as isize + dy) as usize;
                        let s0 = sy * w + (x0 as isize + dx) as usize;
                        let s1 = sy * w + (x1 as isize + dx) as usize;
                        let g = &g_c[y * w + x0..y * w + x1];
                        acc += g.iter().zip(&in_c[s0..s1]).map(|(a, b)| a * b).sum::<f64>();
                        if let Some(gx) = gx.as_mut() {
                            let dst = &mut gx[i * hw + s0..i * hw + s1];
                            for (d, gv) in dst.iter_mut().zip(g) {
                                *d += wv * gv;
                            }
                        }
                    }
                    gw[base + ky * k + kx] += acc;
                }
            }
        }
    }
    (gx, gw, gb)
}

/// Group normalization without affine parameters. Returns the normalized
/// output and per-group `(mean, 1/sqrt(var + eps))`.
pub fn group_norm_forward(x: &[f64], c: usize, hw: usize, groups: usize, eps: f64) -> (Vec<f64>, Vec<(f64, f64)>) {
    let per = (c / groups) * hw;
    let mut out = vec![0.0; x.len()];
    let mut stats = Vec::with_capacity(groups);
    for g in 0..groups {
        let xs = &x[g * per..(g + 1) * per];
        let mean = xs.iter().sum::<f64>() / per as f64;
        let var = xs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / per as f64;
        let rstd = 1.0 / (var + eps).sqrt();
        for (o, v) in out[g * per..(g + 1) * per].iter_mut().zip(xs) {
            *o = (v - mean) * rstd;
        }
        stats.push((mean, rstd));
    }
    (out, stats)
}

/// Backward of [`group_norm_forward`] given its output `y`.
pub fn group_norm_backward(y: &[f64], grad_out: &[f64], stats: &[(f64, f64)]) -> Vec<f64> {
    let groups = stats.len();
    let per = y.len() / groups;
    let mut gx = vec![0.0; y.len()];
    for (g, &(_, rstd)) in stats.iter().enumerate() {
        let ys = &y[g * per..(g + 1) * per];
        let gs = &grad_out[g * per..(g + 1) * per];
        let m = per as f64;
        let sum_g: f64 = gs.iter().sum();
        let sum_gy: f64 = gs.iter().zip(ys).map(|(a, b)| a * b).sum();
        for ((o, gv), yv) in gx[g * per..(g + 1) * per].iter_mut().zip(gs).zip(ys) {
            *o = rstd * (gv - sum_g / m - yv * sum_gy / m);
        }
    }
    gx
}

pub fn avg_pool2_forward(x: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let (ho, wo) = (h / 2, w / 2);
    let mut out = vec![0.0; c * ho * wo];
    for ch in 0..c {
        for y in 0..ho {
            for xx in 0..wo {
                let b = ch * h * w;
                let s = x[b + 2 * y * w + 2 * xx]
                    + x[b + 2 * y * w + 2 * xx + 1]
                    + x[b + (2 * y + 1) * w + 2 * xx]
                    + x[b + (2 * y + 1) * w + 2 * xx + 1];
                out[ch * ho * wo + y * wo + xx] = 0.25 * s;
            }
        }
    }
    out
}

pub fn avg_pool2_backward(grad_out: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let (ho, wo) = (h / 2, w / 2);
    let mut gx = vec![0.0; c * h * w];
    for ch in 0..c {
        for y in 0..h {
            for xx in 0..w {
                gx[ch * h * w + y * w + xx] = 0.25 * grad_out[ch * ho * wo + (y / 2) * wo + xx / 2];
            }
        }
    }
    gx
}

pub fn upsample2_forward(x: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let (ho, wo) = (2 * h, 2 * w);
    let mut out = vec![0.0; c * ho * wo];
    for ch in 0..c {
        for y in 0..ho {
            for xx in 0..wo {
                out[ch * ho * wo + y * wo + xx] = x[ch * h * w + (y / 2) * w + xx / 2];
            }
        }
    }
    out
}

pub fn upsample2_backward(grad_out: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let (ho, wo) = (2 * h, 2 * w);
    let mut gx = vec![0.0; c * h * w];
    for ch in 0..c {
        for y in 0..ho {
            for xx in 0..wo {
                gx[ch * h * w + (y / 2) * w + xx / 2] += grad_out[ch * ho * wo + y * wo + xx];
            }
        }
    }
    gx
}
