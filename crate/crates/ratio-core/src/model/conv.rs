//! Forward and backward passes for the tiny conv architecture.
//!
//! Feature maps are channel-major: value `(c, y, x)` lives at flat index
//! `(c·H + y)·W + x`. Convolutions are 3×3 with padding 1 and stride 1;
//! pooling is 2×2 max with stride 2, ties resolved to the first cell in
//! scan order so backprop routing is deterministic.
//!
//! Parameter layout: conv1 weights `[F1][C][3][3]`, conv1 biases `[F1]`,
//! conv2 weights `[F2][F1][3][3]`, conv2 biases `[F2]`, then the linear
//! layer's row-major weights `[K][F2·(H/4)·(W/4)]` and biases `[K]`.

use super::{Architecture, Backprop, CONV_F1, CONV_F2};

pub(crate) struct ConvCache {
    x: Vec<f64>,
    relu1: Vec<f64>,
    pool1: Vec<f64>,
    idx1: Vec<usize>,
    relu2: Vec<f64>,
    pool2: Vec<f64>,
    idx2: Vec<usize>,
}

struct Geometry {
    h: usize,
    w: usize,
    c: usize,
    k: usize,
}

fn geometry(arch: &Architecture) -> Geometry {
    match *arch {
        Architecture::TinyConv {
            height,
            width,
            channels,
            classes,
        } => Geometry {
            h: height,
            w: width,
            c: channels,
            k: classes,
        },
        _ => unreachable!("conv pass on non-conv architecture"),
    }
}

/// `out[oc] = bias[oc] + Σ_ic kernel[oc][ic] ⋆ input[ic]` (3×3, padding 1).
fn conv3x3(
    input: &[f64],
    in_c: usize,
    h: usize,
    w: usize,
    weights: &[f64],
    biases: &[f64],
    out_c: usize,
) -> Vec<f64> {
    let mut out = vec![0.0; out_c * h * w];
    for oc in 0..out_c {
        for y in 0..h {
            for x in 0..w {
                let mut sum = biases[oc];
                for ic in 0..in_c {
                    let kbase = ((oc * in_c) + ic) * 9;
                    for ky in 0..3 {
                        let iy = y + ky;
                        if iy == 0 || iy > h {
                            continue;
                        }
                        let iy = iy - 1;
                        for kx in 0..3 {
                            let ix = x + kx;
                            if ix == 0 || ix > w {
                                continue;
                            }
                            let ix = ix - 1;
                            sum += weights[kbase + ky * 3 + kx] * input[(ic * h + iy) * w + ix];
                        }
                    }
                }
                out[(oc * h + y) * w + x] = sum;
            }
        }
    }
    out
}

/// Gradients of a 3×3 convolution: fills `dinput` and, when given,
/// accumulates kernel/bias gradients.
fn conv3x3_backward(
    input: &[f64],
    in_c: usize,
    h: usize,
    w: usize,
    weights: &[f64],
    out_c: usize,
    dout: &[f64],
    dweights: Option<(&mut [f64], &mut [f64])>,
) -> Vec<f64> {
    let mut dinput = vec![0.0; in_c * h * w];
    let mut dw_db = dweights;
    for oc in 0..out_c {
        for y in 0..h {
            for x in 0..w {
                let d = dout[(oc * h + y) * w + x];
                if d == 0.0 {
                    continue;
                }
                for ic in 0..in_c {
                    let kbase = ((oc * in_c) + ic) * 9;
                    for ky in 0..3 {
                        let iy = y + ky;
                        if iy == 0 || iy > h {
                            continue;
                        }
                        let iy = iy - 1;
                        for kx in 0..3 {
                            let ix = x + kx;
                            if ix == 0 || ix > w {
                                continue;
                            }
                            let ix = ix - 1;
                            let iidx = (ic * h + iy) * w + ix;
                            dinput[iidx] += weights[kbase + ky * 3 + kx] * d;
                            if let Some((dw, _)) = dw_db.as_mut() {
                                dw[kbase + ky * 3 + kx] += input[iidx] * d;
                            }
                        }
                    }
                }
                if let Some((_, db)) = dw_db.as_mut() {
                    db[oc] += d;
                }
            }
        }
    }
    dinput
}

/// 2×2 max-pool with stride 2; records the flat source index per output cell.
fn maxpool2(input: &[f64], channels: usize, h: usize, w: usize) -> (Vec<f64>, Vec<usize>) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0; channels * oh * ow];
    let mut idx = vec![0usize; channels * oh * ow];
    for c in 0..channels {
        for y in 0..oh {
            for x in 0..ow {
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = 0;
                for dy in 0..2 {
                    for dx in 0..2 {
                        let iidx = (c * h + 2 * y + dy) * w + 2 * x + dx;
                        if input[iidx] > best {
                            best = input[iidx];
                            best_idx = iidx;
                        }
                    }
                }
                let oidx = (c * oh + y) * ow + x;
                out[oidx] = best;
                idx[oidx] = best_idx;
            }
        }
    }
    (out, idx)
}

fn relu(values: &mut [f64]) {
    for v in values {
        *v = v.max(0.0);
    }
}

struct Offsets {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    wfc: usize,
    bfc: usize,
    flat: usize,
}

fn offsets(g: &Geometry) -> Offsets {
    let w1 = 0;
    let b1 = w1 + CONV_F1 * g.c * 9;
    let w2 = b1 + CONV_F1;
    let b2 = w2 + CONV_F2 * CONV_F1 * 9;
    let wfc = b2 + CONV_F2;
    let flat = CONV_F2 * (g.h / 4) * (g.w / 4);
    let bfc = wfc + g.k * flat;
    Offsets {
        w1,
        b1,
        w2,
        b2,
        wfc,
        bfc,
        flat,
    }
}

pub(super) fn forward(arch: &Architecture, params: &[f64], x: &[f64]) -> (Vec<f64>, ConvCache) {
    let g = geometry(arch);
    let o = offsets(&g);

    let mut relu1 = conv3x3(
        x,
        g.c,
        g.h,
        g.w,
        &params[o.w1..o.b1],
        &params[o.b1..o.w2],
        CONV_F1,
    );
    relu(&mut relu1);
    let (pool1, idx1) = maxpool2(&relu1, CONV_F1, g.h, g.w);

    let (h2, w2) = (g.h / 2, g.w / 2);
    let mut relu2 = conv3x3(
        &pool1,
        CONV_F1,
        h2,
        w2,
        &params[o.w2..o.b2],
        &params[o.b2..o.wfc],
        CONV_F2,
    );
    relu(&mut relu2);
    let (pool2, idx2) = maxpool2(&relu2, CONV_F2, h2, w2);

    let weights_fc = &params[o.wfc..o.bfc];
    let biases_fc = &params[o.bfc..];
    let mut logits = vec![0.0; g.k];
    for k in 0..g.k {
        let row = &weights_fc[k * o.flat..(k + 1) * o.flat];
        let mut sum = biases_fc[k];
        for (w, v) in row.iter().zip(&pool2) {
            sum += w * v;
        }
        logits[k] = sum;
    }

    (
        logits,
        ConvCache {
            x: x.to_vec(),
            relu1,
            pool1,
            idx1,
            relu2,
            pool2,
            idx2,
        },
    )
}

pub(super) fn backward(
    arch: &Architecture,
    params: &[f64],
    cache: &ConvCache,
    dlogits: &[f64],
    want_params: bool,
) -> Backprop {
    let g = geometry(arch);
    let o = offsets(&g);
    let mut param_grad = want_params.then(|| vec![0.0; params.len()]);

    // Linear layer.
    let weights_fc = &params[o.wfc..o.bfc];
    let mut dpool2 = vec![0.0; o.flat];
    for k in 0..g.k {
        let d = dlogits[k];
        if d == 0.0 {
            continue;
        }
        let row = &weights_fc[k * o.flat..(k + 1) * o.flat];
        for (grad, w) in dpool2.iter_mut().zip(row) {
            *grad += d * w;
        }
    }
    if let Some(pg) = param_grad.as_mut() {
        for k in 0..g.k {
            let d = dlogits[k];
            if d != 0.0 {
                let row = &mut pg[o.wfc + k * o.flat..o.wfc + (k + 1) * o.flat];
                for (grad, v) in row.iter_mut().zip(&cache.pool2) {
                    *grad += d * v;
                }
            }
            pg[o.bfc + k] += d;
        }
    }

    // Unpool 2 and ReLU 2.
    let (h2, w2) = (g.h / 2, g.w / 2);
    let mut drelu2 = vec![0.0; CONV_F2 * h2 * w2];
    for (oidx, &iidx) in cache.idx2.iter().enumerate() {
        drelu2[iidx] += dpool2[oidx];
    }
    for (grad, &a) in drelu2.iter_mut().zip(&cache.relu2) {
        if a <= 0.0 {
            *grad = 0.0;
        }
    }

    // Conv 2.
    let dpool1 = {
        let dw_db = param_grad.as_mut().map(|pg| {
            let (head, tail) = pg.split_at_mut(o.b2);
            (&mut head[o.w2..o.b2], &mut tail[..CONV_F2])
        });
        conv3x3_backward(
            &cache.pool1,
            CONV_F1,
            h2,
            w2,
            &params[o.w2..o.b2],
            CONV_F2,
            &drelu2,
            dw_db,
        )
    };

    // Unpool 1 and ReLU 1.
    let mut drelu1 = vec![0.0; CONV_F1 * g.h * g.w];
    for (oidx, &iidx) in cache.idx1.iter().enumerate() {
        drelu1[iidx] += dpool1[oidx];
    }
    for (grad, &a) in drelu1.iter_mut().zip(&cache.relu1) {
        if a <= 0.0 {
            *grad = 0.0;
        }
    }

    // Conv 1.
    let input_grad = {
        let dw_db = param_grad.as_mut().map(|pg| {
            let (head, tail) = pg.split_at_mut(o.b1);
            (&mut head[o.w1..o.b1], &mut tail[..CONV_F1])
        });
        conv3x3_backward(
            &cache.x,
            g.c,
            g.h,
            g.w,
            &params[o.w1..o.b1],
            CONV_F1,
            &drelu1,
            dw_db,
        )
    };

    Backprop {
        input_grad,
        param_grad,
    }
}
