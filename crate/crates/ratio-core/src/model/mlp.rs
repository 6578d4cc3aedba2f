//! Forward and backward passes for the fully connected architecture.
//!
//! Parameter layout per layer `l` (input width `in`, output width `out`):
//! `out·in` row-major weights followed by `out` biases. Hidden layers apply
//! ReLU; the output layer is linear.

use super::Backprop;

pub(crate) struct MlpCache {
    /// Input to each layer: `inputs[0] = x`, `inputs[l]` is the post-ReLU
    /// activation feeding layer `l`. Length equals the number of layers.
    inputs: Vec<Vec<f64>>,
}

pub(super) fn forward(dims: &[usize], params: &[f64], x: &[f64]) -> (Vec<f64>, MlpCache) {
    let layers = dims.len() - 1;
    let mut inputs = Vec::with_capacity(layers);
    let mut current = x.to_vec();
    let mut offset = 0;
    for l in 0..layers {
        let (in_d, out_d) = (dims[l], dims[l + 1]);
        let weights = &params[offset..offset + out_d * in_d];
        let biases = &params[offset + out_d * in_d..offset + out_d * in_d + out_d];
        offset += (in_d + 1) * out_d;

        let mut next = vec![0.0; out_d];
        for o in 0..out_d {
            let row = &weights[o * in_d..(o + 1) * in_d];
            let mut sum = biases[o];
            for (w, v) in row.iter().zip(&current) {
                sum += w * v;
            }
            next[o] = sum;
        }
        if l + 1 < layers {
            for v in &mut next {
                *v = v.max(0.0);
            }
        }
        inputs.push(std::mem::replace(&mut current, next));
    }
    (current, MlpCache { inputs })
}

pub(super) fn backward(
    dims: &[usize],
    params: &[f64],
    cache: &MlpCache,
    dlogits: &[f64],
    want_params: bool,
) -> Backprop {
    let layers = dims.len() - 1;
    let mut param_grad = want_params.then(|| vec![0.0; params.len()]);

    // Offsets of each layer's parameter block.
    let mut offsets = Vec::with_capacity(layers);
    let mut offset = 0;
    for l in 0..layers {
        offsets.push(offset);
        offset += (dims[l] + 1) * dims[l + 1];
    }

    // delta = gradient w.r.t. the current layer's pre-activation.
    let mut delta = dlogits.to_vec();
    let mut input_grad = Vec::new();
    for l in (0..layers).rev() {
        let (in_d, out_d) = (dims[l], dims[l + 1]);
        let base = offsets[l];
        let weights = &params[base..base + out_d * in_d];
        let input = &cache.inputs[l];

        if let Some(pg) = param_grad.as_mut() {
            for o in 0..out_d {
                let d = delta[o];
                if d != 0.0 {
                    let row = &mut pg[base + o * in_d..base + (o + 1) * in_d];
                    for (g, v) in row.iter_mut().zip(input) {
                        *g += d * v;
                    }
                }
                pg[base + out_d * in_d + o] += d;
            }
        }

        let mut dinput = vec![0.0; in_d];
        for o in 0..out_d {
            let d = delta[o];
            if d != 0.0 {
                let row = &weights[o * in_d..(o + 1) * in_d];
                for (g, w) in dinput.iter_mut().zip(row) {
                    *g += d * w;
                }
            }
        }
        if l > 0 {
            // ReLU derivative: pass-through where the stored activation is
            // positive (the subgradient at exactly 0 is taken as 0).
            for (g, &a) in dinput.iter_mut().zip(input) {
                if a <= 0.0 {
                    *g = 0.0;
                }
            }
            delta = dinput;
        } else {
            input_grad = dinput;
        }
    }

    Backprop {
        input_grad,
        param_grad,
    }
}
