//! Reverse-mode differentiation of the networks.

use crate::error::{Error, Result};
use crate::network::{check_params, Arch, ForwardTape, NetworkParams, NetworkSpec};
use crate::schemes::df_coefficients;
use crate::signal::{conv_adjoint_into, conv_into, conv_kernel_grad, dot, SignalBundle};

/// Gradient with respect to the trainable parameters, in the canonical flattening order of
/// [`NetworkParams::flatten`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub values: Vec<f64>,
}

impl GradientSet {
    pub fn norm(&self) -> f64 {
        dot(&self.values, &self.values).sqrt()
    }
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    y.iter_mut().zip(x).for_each(|(y, x)| *y += a * x);
}

/// Exact gradient of `<upstream, output>` with respect to the parameters, given the tape of a
/// forward pass.
pub fn backward(spec: &NetworkSpec, params: &NetworkParams, tape: &ForwardTape, upstream: &SignalBundle) -> Result<GradientSet> {
    check_params(spec, params)?;
    if upstream.channels() != 1 || upstream.len() != tape.len {
        return Err(Error::Dimension(format!(
            "upstream gradient must be one channel of length {}, got {}x{}",
            tape.len,
            upstream.channels(),
            upstream.len()
        )));
    }
    if tape.arch != spec.arch || tape.blocks != spec.blocks || tape.channels != spec.channels || tape.z.len() != spec.blocks {
        return Err(Error::Config("tape does not belong to this network".into()));
    }
    let mut acc = params.zeros_like();
    backward_into(spec, params, tape, upstream.data(), &mut acc);
    Ok(GradientSet {
        values: acc.flatten(spec),
    })
}

/// Adds the gradient of `<upstream, output>` to `acc`, which must have the layout of `params`.
pub(crate) fn backward_into(spec: &NetworkSpec, params: &NetworkParams, tape: &ForwardTape, upstream: &[f64], acc: &mut NetworkParams) {
    let n = tape.len;
    let c = tape.channels;
    let blocks = tape.blocks;
    let mut adj: Vec<Vec<f64>> = vec![vec![0.0; c * n]; blocks + 1];
    // The output is the channel mean.
    for ch in 0..c {
        for (a, g) in adj[blocks][ch * n..(ch + 1) * n].iter_mut().zip(upstream) {
            *a = g / c as f64;
        }
    }

    let mut kg = vec![0.0; c * n];
    let mut scratch = vec![0.0; c * n];
    for b in (0..blocks).rev() {
        let pi = spec.param_index(b);
        let p = &params.blocks[pi];
        let f = spec.flux_with(p.lambda);
        let g = std::mem::take(&mut adj[b + 1]);
        let u = &tape.states[b];
        let z = &tape.z[b];
        let mut evals = Vec::with_capacity(z.len());
        evals.extend(z.iter().map(|&s| f.eval_all(s)));

        if spec.arch == Arch::ResNet {
            let w1 = &p.kernel;
            let w2 = p.outer.as_ref().expect("standard block has an outer bank");
            let a: Vec<f64> = evals.iter().map(|e| e.0).collect();
            let gp = &mut acc.blocks[pi];
            conv_kernel_grad(&a, &g, n, c, c, 1.0, gp.outer.as_mut().expect("outer bank").taps_mut());
            for ch in 0..c {
                gp.bias_out[ch] += g[ch * n..(ch + 1) * n].iter().sum::<f64>();
            }
            // abar = W2^T g, q = Phi'(z) abar.
            conv_adjoint_into(&g, n, w2, &mut scratch);
            let mut dl = 0.0;
            let q: Vec<f64> = scratch
                .iter()
                .zip(&evals)
                .map(|(ab, e)| {
                    dl += ab * e.2;
                    ab * e.1
                })
                .collect();
            gp.lambda += dl;
            conv_kernel_grad(u, &q, n, c, c, 1.0, gp.kernel.taps_mut());
            for ch in 0..c {
                gp.bias_in[ch] += q[ch * n..(ch + 1) * n].iter().sum::<f64>();
            }
            conv_adjoint_into(&q, n, w1, &mut scratch);
            let ab = &mut adj[b];
            axpy(ab, 1.0, &g);
            axpy(ab, 1.0, &scratch);
            continue;
        }

        // Two-level combination out = w e + (1 - w) prev; ebar is the adjoint of e.
        let ebar: Vec<f64> = match spec.arch {
            Arch::DfNet if b > 0 => {
                let (c1, c2) = df_coefficients(p.tau, p.alpha);
                let e = &tape.explicit[b];
                let prev = &tape.states[b - 1];
                let dc1: f64 = g.iter().zip(e.iter().zip(prev)).map(|(g, (e, v))| g * (e - v)).sum();
                let den = 1.0 + 2.0 * p.tau * p.alpha;
                let gp = &mut acc.blocks[pi];
                gp.tau += dc1 * 4.0 * p.alpha / (den * den);
                gp.alpha += dc1 * 4.0 * p.tau / (den * den);
                axpy(&mut adj[b - 1], c2, &g);
                g.iter().map(|v| c1 * v).collect()
            }
            Arch::FsiNet => {
                let a = params.extrapolation[b];
                let e = &tape.explicit[b];
                let prev_idx = b.saturating_sub(1);
                let prev = &tape.states[prev_idx];
                acc.extrapolation[b] += g.iter().zip(e.iter().zip(prev)).map(|(g, (e, v))| g * (e - v)).sum::<f64>();
                axpy(&mut adj[prev_idx], 1.0 - a, &g);
                g.iter().map(|v| a * v).collect()
            }
            _ => g,
        };

        // Explicit part e = u - s K^T Phi(K u).
        let k = &p.kernel;
        let step = crate::network::block_step(spec, p, b);
        conv_into(&ebar, n, k, &mut kg);
        let mut ds = 0.0;
        let mut dl = 0.0;
        let mut phi = Vec::with_capacity(kg.len());
        let mut r = Vec::with_capacity(kg.len());
        for (kv, e) in kg.iter().zip(&evals) {
            ds -= kv * e.0;
            dl -= kv * e.2;
            phi.push(e.0);
            r.push(kv * e.1);
        }
        let gp = &mut acc.blocks[pi];
        gp.lambda += step * dl;
        conv_kernel_grad(&ebar, &phi, n, c, c, -step, gp.kernel.taps_mut());
        conv_kernel_grad(u, &r, n, c, c, -step, gp.kernel.taps_mut());
        match spec.arch {
            Arch::DfNet => {
                let half = 1.0 / (2.0 * p.alpha);
                if b == 0 && p.tau <= half {
                    gp.tau += ds;
                } else {
                    gp.alpha += ds * (-half / p.alpha);
                }
            }
            _ => gp.tau += ds,
        }
        conv_adjoint_into(&r, n, k, &mut scratch);
        let ab = &mut adj[b];
        axpy(ab, 1.0, &ebar);
        axpy(ab, -step, &scratch);
    }
}
