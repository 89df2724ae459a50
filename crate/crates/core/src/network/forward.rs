use crate::error::{Error, Result};
use crate::flux::FluxFunction;
use crate::schemes::df_coefficients;
use crate::signal::{conv_adjoint_into, conv_into, KernelBank, SignalBundle};

use super::{check_params, Arch, BlockParams, NetworkParams, NetworkSpec};

/// What one block needs for its backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockTape {
    /// Block input `u^k`.
    pub input: Vec<f64>,
    /// Pre-activation: `K u^k`, or `W1 u^k + b1` for the standard block.
    pub z: Vec<f64>,
}

/// Forward record of a whole network, sufficient to reproduce and differentiate it.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTape {
    pub arch: Arch,
    pub blocks: usize,
    pub channels: usize,
    pub len: usize,
    /// `u^0` (lifted input) through `u^B`.
    pub states: Vec<Vec<f64>>,
    /// Pre-activations per block.
    pub z: Vec<Vec<f64>>,
    /// Explicit-step results `e^k` of the two-level variants; empty otherwise.
    pub explicit: Vec<Vec<f64>>,
}

/// Explicit diffusion step `u - step K^T Phi(K u)` on raw data. Returns (output, K u).
pub(crate) fn explicit_block(u: &[f64], n: usize, k: &KernelBank, f: &FluxFunction, step: f64) -> (Vec<f64>, Vec<f64>) {
    let mut z = vec![0.0; k.c_out() * n];
    conv_into(u, n, k, &mut z);
    let phi: Vec<f64> = z.iter().map(|&s| f.flux(s)).collect();
    let mut w = vec![0.0; k.c_in() * n];
    conv_adjoint_into(&phi, n, k, &mut w);
    let out = u.iter().zip(&w).map(|(a, b)| a - step * b).collect();
    (out, z)
}

/// `u + W2 Phi(W1 u + b1) + b2` on raw data, reflecting boundaries for both convolutions.
/// Returns (output, pre-activation).
pub(crate) fn standard_block(u: &[f64], n: usize, p: &BlockParams, f: &FluxFunction) -> (Vec<f64>, Vec<f64>) {
    let w1 = &p.kernel;
    let w2 = p.outer.as_ref().expect("standard block has an outer bank");
    let mut z = vec![0.0; w1.c_out() * n];
    conv_into(u, n, w1, &mut z);
    for (c, chunk) in z.chunks_exact_mut(n).enumerate() {
        let b = p.bias_in[c];
        chunk.iter_mut().for_each(|v| *v += b);
    }
    let a: Vec<f64> = z.iter().map(|&s| f.flux(s)).collect();
    let mut out = vec![0.0; w2.c_out() * n];
    conv_into(&a, n, w2, &mut out);
    for (c, chunk) in out.chunks_exact_mut(n).enumerate() {
        let b = p.bias_out[c];
        let uc = &u[c * n..(c + 1) * n];
        chunk.iter_mut().zip(uc).for_each(|(o, x)| *o = x + *o + b);
    }
    (out, z)
}

fn shape_check(u: &SignalBundle, k: &KernelBank) -> Result<()> {
    if !k.is_square() || u.channels() != k.c_in() {
        return Err(Error::Dimension(format!(
            "block with {}x{} bank cannot act on {} channels",
            k.c_out(),
            k.c_in(),
            u.channels()
        )));
    }
    Ok(())
}

fn finished(u: &SignalBundle, data: Vec<f64>, what: &str) -> Result<SignalBundle> {
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical(format!("{what} produced a non-finite value")));
    }
    let mut s = SignalBundle::new(u.channels(), u.len(), data)?;
    s.h = u.h;
    Ok(s)
}

/// One diffusion block `u - tau K^T Phi(K u)`.
pub fn diffusion_block_forward(u: &SignalBundle, p: &BlockParams, f: &FluxFunction) -> Result<(SignalBundle, BlockTape)> {
    shape_check(u, &p.kernel)?;
    let (out, z) = explicit_block(u.data(), u.len(), &p.kernel, f, p.tau);
    let tape = BlockTape {
        input: u.data().to_vec(),
        z,
    };
    Ok((finished(u, out, "diffusion block")?, tape))
}

/// One standard residual block `u + W2 Phi(W1 u + b1) + b2`.
pub fn standard_resblock_forward(u: &SignalBundle, p: &BlockParams, f: &FluxFunction) -> Result<(SignalBundle, BlockTape)> {
    shape_check(u, &p.kernel)?;
    let c = u.channels();
    match &p.outer {
        Some(w2) if w2.c_in() == c && w2.c_out() == c => {}
        _ => return Err(Error::Config("standard block needs a square outer bank".into())),
    }
    if p.bias_in.len() != c || p.bias_out.len() != c {
        return Err(Error::Config(format!("standard block needs {c} biases per layer")));
    }
    let (out, z) = standard_block(u.data(), u.len(), p, f);
    let tape = BlockTape {
        input: u.data().to_vec(),
        z,
    };
    Ok((finished(u, out, "residual block")?, tape))
}

/// Step size of the explicit part of block `b`.
pub(crate) fn block_step(spec: &NetworkSpec, p: &BlockParams, b: usize) -> f64 {
    match spec.arch {
        Arch::DfNet if b == 0 => p.tau.min(1.0 / (2.0 * p.alpha)),
        Arch::DfNet => 1.0 / (2.0 * p.alpha),
        _ => p.tau,
    }
}

fn lift_input(spec: &NetworkSpec, u0: &SignalBundle) -> Result<SignalBundle> {
    if u0.channels() == 1 {
        u0.lift(spec.channels)
    } else {
        Err(Error::Dimension(format!(
            "network input must have one channel, got {}",
            u0.channels()
        )))
    }
}

fn run(spec: &NetworkSpec, params: &NetworkParams, u0: &SignalBundle, record: bool) -> Result<(SignalBundle, ForwardTape)> {
    check_params(spec, params)?;
    let lifted = lift_input(spec, u0)?;
    let n = lifted.len();
    let mut tape = ForwardTape {
        arch: spec.arch,
        blocks: spec.blocks,
        channels: spec.channels,
        len: n,
        states: Vec::with_capacity(spec.blocks + 1),
        z: Vec::new(),
        explicit: Vec::new(),
    };
    tape.states.push(lifted.into_data());
    for b in 0..spec.blocks {
        let p = params.block(spec, b);
        let f = spec.flux_with(p.lambda);
        let u = &tape.states[b];
        let (next, z, e) = match spec.arch {
            Arch::ResNet => {
                let (out, z) = standard_block(u, n, p, &f);
                (out, z, None)
            }
            Arch::SymResNet => {
                let (out, z) = explicit_block(u, n, &p.kernel, &f, p.tau);
                (out, z, None)
            }
            Arch::DfNet => {
                let (e, z) = explicit_block(u, n, &p.kernel, &f, block_step(spec, p, b));
                if b == 0 {
                    (e, z, None)
                } else {
                    let (c1, c2) = df_coefficients(p.tau, p.alpha);
                    let prev = &tape.states[b - 1];
                    let out = e.iter().zip(prev).map(|(x, y)| c1 * x + c2 * y).collect();
                    (out, z, Some(e))
                }
            }
            Arch::FsiNet => {
                let (e, z) = explicit_block(u, n, &p.kernel, &f, p.tau);
                let a = params.extrapolation[b];
                let prev = &tape.states[b.saturating_sub(1)];
                let out = e.iter().zip(prev).map(|(x, y)| a * x + (1.0 - a) * y).collect();
                (out, z, Some(e))
            }
        };
        if next.iter().any(|v: &f64| !v.is_finite()) {
            return Err(Error::Numerical(format!("block {b} produced a non-finite value")));
        }
        if record {
            tape.z.push(z);
            tape.explicit.push(e.unwrap_or_default());
        }
        tape.states.push(next);
        if !record && tape.states.len() > 2 {
            // Only the two most recent levels are needed without a tape.
            let keep = tape.states.len() - 2;
            tape.states[keep - 1] = Vec::new();
        }
    }
    let last = tape.states.last().expect("at least one state").clone();
    let mut out = SignalBundle::new(spec.channels, n, last)?.channel_mean();
    out.h = u0.h;
    Ok((out, tape))
}

/// Runs the network on a single-channel signal. The input is copied into `C` channels and the
/// output is the channel average.
pub fn network_forward(spec: &NetworkSpec, params: &NetworkParams, u0: &SignalBundle) -> Result<(SignalBundle, ForwardTape)> {
    run(spec, params, u0, true)
}

/// [`network_forward`] without recording a tape.
pub fn network_apply(spec: &NetworkSpec, params: &NetworkParams, u0: &SignalBundle) -> Result<SignalBundle> {
    run(spec, params, u0, false).map(|(out, _)| out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flux::FluxKind;
    use crate::network::{init_params, mirrored_transpose, InitConfig, Sharing};
    use crate::schemes::{explicit_step, SchemeConfig};
    use crate::signal::dense_operator_of;
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_signal(c: usize, n: usize, seed: u64) -> SignalBundle {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        SignalBundle::new(c, n, (0..c * n).map(|_| rng.random_range(0.0..255.0)).collect()).unwrap()
    }

    fn rand_bank(c: usize, seed: u64, scale: f64) -> KernelBank {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        KernelBank::new(c, c, (0..3 * c * c).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
    }

    fn pm(l: f64) -> FluxFunction {
        FluxFunction::new(FluxKind::PeronaMalik, l).unwrap()
    }

    fn max_diff(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn zero_kernel_block_is_identity() {
        let u = rand_signal(2, 9, 1);
        let p = BlockParams::symmetric(KernelBank::zeros(2, 2), 3.0, 0.7);
        assert_eq!(diffusion_block_forward(&u, &p, &pm(3.0)).unwrap().0, u);
    }

    #[test]
    fn diffusion_block_equals_explicit_step_bitwise() {
        for (c, seed) in [(1, 3), (2, 4), (3, 5)] {
            let u = rand_signal(c, 17, seed);
            let k = rand_bank(c, seed + 10, 1.0);
            let f = pm(7.0);
            let p = BlockParams::symmetric(k.clone(), 7.0, 0.3);
            let (a, tape) = diffusion_block_forward(&u, &p, &f).unwrap();
            let b = explicit_step(&u, &k, &SchemeConfig::explicit(0.3, f)).unwrap();
            assert_eq!(a, b);
            assert_eq!(tape.input, u.data());
        }
    }

    #[test]
    fn learned_difference_pair_acts_like_backward_and_forward_differences() {
        let k = KernelBank::single([0.922, -0.917, 0.006]);
        let p = BlockParams::symmetric(k.clone(), 10.0, 0.5);
        let u = SignalBundle::from_samples((0..12).map(|i| ((i * 7) % 5) as f64).collect()).unwrap();
        let (_, tape) = diffusion_block_forward(&u, &p, &pm(10.0)).unwrap();
        // K u is close to the negated backward difference ...
        for i in 1..11 {
            let bwd = u.data()[i] - u.data()[i - 1];
            assert!((tape.z[i] + bwd).abs() < 0.1 * (1.0 + bwd.abs()), "i={i}");
        }
        // ... and K^T v close to the forward difference.
        let v = u.clone();
        let kt = crate::signal::conv_adjoint_apply(&v, &k).unwrap();
        for j in 1..10 {
            let fwd = v.data()[j + 1] - v.data()[j];
            assert!((kt.data()[j] - fwd).abs() < 0.1 * (1.0 + fwd.abs()), "j={j}");
        }
    }

    #[test]
    fn standard_block_with_zero_outer_is_identity() {
        let u = rand_signal(2, 8, 9);
        let p = BlockParams::standard(rand_bank(2, 2, 1.0), KernelBank::zeros(2, 2), 3.0, vec![0.5, -1.0], vec![0.0; 2]);
        assert_eq!(standard_resblock_forward(&u, &p, &pm(3.0)).unwrap().0, u);
    }

    #[test]
    fn standard_block_reproduces_diffusion_block_in_the_interior() {
        let c = 2;
        let n = 20;
        let u = rand_signal(c, n, 21);
        let k = rand_bank(c, 22, 0.5);
        let tau = 0.4;
        let f = pm(20.0);
        let w2 = mirrored_transpose(&k).scaled(-tau);
        let std = BlockParams::standard(k.clone(), w2, 20.0, vec![0.0; c], vec![0.0; c]);
        let sym = BlockParams::symmetric(k, 20.0, tau);
        let (a, _) = standard_resblock_forward(&u, &std, &f).unwrap();
        let (b, _) = diffusion_block_forward(&u, &sym, &f).unwrap();
        // Boundary rows differ: a convolution with mirrored taps is not the exact adjoint there.
        for ch in 0..c {
            let (x, y) = (a.channel(ch), b.channel(ch));
            assert!(max_diff(&x[1..n - 1], &y[1..n - 1]) <= 1e-12);
        }
    }

    #[test]
    fn standard_block_matches_dense_assembly() {
        let c = 2;
        let n = 7;
        let u = rand_signal(c, n, 30);
        let (w1, w2) = (rand_bank(c, 31, 1.0), rand_bank(c, 32, 1.0));
        let (b1, b2) = (vec![0.3, -2.0], vec![1.5, 0.25]);
        let f = pm(40.0);
        let p = BlockParams::standard(w1.clone(), w2.clone(), 40.0, b1.clone(), b2.clone());
        let (got, _) = standard_resblock_forward(&u, &p, &f).unwrap();
        let m1 = dense_operator_of(&w1, n);
        let m2 = dense_operator_of(&w2, n);
        let m1 = DMatrix::from_row_slice(m1.rows, m1.cols, &m1.matrix);
        let m2 = DMatrix::from_row_slice(m2.rows, m2.cols, &m2.matrix);
        let x = DVector::from_row_slice(u.data());
        let bias = |b: &[f64]| DVector::from_fn(c * n, |i, _| b[i / n]);
        let z = &m1 * &x + bias(&b1);
        let want = &x + &m2 * z.map(|s| f.flux(s)) + bias(&b2);
        assert!(max_diff(got.data(), want.as_slice()) <= 1e-12);
    }

    fn spec(arch: Arch, blocks: usize, c: usize, sharing: Sharing) -> NetworkSpec {
        NetworkSpec::new(arch, blocks, c, sharing, FluxKind::PeronaMalik)
    }

    fn params(s: &NetworkSpec, seed: u64) -> NetworkParams {
        let init = InitConfig {
            kernel_range: 0.6,
            lambda: 12.0,
            tau: 0.2,
            ..InitConfig::default()
        };
        init_params(s, &init, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    #[test]
    fn one_block_symresnet_is_one_explicit_step() {
        let s = spec(Arch::SymResNet, 1, 1, Sharing::Shared);
        let p = params(&s, 1);
        let u = rand_signal(1, 32, 2);
        let out = network_apply(&s, &p, &u).unwrap();
        let b = &p.blocks[0];
        let want = explicit_step(&u, &b.kernel, &SchemeConfig::explicit(b.tau, pm(b.lambda))).unwrap();
        assert_eq!(out, want);
    }

    #[test]
    fn fsinet_with_unit_weights_is_symresnet() {
        for c in [1, 2] {
            let s = spec(Arch::FsiNet, 5, c, Sharing::TimeDynamic);
            let mut p = params(&s, 3);
            p.extrapolation.fill(1.0);
            let sym = NetworkSpec {
                arch: Arch::SymResNet,
                ..s
            };
            let q = NetworkParams {
                extrapolation: Vec::new(),
                ..p.clone()
            };
            let u = rand_signal(1, 40, 4);
            let a = network_apply(&s, &p, &u).unwrap();
            let b = network_apply(&sym, &q, &u).unwrap();
            assert!(max_diff(a.data(), b.data()) <= 1e-12);
        }
    }

    #[test]
    fn dfnet_with_half_coupling_is_symresnet() {
        let s = spec(Arch::DfNet, 6, 2, Sharing::TimeDynamic);
        let mut p = params(&s, 5);
        for (i, b) in p.blocks.iter_mut().enumerate() {
            b.tau = 0.125 * (1 + i % 3) as f64;
            b.alpha = 0.5 / b.tau;
        }
        let sym = NetworkSpec {
            arch: Arch::SymResNet,
            ..s
        };
        let u = rand_signal(1, 40, 6);
        let a = network_apply(&s, &p, &u).unwrap();
        let b = network_apply(&sym, &p, &u).unwrap();
        assert!(max_diff(a.data(), b.data()) <= 1e-12);
    }

    #[test]
    fn time_dynamic_with_equal_blocks_reproduces_shared() {
        for arch in Arch::ALL {
            let s = spec(arch, 4, 2, Sharing::Shared);
            let p = params(&s, 7);
            let td = NetworkSpec {
                sharing: Sharing::TimeDynamic,
                ..s
            };
            let q = NetworkParams {
                blocks: vec![p.blocks[0].clone(); 4],
                extrapolation: p.extrapolation.clone(),
            };
            let u = rand_signal(1, 30, 8);
            assert_eq!(network_forward(&s, &p, &u).unwrap(), network_forward(&td, &q, &u).unwrap());
        }
    }

    #[test]
    fn single_channel_output_ignores_lifting() {
        let s = spec(Arch::SymResNet, 3, 1, Sharing::TimeDynamic);
        let p = params(&s, 9);
        let u = rand_signal(1, 25, 10);
        let mut direct = u.clone();
        for b in &p.blocks {
            direct = explicit_step(&direct, &b.kernel, &SchemeConfig::explicit(b.tau, pm(b.lambda))).unwrap();
        }
        assert_eq!(network_apply(&s, &p, &u).unwrap(), direct);
    }

    #[test]
    fn apply_matches_forward() {
        for arch in Arch::ALL {
            let s = spec(arch, 5, 2, Sharing::TimeDynamic);
            let p = params(&s, 11);
            let u = rand_signal(1, 30, 12);
            let (a, tape) = network_forward(&s, &p, &u).unwrap();
            assert_eq!(a, network_apply(&s, &p, &u).unwrap());
            assert_eq!(tape.states.len(), 6);
            assert_eq!(tape.z.len(), 5);
        }
    }

    #[test]
    fn mismatched_params_are_config_errors() {
        let s = spec(Arch::SymResNet, 3, 1, Sharing::TimeDynamic);
        let mut p = params(&s, 13);
        p.blocks.truncate(2);
        assert!(matches!(
            network_forward(&s, &p, &rand_signal(1, 10, 1)),
            Err(Error::Config(_))
        ));
    }
}
