//! Parameter constraints enforced after every update, and the temporal smoothness penalty.

use crate::error::Result;
use crate::flux::LAMBDA_MIN;
use crate::network::{check_params, Arch, NetworkParams, NetworkSpec, Sharing};
use crate::schemes::{gershgorin_factor, StabilityMode, StabilityReport};
use crate::signal::{spectral_norm, KernelBank, SpectralWarmStart};

/// Smallest admissible step size.
pub const TAU_MIN: f64 = 1e-8;

/// Admissible range of the FSI extrapolation weights.
pub const EXTRAPOLATION_RANGE: (f64, f64) = (0.0, 2.0);

fn project_with(
    spec: &NetworkSpec,
    params: &mut NetworkParams,
    mut norm: impl FnMut(usize, &KernelBank) -> Result<f64>,
) -> Result<()> {
    check_params(spec, params)?;
    for (i, p) in params.blocks.iter_mut().enumerate() {
        p.lambda = p.lambda.max(LAMBDA_MIN);
        if !spec.arch.is_symmetric() {
            continue;
        }
        let lip = spec.flux_with(p.lambda).lipschitz();
        let norm_sq = match spec.stability_mode {
            StabilityMode::GershgorinAPriori => {
                let factor = gershgorin_factor(&p.kernel)?;
                // The slack keeps the map idempotent: a rescaled bank may come back a few
                // ulps above 1.
                if factor > 1.0 + 1e-12 {
                    p.kernel = p.kernel.scaled(1.0 / factor);
                }
                1.0
            }
            StabilityMode::SpectralExact => {
                let s = norm(i, &p.kernel)?;
                s * s
            }
        };
        let report = StabilityReport::from_norm_sq(norm_sq, lip);
        if spec.arch == Arch::DfNet {
            // Du Fort-Frankel is stable for any tau once alpha is large enough.
            p.tau = p.tau.max(TAU_MIN);
            p.alpha = p.alpha.max(report.alpha_min);
        } else {
            p.tau = p.tau.clamp(TAU_MIN, report.tau_max.max(TAU_MIN));
        }
    }
    let (lo, hi) = EXTRAPOLATION_RANGE;
    params.extrapolation.iter_mut().for_each(|a| *a = a.clamp(lo, hi));
    Ok(())
}

/// Projects `params` onto the admissible set: `lambda >= LAMBDA_MIN`, step sizes within the
/// stability bound of their block's kernel (a lower bound on alpha for DF nets), and FSI
/// weights in [0, 2]. Spectral norms are computed to full accuracy, so the map is idempotent.
pub fn project_constraints(spec: &NetworkSpec, params: &NetworkParams) -> Result<NetworkParams> {
    let mut out = params.clone();
    project_with(spec, &mut out, |_, k| spectral_norm(k, spec.signal_len))?;
    Ok(out)
}

/// [`project_constraints`] with warm-started spectral norm estimates, one per stored block,
/// for use inside the training loop.
#[derive(Debug, Clone)]
pub struct Projector {
    warm: Vec<SpectralWarmStart>,
    max_steps: usize,
}

impl Projector {
    pub fn new(max_steps: usize) -> Self {
        Self {
            warm: Vec::new(),
            max_steps,
        }
    }

    pub fn project(&mut self, spec: &NetworkSpec, params: &mut NetworkParams) -> Result<()> {
        if self.warm.len() != params.blocks.len() {
            self.warm = vec![SpectralWarmStart::default(); params.blocks.len()];
        }
        let (warm, steps, n) = (&mut self.warm, self.max_steps, spec.signal_len);
        project_with(spec, params, |i, k| Ok(warm[i].estimate(k, n, steps)))
    }
}

/// Reference step size used to normalise the temporal penalty: `1 / blocks` for the standard
/// ResNet, the mean step size otherwise.
pub fn default_tau_ref(spec: &NetworkSpec, params: &NetworkParams) -> f64 {
    if spec.arch.is_symmetric() {
        params.blocks.iter().map(|b| b.tau).sum::<f64>() / params.blocks.len() as f64
    } else {
        1.0 / spec.blocks as f64
    }
}

/// Values penalised for changing between consecutive blocks: kernels, biases, and lambda if
/// the flux has one.
fn penalised(spec: &NetworkSpec, p: &crate::network::BlockParams) -> Vec<f64> {
    let mut v = p.kernel.taps().to_vec();
    if let Some(w2) = &p.outer {
        v.extend_from_slice(w2.taps());
    }
    v.extend_from_slice(&p.bias_in);
    v.extend_from_slice(&p.bias_out);
    if spec.flux.uses_lambda() {
        v.push(p.lambda);
    }
    v
}

fn scatter(spec: &NetworkSpec, p: &mut crate::network::BlockParams, g: &[f64]) {
    let mut it = g.iter();
    let mut add = |x: &mut f64| *x += it.next().expect("matching layout");
    p.kernel.taps_mut().iter_mut().for_each(&mut add);
    if let Some(w2) = p.outer.as_mut() {
        w2.taps_mut().iter_mut().for_each(&mut add);
    }
    p.bias_in.iter_mut().for_each(&mut add);
    p.bias_out.iter_mut().for_each(&mut add);
    if spec.flux.uses_lambda() {
        add(&mut p.lambda);
    }
}

/// `beta * sum_b ||theta_b - theta_{b-1}||^2 / tau_ref`; zero for shared parameters.
pub fn temporal_penalty(spec: &NetworkSpec, params: &NetworkParams, beta: f64, tau_ref: f64) -> f64 {
    if spec.sharing == Sharing::Shared || beta == 0.0 {
        return 0.0;
    }
    let thetas: Vec<Vec<f64>> = params.blocks.iter().map(|b| penalised(spec, b)).collect();
    let total: f64 = thetas
        .windows(2)
        .map(|w| w[1].iter().zip(&w[0]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
        .sum();
    beta * total / tau_ref
}

/// Adds the gradient of [`temporal_penalty`] to `acc`.
pub fn temporal_penalty_grad(spec: &NetworkSpec, params: &NetworkParams, beta: f64, tau_ref: f64, acc: &mut NetworkParams) {
    if spec.sharing == Sharing::Shared || beta == 0.0 {
        return;
    }
    let thetas: Vec<Vec<f64>> = params.blocks.iter().map(|b| penalised(spec, b)).collect();
    let scale = 2.0 * beta / tau_ref;
    for b in 0..thetas.len() {
        let mut g = vec![0.0; thetas[b].len()];
        if b > 0 {
            g.iter_mut()
                .zip(thetas[b].iter().zip(&thetas[b - 1]))
                .for_each(|(g, (x, y))| *g += scale * (x - y));
        }
        if b + 1 < thetas.len() {
            g.iter_mut()
                .zip(thetas[b].iter().zip(&thetas[b + 1]))
                .for_each(|(g, (x, y))| *g += scale * (x - y));
        }
        scatter(spec, &mut acc.blocks[b], &g);
    }
}
