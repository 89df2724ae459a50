//! Classical explicit diffusion with the standard difference kernel, tuned on validation data.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::flux::{FluxFunction, FluxKind};
use crate::schemes::{explicit_step, tau_max, SchemeConfig, StabilityMode};
use crate::signal::{KernelBank, SignalBundle};

use super::dataset::SignalPairs;
use super::metrics::{mean_mse, psnr_from_mse};

/// The forward difference `(0, -1, 1) / h`.
pub fn standard_difference_kernel(h: f64) -> KernelBank {
    KernelBank::single([0.0, -1.0 / h, 1.0 / h])
}

/// Search grid over contrast parameter and diffusion time.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineGrid {
    /// Ignored for parameter-free fluxes.
    pub lambdas: Vec<f64>,
    /// Requested step size; reduced to the stability bound when larger.
    pub tau: f64,
    /// Largest diffusion time tried; every multiple of the step size up to it is a candidate.
    pub max_time: f64,
}

impl Default for BaselineGrid {
    fn default() -> Self {
        Self {
            lambdas: vec![0.5, 1.0, 1.5, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 10.0, 12.0, 15.0, 20.0],
            tau: 0.25,
            max_time: 30.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaselineResult {
    pub kind: FluxKind,
    pub lambda: f64,
    pub tau: f64,
    pub steps: usize,
    pub time: f64,
    pub val_psnr: f64,
    pub test_psnr: f64,
}

fn step_all(signals: &mut [SignalBundle], k: &KernelBank, cfg: &SchemeConfig) -> Result<()> {
    signals.par_iter_mut().try_for_each(|u| {
        *u = explicit_step(u, k, cfg)?;
        Ok(())
    })
}

/// Best validation PSNR over `steps` for one contrast parameter: (steps, psnr).
fn sweep(noisy: &[SignalBundle], clean: &[SignalBundle], k: &KernelBank, cfg: &SchemeConfig, max_steps: usize) -> Result<(usize, f64)> {
    let mut u = noisy.to_vec();
    let mut best = (0, psnr_from_mse(mean_mse(&u, clean)?));
    for step in 1..=max_steps {
        step_all(&mut u, k, cfg)?;
        let p = psnr_from_mse(mean_mse(&u, clean)?);
        if p > best.1 {
            best = (step, p);
        }
    }
    Ok(best)
}

/// Explicit diffusion with the standard difference kernel: picks the contrast parameter and
/// stopping time with the best pooled validation PSNR, then reports the test PSNR of that
/// choice.
pub fn classical_baselines(val: &SignalPairs, test: &SignalPairs, kind: FluxKind, grid: &BaselineGrid) -> Result<BaselineResult> {
    if val.is_empty() || test.is_empty() {
        return Err(Error::Config("baselines need non-empty validation and test sets".into()));
    }
    if !(grid.tau > 0.0 && grid.max_time >= 0.0) {
        return Err(Error::Config("baseline grid needs tau > 0 and max_time >= 0".into()));
    }
    let lambdas: Vec<f64> = if kind.uses_lambda() {
        grid.lambdas.clone()
    } else {
        vec![1.0]
    };
    if lambdas.is_empty() {
        return Err(Error::Config("baseline grid has no lambda values".into()));
    }
    let h = val.noisy[0].h;
    let k = standard_difference_kernel(h);
    let n = val.noisy[0].len();

    let mut best: Option<BaselineResult> = None;
    for &lambda in &lambdas {
        let f = FluxFunction::new(kind, lambda)?;
        let tau = grid.tau.min(tau_max(&k, n, &f, StabilityMode::SpectralExact)?);
        let cfg = SchemeConfig::explicit(tau, f);
        let max_steps = (grid.max_time / tau).floor() as usize;
        let (steps, val_psnr) = sweep(&val.noisy, &val.clean, &k, &cfg, max_steps)?;
        if best.as_ref().is_none_or(|b| val_psnr > b.val_psnr) {
            best = Some(BaselineResult {
                kind,
                lambda,
                tau,
                steps,
                time: steps as f64 * tau,
                val_psnr,
                test_psnr: f64::NAN,
            });
        }
    }
    let mut best = best.expect("at least one lambda");
    let cfg = SchemeConfig::explicit(best.tau, FluxFunction::new(kind, best.lambda)?);
    let mut u = test.noisy.clone();
    for _ in 0..best.steps {
        step_all(&mut u, &k, &cfg)?;
    }
    best.test_psnr = psnr_from_mse(mean_mse(&u, &test.clean)?);
    Ok(best)
}
