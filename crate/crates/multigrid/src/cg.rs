//! Reference solver: lagged diffusivity with conjugate gradients on the unknown pixels.
//!
//! Each outer step freezes the tensor at the current iterate, eliminates the known pixels and
//! solves the remaining symmetric positive definite system `S_UU u_U = -S_UK f_K` by CG.

use diffnet_core::image::Image2D;
use diffnet_core::{Error, Result};

use crate::grid::InpaintingProblem;
use crate::operator::{apply_stencil, equation_residual, problem_tensor, residual_norm};
use crate::solver::{ResidualRecord, SolveReport, WorkMeter};
use crate::tensor::TensorField;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgConfig {
    pub max_outer: usize,
    /// Inner iterations per outer step, as a multiple of the number of unknowns.
    pub max_inner_factor: usize,
    /// Inner stopping threshold relative to the outer tolerance.
    pub inner_ratio: f64,
}

impl Default for CgConfig {
    fn default() -> Self {
        Self {
            max_outer: 500,
            max_inner_factor: 4,
            inner_ratio: 1e-2,
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `S v` restricted to the unknown pixels, for `v` supported on them.
fn masked_apply(v: &Image2D, t: &TensorField, unknown: &[bool]) -> Image2D {
    let mut s = apply_stencil(v, t);
    s.data_mut().iter_mut().zip(unknown).for_each(|(x, &u)| {
        if !u {
            *x = 0.0;
        }
    });
    s
}

/// Solves the frozen-tensor system for the unknown pixels of `u` in place. Returns the number
/// of CG iterations.
fn linear_solve(u: &mut Image2D, prob: &InpaintingProblem, t: &TensorField, abs_tol: f64, max_iter: usize) -> Result<usize> {
    let (h, w) = u.shape();
    let unknown: Vec<bool> = prob.mask.data().iter().map(|&c| c == 0.0).collect();
    // Right-hand side -S_UK f_K.
    let known = prob.mask.zip_map(&prob.f, |c, f| c * f).with_h(u.h);
    let mut rhs = masked_apply(&known, t, &unknown);
    rhs.data_mut().iter_mut().for_each(|v| *v = -*v);
    // Start from the unknown part of u.
    let mut x = Image2D::zeros(h, w).with_h(u.h);
    for (i, &un) in unknown.iter().enumerate() {
        if un {
            x.data_mut()[i] = u.data()[i];
        }
    }
    let sx = masked_apply(&x, t, &unknown);
    let mut r: Vec<f64> = rhs.data().iter().zip(sx.data()).map(|(b, s)| b - s).collect();
    let mut p = Image2D::new(h, w, r.clone())?.with_h(u.h);
    let mut rr = dot(&r, &r);
    let n = (h * w) as f64;
    let mut iters = 0;
    while (rr / n).sqrt() > abs_tol {
        if iters >= max_iter {
            return Err(Error::Numerical(format!(
                "CG did not converge in {max_iter} iterations (rms residual {:.3e})",
                (rr / n).sqrt()
            )));
        }
        let sp = masked_apply(&p, t, &unknown);
        let curv = dot(p.data(), sp.data());
        if !(curv > 0.0) {
            return Err(Error::Numerical(format!(
                "CG breakdown at iteration {iters}: curvature {curv:e}, residual {rr:e}"
            )));
        }
        let alpha = rr / curv;
        x.data_mut().iter_mut().zip(p.data()).for_each(|(x, p)| *x += alpha * p);
        r.iter_mut().zip(sp.data()).for_each(|(r, s)| *r -= alpha * s);
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        rr = rr_new;
        p.data_mut().iter_mut().zip(&r).for_each(|(p, r)| *p = r + beta * *p);
        iters += 1;
    }
    for (i, &un) in unknown.iter().enumerate() {
        u.data_mut()[i] = if un { x.data()[i] } else { prob.f.data()[i] };
    }
    Ok(iters)
}

/// Lagged-diffusivity fixed point until the mean absolute residual of `A(u) = c f` is at most
/// `tol`. `iterations` counts outer steps; the log holds the residual after each.
pub fn cg_reference_solve(prob: &InpaintingProblem, tol: f64, cfg: &CgConfig) -> Result<SolveReport> {
    prob.validate()?;
    if !(tol > 0.0) {
        return Err(Error::Config(format!("tolerance must be positive, got {tol}")));
    }
    let mut u = prob.initial_guess();
    let mut residual = residual_norm(&equation_residual(&u, prob)?);
    let mut log = vec![ResidualRecord { visit: 0, level: 0, residual }];
    let unknowns = prob.mask.data().iter().filter(|&&c| c == 0.0).count();
    let max_inner = (cfg.max_inner_factor * unknowns).max(10);
    let mut outer = 0;
    while residual > tol && outer < cfg.max_outer {
        let t = problem_tensor(&u, prob);
        linear_solve(&mut u, prob, &t, cfg.inner_ratio * tol, max_inner)?;
        residual = residual_norm(&equation_residual(&u, prob)?);
        outer += 1;
        log.push(ResidualRecord {
            visit: outer,
            level: 0,
            residual,
        });
        if !residual.is_finite() {
            return Err(Error::Numerical(format!("lagged diffusivity diverged at step {outer}")));
        }
    }
    Ok(SolveReport {
        solution: u,
        residual,
        log,
        work: WorkMeter::default(),
        converged: residual <= tol,
        iterations: outer,
    })
}
