//! Nonlinear Jacobi smoothing, FAS two-grid and V-cycles, and the full multigrid driver.

use diffnet_core::image::Image2D;
use diffnet_core::{Error, Result};

use crate::grid::{prolong, restrict_image, GridHierarchy, InpaintingProblem, SolverState};
use crate::operator::{apply_operator_with, check_diagonal, problem_tensor, residual_norm, state_rhs, stencil_diagonal};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CycleConfig {
    pub pre_sweeps: usize,
    pub post_sweeps: usize,
    /// Sweeps used as the solver on the coarsest grid of a cycle.
    pub coarse_sweeps: usize,
    /// Jacobi damping for pixels coupled to their neighbours.
    pub omega: f64,
}

impl Default for CycleConfig {
    fn default() -> Self {
        Self {
            pre_sweeps: 3,
            post_sweeps: 3,
            coarse_sweeps: 50,
            omega: 0.8,
        }
    }
}

impl CycleConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.omega > 0.0 && self.omega <= 1.0) {
            return Err(Error::Config(format!("damping must lie in (0, 1], got {}", self.omega)));
        }
        Ok(())
    }
}

/// Smoothing work in units of one sweep on the finest grid.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct WorkMeter {
    pub fine_sweeps: f64,
}

/// One Jacobi sweep on `A(x) = rhs` with the tensor frozen at the current iterate. Known
/// pixels have identity rows and are solved exactly; the rest are damped by `omega`.
fn jacobi_sweep(x: &mut Image2D, rhs: &Image2D, prob: &InpaintingProblem, omega: f64) -> Result<()> {
    let t = problem_tensor(x, prob);
    let ax = apply_operator_with(x, &prob.mask, &t);
    let sd = stencil_diagonal(&t, x.h);
    let diag: Vec<f64> = prob
        .mask
        .data()
        .iter()
        .zip(&sd)
        .map(|(c, s)| c + (1.0 - c) * s)
        .collect();
    check_diagonal(&diag)?;
    let mask = prob.mask.data();
    for (i, v) in x.data_mut().iter_mut().enumerate() {
        let w = if mask[i] == 1.0 { 1.0 } else { omega };
        *v += w * (rhs.data()[i] - ax.data()[i]) / diag[i];
    }
    Ok(())
}

fn refresh_residual(state: &mut SolverState, rhs: &Image2D, prob: &InpaintingProblem) {
    let ax = apply_operator_with(&state.x, &prob.mask, &problem_tensor(&state.x, prob));
    state.r = rhs.zip_map(&ax, |r, a| r - a).with_h(state.x.h);
}

/// `sweeps` damped nonlinear Jacobi sweeps on `A(x) = A(y) + b`, recomputing the tensor from
/// the iterate before every sweep, then a residual refresh.
pub fn smooth(state: &SolverState, prob: &InpaintingProblem, sweeps: usize, omega: f64) -> Result<SolverState> {
    state.x.check_same_shape(&prob.f)?;
    let mut out = state.clone();
    let rhs = state_rhs(state, prob)?;
    for _ in 0..sweeps {
        jacobi_sweep(&mut out.x, &rhs, prob, omega)?;
    }
    refresh_residual(&mut out, &rhs, prob);
    if !out.x.data().iter().all(|v| v.is_finite()) {
        return Err(Error::Numerical("smoother produced a non-finite value".into()));
    }
    Ok(out)
}

fn smooth_counted(
    state: &SolverState,
    levels: &[InpaintingProblem],
    l: usize,
    sweeps: usize,
    omega: f64,
    meter: &mut WorkMeter,
) -> Result<SolverState> {
    meter.fine_sweeps += sweeps as f64 * levels[l].f.len() as f64 / levels[0].f.len() as f64;
    smooth(state, &levels[l], sweeps, omega)
}

/// FAS restriction: `y_H = R x`, `b_H = R r`, starting the coarse iterate from `y_H`.
fn restrict_state(fine: &SolverState, coarse: &InpaintingProblem) -> Result<SolverState> {
    let y = restrict_image(&fine.x);
    y.check_same_shape(&coarse.f)?;
    let b = restrict_image(&fine.r);
    let (h, w) = y.shape();
    Ok(SolverState {
        x: y.clone(),
        r: Image2D::zeros(h, w).with_h(y.h),
        y,
        b,
    })
}

/// `x += P(x_H - y_H)`.
fn correct(fine: &mut SolverState, coarse: &SolverState) -> Result<()> {
    let diff = coarse.x.zip_map(&coarse.y, |a, b| a - b).with_h(coarse.x.h);
    let p = prolong(&diff, fine.shape())?;
    fine.x.data_mut().iter_mut().zip(p.data()).for_each(|(x, d)| *x += d);
    Ok(())
}

fn cycle(
    levels: &[InpaintingProblem],
    l: usize,
    state: &SolverState,
    depth: usize,
    cfg: &CycleConfig,
    meter: &mut WorkMeter,
) -> Result<SolverState> {
    if depth <= 1 || l + 1 >= levels.len() {
        return smooth_counted(state, levels, l, cfg.coarse_sweeps, cfg.omega, meter);
    }
    let pre = smooth_counted(state, levels, l, cfg.pre_sweeps, cfg.omega, meter)?;
    let coarse = restrict_state(&pre, &levels[l + 1])?;
    let solved = cycle(levels, l + 1, &coarse, depth - 1, cfg, meter)?;
    let mut out = pre;
    correct(&mut out, &solved)?;
    smooth_counted(&out, levels, l, cfg.post_sweeps, cfg.omega, meter)
}

/// One FAS two-grid cycle: presmooth, restrict `x` and the residual, solve the coarse problem
/// `A_H(x_H) = A_H(y_H) + b_H` by `coarse_sweeps` smoothing sweeps from `x_H = y_H`, correct
/// with the prolonged change, postsmooth.
pub fn fas_two_grid(
    state: &SolverState,
    prob_h: &InpaintingProblem,
    prob_coarse: &InpaintingProblem,
    cfg: &CycleConfig,
) -> Result<SolverState> {
    cfg.validate()?;
    let levels = [prob_h.clone(), prob_coarse.clone()];
    cycle(&levels, 0, state, 2, cfg, &mut WorkMeter::default())
}

/// Recursive FAS V-cycle over the first `depth` levels of the hierarchy, starting at level 0.
pub fn v_cycle(hier: &GridHierarchy, state: &SolverState, depth: usize, cfg: &CycleConfig, meter: &mut WorkMeter) -> Result<SolverState> {
    cfg.validate()?;
    if depth == 0 || depth > hier.len() {
        return Err(Error::Config(format!(
            "V-cycle depth must be in 1..={}, got {depth}",
            hier.len()
        )));
    }
    cycle(&hier.levels, 0, state, depth, cfg, meter)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualRecord {
    pub visit: usize,
    pub level: usize,
    /// Mean absolute residual of that level's equation.
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub solution: Image2D,
    /// Mean absolute residual of the original equation at `solution`.
    pub residual: f64,
    pub log: Vec<ResidualRecord>,
    pub work: WorkMeter,
    /// False when the iteration cap was reached before the tolerance.
    pub converged: bool,
    /// Fine-grid iterations (sweeps, V-cycles or outer steps, depending on the solver).
    pub iterations: usize,
}

/// `visit,level,residual` lines with a header.
pub fn render_residual_log(log: &[ResidualRecord]) -> String {
    use diffnet_core::signal::fmt_f64;
    let mut out = String::from("visit,level,residual\n");
    for r in log {
        out += &format!("{},{},{}\n", r.visit, r.level, fmt_f64(r.residual));
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct FmgConfig {
    pub cycle: CycleConfig,
    /// Levels of the hierarchy (grids h, 2h, 4h, ... ).
    pub levels: usize,
    /// Coarsening stops before a side would drop below this.
    pub min_dim: usize,
    /// Level visited at each step; 0 is the finest.
    pub schedule: Vec<usize>,
    /// Fine-level V-cycles allowed after the schedule.
    pub max_vcycles: usize,
}

impl Default for FmgConfig {
    fn default() -> Self {
        Self {
            cycle: CycleConfig::default(),
            levels: 3,
            min_dim: 8,
            schedule: vec![2, 1, 2, 1, 0, 1, 2, 1, 2, 1, 0],
            max_vcycles: 1000,
        }
    }
}

/// Schedule restricted to the levels that exist, without repeated consecutive visits.
fn effective_schedule(schedule: &[usize], levels: usize) -> Vec<usize> {
    let mut out: Vec<usize> = Vec::with_capacity(schedule.len());
    for &l in schedule {
        let l = l.min(levels - 1);
        if out.last() != Some(&l) {
            out.push(l);
        }
    }
    if out.last() != Some(&0) {
        out.push(0);
    }
    out
}

/// Full multigrid: walks the level schedule, carrying FAS state between grids, then runs
/// fine-level V-cycles until the mean absolute residual drops to `tol` or the cap is hit.
///
/// Moving to a coarser grid restricts the FAS state; moving to a finer grid either corrects
/// its state or, on the first visit, interpolates the coarse solution as the initial guess.
pub fn fmg_solve(prob: &InpaintingProblem, tol: f64, cfg: &FmgConfig) -> Result<SolveReport> {
    if !(tol > 0.0) {
        return Err(Error::Config(format!("tolerance must be positive, got {tol}")));
    }
    cfg.cycle.validate()?;
    let hier = GridHierarchy::build(prob, cfg.levels.max(1), cfg.min_dim.max(1))?;
    let levels = &hier.levels;
    let coarsest = levels.len() - 1;
    let schedule = effective_schedule(&cfg.schedule, levels.len());
    let mut meter = WorkMeter::default();
    let mut states: Vec<Option<SolverState>> = vec![None; levels.len()];
    let mut log = Vec::new();
    let mut prev: Option<usize> = None;

    for (visit, &l) in schedule.iter().enumerate() {
        let state = match prev {
            None => SolverState::for_problem(&levels[l], levels[l].initial_guess())?,
            Some(p) if p < l => restrict_state(states[p].as_ref().expect("visited"), &levels[l])?,
            Some(p) => {
                let coarse = states[p].take().expect("visited");
                match states[l].take() {
                    Some(mut fine) => {
                        correct(&mut fine, &coarse)?;
                        fine
                    }
                    None => SolverState::for_problem(&levels[l], prolong(&coarse.x, levels[l].shape())?)?,
                }
            }
        };
        let next = schedule.get(visit + 1).copied();
        let sweeps = if l == coarsest {
            cfg.cycle.coarse_sweeps
        } else if next.is_some_and(|n| n > l) {
            cfg.cycle.pre_sweeps
        } else {
            cfg.cycle.post_sweeps
        };
        let state = smooth_counted(&state, levels, l, sweeps, cfg.cycle.omega, &mut meter)?;
        let residual = residual_norm(&state.r);
        log.push(ResidualRecord { visit, level: l, residual });
        states[l] = Some(state);
        prev = Some(l);
        if l == 0 && residual <= tol {
            break;
        }
    }

    let mut state = states[0].take().expect("schedule ends on the finest grid");
    let mut residual = residual_norm(&state.r);
    let mut cycles = 0;
    while residual > tol && cycles < cfg.max_vcycles {
        state = cycle(levels, 0, &state, levels.len(), &cfg.cycle, &mut meter)?;
        residual = residual_norm(&state.r);
        cycles += 1;
        log.push(ResidualRecord {
            visit: log.len(),
            level: 0,
            residual,
        });
    }
    Ok(SolveReport {
        solution: state.x,
        residual,
        log,
        work: meter,
        converged: residual <= tol,
        iterations: cycles,
    })
}

/// Repeated V-cycles from the initial guess.
pub fn vcycle_solve(prob: &InpaintingProblem, tol: f64, cfg: &FmgConfig) -> Result<SolveReport> {
    if !(tol > 0.0) {
        return Err(Error::Config(format!("tolerance must be positive, got {tol}")));
    }
    let hier = GridHierarchy::build(prob, cfg.levels.max(1), cfg.min_dim.max(1))?;
    let mut meter = WorkMeter::default();
    let mut state = smooth(&SolverState::for_problem(prob, prob.initial_guess())?, prob, 0, cfg.cycle.omega)?;
    let mut residual = residual_norm(&state.r);
    let mut log = vec![ResidualRecord { visit: 0, level: 0, residual }];
    let mut cycles = 0;
    while residual > tol && cycles < cfg.max_vcycles {
        state = v_cycle(&hier, &state, hier.len(), &cfg.cycle, &mut meter)?;
        residual = residual_norm(&state.r);
        cycles += 1;
        log.push(ResidualRecord {
            visit: cycles,
            level: 0,
            residual,
        });
    }
    Ok(SolveReport {
        solution: state.x,
        residual,
        log,
        work: meter,
        converged: residual <= tol,
        iterations: cycles,
    })
}

/// Plain smoothing on the fine grid until `tol` or `max_sweeps`; the residual is logged after
/// every sweep.
pub fn single_grid_solve(prob: &InpaintingProblem, tol: f64, max_sweeps: usize, omega: f64) -> Result<SolveReport> {
    if !(tol > 0.0) {
        return Err(Error::Config(format!("tolerance must be positive, got {tol}")));
    }
    let mut state = SolverState::for_problem(prob, prob.initial_guess())?;
    let rhs = state_rhs(&state, prob)?;
    refresh_residual(&mut state, &rhs, prob);
    let mut residual = residual_norm(&state.r);
    let mut log = vec![ResidualRecord { visit: 0, level: 0, residual }];
    let mut sweeps = 0;
    while residual > tol && sweeps < max_sweeps {
        jacobi_sweep(&mut state.x, &rhs, prob, omega)?;
        refresh_residual(&mut state, &rhs, prob);
        residual = residual_norm(&state.r);
        sweeps += 1;
        log.push(ResidualRecord {
            visit: sweeps,
            level: 0,
            residual,
        });
        if !residual.is_finite() {
            return Err(Error::Numerical(format!("smoothing diverged after {sweeps} sweeps")));
        }
    }
    Ok(SolveReport {
        solution: state.x,
        residual,
        log,
        work: WorkMeter {
            fine_sweeps: sweeps as f64,
        },
        converged: residual <= tol,
        iterations: sweeps,
    })
}
