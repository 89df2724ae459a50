//! Explicit, Du Fort-Frankel, FSI and implicit fixed-point schemes for `u_t = -K^T Phi(Ku)`,
//! together with their stability bounds.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::flux::{FluxFunction, Penaliser};
use crate::signal::{conv_adjoint_into, conv_into, spectral_norm, KernelBank, SignalBundle};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchemeConfig {
    pub tau: f64,
    /// Du Fort-Frankel stabilisation weight.
    pub alpha: f64,
    /// Cycle length L of FSI and the implicit fixed-point iteration.
    pub cycle_len: usize,
    pub flux: FluxFunction,
}

impl SchemeConfig {
    pub fn explicit(tau: f64, flux: FluxFunction) -> Self {
        Self {
            tau,
            alpha: 1.0,
            cycle_len: 1,
            flux,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau >= 0.0 && self.tau.is_finite()) {
            return Err(Error::Config(format!("tau must be finite and >= 0, got {}", self.tau)));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("alpha must be > 0, got {}", self.alpha)));
        }
        if self.cycle_len < 1 {
            return Err(Error::Config("cycle length must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StabilityMode {
    /// `tau_max = 2 / (L ||K||^2)` with the true spectral norm.
    SpectralExact,
    /// Kernels are rescaled so that `||K|| <= 1`, then `tau_max = 2 / L`.
    GershgorinAPriori,
}

impl StabilityMode {
    pub fn name(self) -> &'static str {
        match self {
            StabilityMode::SpectralExact => "spectral",
            StabilityMode::GershgorinAPriori => "gershgorin",
        }
    }
}

impl FromStr for StabilityMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spectral" | "spectral-exact" => Ok(StabilityMode::SpectralExact),
            "gershgorin" | "gershgorin-a-priori" => Ok(StabilityMode::GershgorinAPriori),
            other => Err(Error::Config(format!(
                "unknown stability mode {other:?}, expected spectral | gershgorin"
            ))),
        }
    }
}

impl fmt::Display for StabilityMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilityReport {
    pub spectral_norm_sq: f64,
    pub lipschitz: f64,
    /// `+inf` when `L ||K||^2 = 0`.
    pub tau_max: f64,
    pub alpha_min: f64,
}

impl StabilityReport {
    pub fn from_norm_sq(spectral_norm_sq: f64, lipschitz: f64) -> Self {
        let rho = lipschitz * spectral_norm_sq;
        Self {
            spectral_norm_sq,
            lipschitz,
            tau_max: if rho > 0.0 { 2.0 / rho } else { f64::INFINITY },
            alpha_min: rho / 4.0,
        }
    }
}

pub fn stability_bound(k: &KernelBank, n: usize, f: &FluxFunction) -> Result<StabilityReport> {
    let s = spectral_norm(k, n)?;
    Ok(StabilityReport::from_norm_sq(s * s, f.lipschitz()))
}

fn require_square(k: &KernelBank) -> Result<()> {
    if k.is_square() {
        Ok(())
    } else {
        Err(Error::Dimension(format!(
            "symmetric scheme needs a square kernel bank, got {}x{}",
            k.c_out(),
            k.c_in()
        )))
    }
}

/// Largest absolute row sum and column sum of one kernel's matrix under reflecting boundaries
/// (for any N >= 3; N = 2 only lowers them).
fn row_col_sums(t: [f64; 3]) -> (f64, f64) {
    let abs_sum = t[0].abs() + t[1].abs() + t[2].abs();
    let first_col = (t[0] + t[1]).abs() + t[0].abs();
    let last_col = (t[1] + t[2]).abs() + t[2].abs();
    (abs_sum, abs_sum.max(first_col).max(last_col))
}

/// Uniform rescaling of a square bank guaranteeing `||K||_2 <= 1`.
///
/// Uses the larger of `sqrt(C) * max_blocks sqrt(r_b c_b)` and the Schur bound `sqrt(R S)`
/// of the whole multichannel operator, where `r`, `c`, `R`, `S` are largest absolute row
/// and column sums. The second term is what bounds the norm; the first reproduces the
/// per-block `sqrt(C)` rule for banks where it is the larger one.
pub fn gershgorin_rescale(k: &KernelBank) -> Result<KernelBank> {
    Ok(k.scaled(1.0 / gershgorin_factor(k)?))
}

/// The divisor used by [`gershgorin_rescale`]; 1 for the zero bank.
pub fn gershgorin_factor(k: &KernelBank) -> Result<f64> {
    require_square(k)?;
    if k.is_zero() {
        return Ok(1.0);
    }
    let c = k.c_in();
    let mut block_max = 0.0f64;
    let mut rows = vec![0.0; c];
    let mut cols = vec![0.0; c];
    for o in 0..c {
        for i in 0..c {
            let (r, s) = row_col_sums(k.kernel(o, i));
            block_max = block_max.max((r * s).sqrt());
            rows[o] += r;
            cols[i] += s;
        }
    }
    let big_r = rows.iter().cloned().fold(0.0, f64::max);
    let big_s = cols.iter().cloned().fold(0.0, f64::max);
    Ok(((c as f64).sqrt() * block_max).max((big_r * big_s).sqrt()))
}

/// `tau_max` for the given stability mode. Under the a-priori mode the kernel is assumed to be
/// rescaled already.
pub fn tau_max(k: &KernelBank, n: usize, f: &FluxFunction, mode: StabilityMode) -> Result<f64> {
    match mode {
        StabilityMode::SpectralExact => Ok(stability_bound(k, n, f)?.tau_max),
        StabilityMode::GershgorinAPriori => Ok(2.0 / f.lipschitz()),
    }
}

/// `K^T Phi(K u)` on raw channel-major data.
pub(crate) fn diffusion_flux(u: &[f64], n: usize, k: &KernelBank, f: &FluxFunction) -> Vec<f64> {
    let mut z = vec![0.0; k.c_out() * n];
    conv_into(u, n, k, &mut z);
    z.iter_mut().for_each(|s| *s = f.flux(*s));
    let mut out = vec![0.0; k.c_in() * n];
    conv_adjoint_into(&z, n, k, &mut out);
    out
}

fn check_finite(v: &[f64], what: &str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numerical(format!("{what} produced a non-finite value")))
    }
}

fn check_signal(u: &SignalBundle, k: &KernelBank) -> Result<()> {
    require_square(k)?;
    if u.channels() != k.c_in() {
        return Err(Error::Dimension(format!(
            "signal has {} channels, kernel bank expects {}",
            u.channels(),
            k.c_in()
        )));
    }
    Ok(())
}

fn explicit_raw(u: &[f64], n: usize, k: &KernelBank, f: &FluxFunction, step: f64) -> Vec<f64> {
    let w = diffusion_flux(u, n, k, f);
    u.iter().zip(&w).map(|(a, b)| a - step * b).collect()
}

fn wrap(u: &SignalBundle, data: Vec<f64>) -> SignalBundle {
    let mut s = SignalBundle::from_raw(u.channels(), u.len(), data);
    s.h = u.h;
    s
}

/// `u - tau K^T Phi(K u)`.
pub fn explicit_step(u: &SignalBundle, k: &KernelBank, cfg: &SchemeConfig) -> Result<SignalBundle> {
    check_signal(u, k)?;
    let out = explicit_raw(u.data(), u.len(), k, &cfg.flux, cfg.tau);
    check_finite(&out, "explicit step")?;
    Ok(wrap(u, out))
}

/// The two scalar weights `(4 tau alpha / (1 + 2 tau alpha), (1 - 2 tau alpha) / (1 + 2 tau alpha))`.
/// The second is computed as `1 - first` so they sum to 1 exactly.
pub fn df_coefficients(tau: f64, alpha: f64) -> (f64, f64) {
    let c1 = 4.0 * tau * alpha / (1.0 + 2.0 * tau * alpha);
    (c1, 1.0 - c1)
}

pub fn dufort_frankel_step(
    u_k: &SignalBundle,
    u_km1: &SignalBundle,
    k: &KernelBank,
    cfg: &SchemeConfig,
) -> Result<SignalBundle> {
    check_signal(u_k, k)?;
    u_k.check_same_shape(u_km1)?;
    if !(cfg.alpha > 0.0) {
        return Err(Error::Config(format!("alpha must be > 0, got {}", cfg.alpha)));
    }
    let (c1, c2) = df_coefficients(cfg.tau, cfg.alpha);
    let inner = explicit_raw(u_k.data(), u_k.len(), k, &cfg.flux, 1.0 / (2.0 * cfg.alpha));
    let out: Vec<f64> = inner
        .iter()
        .zip(u_km1.data())
        .map(|(a, b)| c1 * a + c2 * b)
        .collect();
    check_finite(&out, "Du Fort-Frankel step")?;
    Ok(wrap(u_k, out))
}

/// `gamma = 4 tau alpha / (1 + 2 tau alpha) - 2 tau lambda / (1 + 2 tau alpha)` for an
/// eigenvalue `lambda` of the linearised operator.
pub fn df_gamma(lambda: f64, tau: f64, alpha: f64) -> f64 {
    let d = 1.0 + 2.0 * tau * alpha;
    4.0 * tau * alpha / d - 2.0 * tau * lambda / d
}

/// Both roots of `mu^2 - gamma mu - (1 - 2 tau alpha) / (1 + 2 tau alpha) = 0`.
pub fn df_multistep_eigenvalues(gamma: f64, tau: f64, alpha: f64) -> [Complex64; 2] {
    let q = (1.0 - 2.0 * tau * alpha) / (1.0 + 2.0 * tau * alpha);
    let half = gamma / 2.0;
    let disc = half * half + q;
    if disc >= 0.0 {
        let r = disc.sqrt();
        [Complex64::new(half + r, 0.0), Complex64::new(half - r, 0.0)]
    } else {
        let r = (-disc).sqrt();
        [Complex64::new(half, r), Complex64::new(half, -r)]
    }
}

/// Runs `steps` Du Fort-Frankel steps. The second starting level comes from one explicit step
/// of size `min(tau, 1/(2 alpha))`, which is stable whenever `alpha` satisfies its bound.
pub fn dufort_frankel_solve(u0: &SignalBundle, k: &KernelBank, cfg: &SchemeConfig, steps: usize) -> Result<SignalBundle> {
    if steps == 0 {
        return Ok(u0.clone());
    }
    let start = SchemeConfig {
        tau: cfg.tau.min(1.0 / (2.0 * cfg.alpha)),
        ..*cfg
    };
    let mut prev = u0.clone();
    let mut cur = explicit_step(u0, k, &start)?;
    for _ in 1..steps {
        let next = dufort_frankel_step(&cur, &prev, k, cfg)?;
        prev = std::mem::replace(&mut cur, next);
    }
    Ok(cur)
}

/// `alpha_l = (4l + 2) / (2l + 3)` for `l = 0..L`.
pub fn fsi_weights(cycle_len: usize) -> Vec<f64> {
    (0..cycle_len)
        .map(|l| (4 * l + 2) as f64 / (2 * l + 3) as f64)
        .collect()
}

/// One FSI cycle with the standard weights.
pub fn fsi_cycle(u: &SignalBundle, k: &KernelBank, cfg: &SchemeConfig) -> Result<SignalBundle> {
    if cfg.cycle_len < 1 {
        return Err(Error::Config("cycle length must be >= 1".into()));
    }
    fsi_cycle_with_weights(u, k, cfg.tau, &cfg.flux, &fsi_weights(cfg.cycle_len))
}

/// `u^{l+1} = a_l (u^l - tau K^T Phi(K u^l)) + (1 - a_l) u^{l-1}` with `u^{-1} = u^0`.
pub fn fsi_cycle_with_weights(
    u: &SignalBundle,
    k: &KernelBank,
    tau: f64,
    f: &FluxFunction,
    weights: &[f64],
) -> Result<SignalBundle> {
    check_signal(u, k)?;
    let n = u.len();
    let mut prev = u.data().to_vec();
    let mut cur = prev.clone();
    for &a in weights {
        let e = explicit_raw(&cur, n, k, f, tau);
        let next: Vec<f64> = e
            .iter()
            .zip(&prev)
            .map(|(ev, pv)| a * ev + (1.0 - a) * pv)
            .collect();
        prev = std::mem::replace(&mut cur, next);
    }
    check_finite(&cur, "FSI cycle")?;
    Ok(wrap(u, cur))
}

/// Iterate growth beyond this factor of the input norm counts as divergence.
pub const DIVERGENCE_FACTOR: f64 = 1e6;

/// `L` fixed-point iterations `u^{l+1} = u^0 - tau K^T Phi(K u^l)` of one implicit step.
pub fn implicit_fixed_point(u: &SignalBundle, k: &KernelBank, cfg: &SchemeConfig) -> Result<SignalBundle> {
    check_signal(u, k)?;
    if cfg.cycle_len < 1 {
        return Err(Error::Config("cycle length must be >= 1".into()));
    }
    let n = u.len();
    let anchor = u.data();
    let limit = DIVERGENCE_FACTOR * u.norm().max(f64::MIN_POSITIVE);
    let mut it = anchor.to_vec();
    for l in 0..cfg.cycle_len {
        let w = diffusion_flux(&it, n, k, &cfg.flux);
        it = anchor.iter().zip(&w).map(|(a, b)| a - cfg.tau * b).collect();
        let nrm = it.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(nrm <= limit) {
            return Err(Error::Numerical(format!(
                "fixed-point iteration is not a contraction: iterate norm {nrm:e} after {} of {} iterations",
                l + 1,
                cfg.cycle_len
            )));
        }
    }
    Ok(wrap(u, it))
}

/// `h * sum_i Psi((K u)_i^2)`.
pub fn energy_eval(u: &SignalBundle, k: &KernelBank, p: &Penaliser) -> Result<f64> {
    if u.channels() != k.c_in() {
        return Err(Error::Dimension(format!(
            "signal has {} channels, kernel bank expects {}",
            u.channels(),
            k.c_in()
        )));
    }
    let mut z = vec![0.0; k.c_out() * u.len()];
    conv_into(u.data(), u.len(), k, &mut z);
    let mut e = 0.0;
    for s in z {
        e += p.eval(s * s)?;
    }
    Ok(u.h * e)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    Explicit,
    DuFortFrankel,
    Fsi,
    Implicit,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::Explicit => "explicit",
            Scheme::DuFortFrankel => "dff",
            Scheme::Fsi => "fsi",
            Scheme::Implicit => "implicit",
        }
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "explicit" => Ok(Scheme::Explicit),
            "dff" | "df" | "dufort-frankel" => Ok(Scheme::DuFortFrankel),
            "fsi" => Ok(Scheme::Fsi),
            "implicit" => Ok(Scheme::Implicit),
            other => Err(Error::Config(format!(
                "unknown scheme {other:?}, expected explicit | dff | fsi | implicit"
            ))),
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Runs `steps` time steps (FSI: cycles; implicit: fixed-point solves) of a scheme.
pub fn run_scheme(scheme: Scheme, u0: &SignalBundle, k: &KernelBank, cfg: &SchemeConfig, steps: usize) -> Result<SignalBundle> {
    cfg.validate()?;
    match scheme {
        Scheme::DuFortFrankel => dufort_frankel_solve(u0, k, cfg, steps),
        _ => {
            let mut u = u0.clone();
            for _ in 0..steps {
                u = match scheme {
                    Scheme::Explicit => explicit_step(&u, k, cfg)?,
                    Scheme::Fsi => fsi_cycle(&u, k, cfg)?,
                    Scheme::Implicit => implicit_fixed_point(&u, k, cfg)?,
                    Scheme::DuFortFrankel => unreachable!(),
                };
            }
            Ok(u)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flux::FluxKind;
    use crate::signal::dense_operator_of;
    use nalgebra::{DMatrix, DVector, Matrix2};
    use proptest::prelude::*;

    fn sig(v: &[f64]) -> SignalBundle {
        SignalBundle::from_samples(v.to_vec()).unwrap()
    }

    fn fd() -> KernelBank {
        KernelBank::single([0.0, -1.0, 1.0])
    }

    fn dense(k: &KernelBank, n: usize) -> DMatrix<f64> {
        let m = dense_operator_of(k, n);
        DMatrix::from_row_slice(m.rows, m.cols, &m.matrix)
    }

    fn lin_cfg(tau: f64) -> SchemeConfig {
        SchemeConfig::explicit(tau, FluxFunction::linear())
    }

    fn max_diff(a: &SignalBundle, b: &SignalBundle) -> f64 {
        a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn explicit_examples() {
        let u = SignalBundle::constant(1, 9, 3.0);
        assert_eq!(explicit_step(&u, &fd(), &lin_cfg(0.4)).unwrap(), u);
        let out = explicit_step(&sig(&[0.0, 2.0]), &fd(), &lin_cfg(0.25)).unwrap();
        // (I - tau K^T K) u with K = [[-1, 1], [0, 0]].
        let m = dense(&fd(), 2);
        let want = (DMatrix::identity(2, 2) - 0.25 * m.transpose() * &m) * DVector::from_vec(vec![0.0, 2.0]);
        assert_eq!(out.data(), want.as_slice());
        assert_eq!(out.data(), &[0.5, 1.5]);
        let v = sig(&[1.0, -4.0, 2.5]);
        assert_eq!(explicit_step(&v, &fd(), &lin_cfg(0.0)).unwrap(), v);
    }

    #[test]
    fn stability_bound_examples() {
        let r = stability_bound(&KernelBank::identity(1), 16, &FluxFunction::linear()).unwrap();
        assert!((r.tau_max - 2.0).abs() < 1e-12);
        let r = stability_bound(&KernelBank::zeros(1, 1), 16, &FluxFunction::linear()).unwrap();
        assert_eq!(r.tau_max, f64::INFINITY);
        let pm = FluxFunction::new(FluxKind::PeronaMalik, 3.0).unwrap();
        let r = stability_bound(&fd(), 64, &pm).unwrap();
        let s = dense(&fd(), 64).singular_values().max();
        assert!((r.tau_max - 2.0 / (s * s)).abs() < 1e-10);
        assert!((r.alpha_min - s * s / 4.0).abs() < 1e-10);
    }

    #[test]
    fn gershgorin_examples() {
        assert_eq!(gershgorin_rescale(&fd()).unwrap().taps(), &[0.0, -0.5, 0.5]);
        assert_eq!(gershgorin_rescale(&KernelBank::identity(1)).unwrap(), KernelBank::identity(1));
        let k2 = gershgorin_rescale(&KernelBank::identity(2)).unwrap();
        let want = KernelBank::identity(2).scaled(1.0 / 2f64.sqrt());
        assert_eq!(k2, want);
        assert!(spectral_norm(&k2, 32).unwrap() <= 1.0 + 1e-12);
        let z = KernelBank::zeros(2, 2);
        assert_eq!(gershgorin_rescale(&z).unwrap(), z);
        assert!(gershgorin_rescale(&KernelBank::zeros(1, 2)).is_err());
    }

    #[test]
    fn shift_kernel_needs_more_than_row_sums() {
        // A pure shift has unit row sums but norm above 1 under reflecting boundaries.
        let k = KernelBank::single([1.0, 0.0, 0.0]);
        assert!(spectral_norm(&k, 16).unwrap() > 1.4);
        assert!(spectral_norm(&gershgorin_rescale(&k).unwrap(), 16).unwrap() <= 1.0);
    }

    #[test]
    fn df_reduces_to_explicit() {
        let u = sig(&[0.0, 2.0, 5.0, -1.0, 3.0]);
        let um = sig(&[1.0, 1.0, 1.0, 1.0, 1.0]);
        let pm = FluxFunction::new(FluxKind::PeronaMalik, 2.0).unwrap();
        for tau in [0.25, 0.1, 0.3] {
            let cfg = SchemeConfig {
                alpha: 0.5 / tau,
                ..SchemeConfig::explicit(tau, pm)
            };
            let a = dufort_frankel_step(&u, &um, &fd(), &cfg).unwrap();
            let b = explicit_step(&u, &fd(), &cfg).unwrap();
            assert!(max_diff(&a, &b) <= 1e-14);
        }
    }

    #[test]
    fn df_example_and_partition() {
        let cfg = SchemeConfig {
            alpha: 1.0,
            ..lin_cfg(0.1)
        };
        let out = dufort_frankel_step(&sig(&[0.0, 2.0]), &sig(&[1.0, 1.0]), &fd(), &cfg).unwrap();
        // Inner explicit step of size 1/2 maps (0,2) to (1,1); weights 1/3 and 2/3.
        let want = [1.0 / 3.0 * 1.0 + 2.0 / 3.0, 1.0 / 3.0 * 1.0 + 2.0 / 3.0];
        for (a, b) in out.data().iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
        for (tau, alpha) in [(0.1, 1.0), (3.7, 0.01), (1e-3, 1e4), (0.7, 0.9)] {
            let (c1, c2) = df_coefficients(tau, alpha);
            assert_eq!(c1 + c2, 1.0);
        }
        let c = SignalBundle::constant(1, 6, 2.0);
        assert_eq!(dufort_frankel_step(&c, &c, &fd(), &cfg).unwrap(), c);
    }

    #[test]
    fn df_eigenvalue_examples() {
        let mu = df_multistep_eigenvalues(0.0, 0.5, 1.0);
        assert_eq!(mu[0].norm(), 0.0);
        assert_eq!(mu[1].norm(), 0.0);
        let (tau, alpha) = (2.0, 1.0);
        let gamma = df_gamma(0.0, tau, alpha);
        let mu = df_multistep_eigenvalues(gamma, tau, alpha);
        let ta = 2.0 * tau * alpha;
        assert!((mu[0].re - 1.0).abs() < 1e-14 && mu[0].im == 0.0);
        assert!((mu[1].re - (ta - 1.0) / (ta + 1.0)).abs() < 1e-14);
    }

    #[test]
    fn df_eigenvalues_match_companion_matrix() {
        for &(gamma, tau, alpha) in &[(0.3, 0.2, 1.5), (-1.2, 1.0, 0.8), (1.9, 4.0, 2.0), (0.0, 0.1, 0.1)] {
            let q = (1.0 - 2.0 * tau * alpha) / (1.0 + 2.0 * tau * alpha);
            let oracle = Matrix2::new(gamma, q, 1.0, 0.0).complex_eigenvalues();
            let mut got: Vec<Complex64> = df_multistep_eigenvalues(gamma, tau, alpha).to_vec();
            let mut want: Vec<Complex64> = oracle.iter().map(|c| Complex64::new(c.re, c.im)).collect();
            let key = |c: &Complex64| (c.re, c.im);
            got.sort_by(|a, b| key(a).partial_cmp(&key(b)).unwrap());
            want.sort_by(|a, b| key(a).partial_cmp(&key(b)).unwrap());
            for (a, b) in got.iter().zip(&want) {
                assert!((a - b).norm() < 1e-12, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn fsi_examples() {
        assert_eq!(fsi_weights(3), vec![2.0 / 3.0, 6.0 / 5.0, 10.0 / 7.0]);
        let u = sig(&[0.0, 2.0, 5.0, -1.0]);
        let cfg = SchemeConfig {
            cycle_len: 1,
            ..lin_cfg(0.2)
        };
        let e = explicit_step(&u, &fd(), &cfg).unwrap();
        let got = fsi_cycle(&u, &fd(), &cfg).unwrap();
        for i in 0..4 {
            let want = 2.0 / 3.0 * e.data()[i] + (1.0 - 2.0 / 3.0) * u.data()[i];
            assert!((got.data()[i] - want).abs() < 1e-15);
        }
        let c = SignalBundle::constant(1, 5, -3.0);
        let cfg5 = SchemeConfig { cycle_len: 5, ..cfg };
        assert_eq!(fsi_cycle(&c, &fd(), &cfg5).unwrap(), c);
    }

    #[test]
    fn fsi_unit_weights_chain_explicit_steps() {
        let u = sig(&[0.0, 2.0, 5.0, -1.0, 7.0, 7.5]);
        let pm = FluxFunction::new(FluxKind::PeronaMalik, 2.0).unwrap();
        let cfg = SchemeConfig::explicit(0.2, pm);
        let got = fsi_cycle_with_weights(&u, &fd(), 0.2, &pm, &[1.0; 4]).unwrap();
        let mut want = u.clone();
        for _ in 0..4 {
            want = explicit_step(&want, &fd(), &cfg).unwrap();
        }
        assert!(max_diff(&got, &want) <= 1e-12);
    }

    #[test]
    fn fsi_weights_increase_below_two() {
        let w = fsi_weights(200);
        assert!(w.windows(2).all(|p| p[0] < p[1]));
        assert!(w.iter().all(|&a| a < 2.0));
    }

    #[test]
    fn implicit_examples() {
        let u = sig(&[0.0, 2.0, 5.0, -1.0]);
        let ch = FluxFunction::new(FluxKind::Charbonnier, 1.5).unwrap();
        let cfg = SchemeConfig::explicit(0.3, ch);
        let a = implicit_fixed_point(&u, &fd(), &cfg).unwrap();
        let b = explicit_step(&u, &fd(), &cfg).unwrap();
        assert!(max_diff(&a, &b) <= 1e-14);
        let zero = KernelBank::zeros(1, 1);
        let cfg9 = SchemeConfig { cycle_len: 9, ..cfg };
        assert_eq!(implicit_fixed_point(&u, &zero, &cfg9).unwrap(), u);
    }

    #[test]
    fn implicit_linear_matches_direct_solve() {
        let u = sig(&[0.0, 2.0, 5.0, -1.0, 4.0, 4.0, 1.0, 0.5]);
        let cfg = SchemeConfig {
            cycle_len: 50,
            ..lin_cfg(0.05)
        };
        let got = implicit_fixed_point(&u, &fd(), &cfg).unwrap();
        let m = dense(&fd(), 8);
        let a = DMatrix::identity(8, 8) + 0.05 * m.transpose() * &m;
        let want = a.lu().solve(&DVector::from_row_slice(u.data())).unwrap();
        for (x, y) in got.data().iter().zip(want.iter()) {
            assert!((x - y).abs() <= 1e-8);
        }
    }

    #[test]
    fn implicit_divergence_is_reported() {
        let u = sig(&[0.0, 2.0, 5.0, -1.0, 4.0]);
        let cfg = SchemeConfig {
            cycle_len: 200,
            ..lin_cfg(5.0)
        };
        assert!(matches!(implicit_fixed_point(&u, &fd(), &cfg), Err(Error::Numerical(_))));
    }

    #[test]
    fn energy_examples() {
        let lin = Penaliser::new(FluxKind::Linear, 1.0).unwrap();
        assert_eq!(energy_eval(&SignalBundle::constant(1, 4, 9.0), &fd(), &lin).unwrap(), 0.0);
        assert_eq!(energy_eval(&sig(&[0.0, 2.0]), &fd(), &lin).unwrap(), 4.0);
    }

    #[test]
    fn dff_solver_with_half_coupling_matches_explicit_run() {
        let u = sig(&[10.0, 12.0, 50.0, 48.0, 47.0, 90.0, 91.0]);
        let pm = FluxFunction::new(FluxKind::PeronaMalik, 5.0).unwrap();
        let cfg = SchemeConfig {
            alpha: 0.5 / 0.2,
            ..SchemeConfig::explicit(0.2, pm)
        };
        let a = run_scheme(Scheme::DuFortFrankel, &u, &fd(), &cfg, 12).unwrap();
        let b = run_scheme(Scheme::Explicit, &u, &fd(), &cfg, 12).unwrap();
        assert!(max_diff(&a, &b) <= 1e-12);
        assert_eq!(run_scheme(Scheme::Fsi, &u, &fd(), &cfg, 0).unwrap(), u);
    }

    // Random instances for the stability properties: kernel taps, signal and tau fraction.
    fn instance() -> impl Strategy<Value = (usize, usize, Vec<f64>, Vec<f64>, f64, f64, usize)> {
        (1usize..=3, 2usize..=24).prop_flat_map(|(c, n)| {
            (
                Just(c),
                Just(n),
                prop::collection::vec(-1.0f64..1.0, c * c * 3),
                prop::collection::vec(-50.0f64..50.0, c * n),
                0.0f64..=1.0,
                0.1f64..40.0,
                0usize..4,
            )
        })
    }

    fn flux_of(i: usize, lambda: f64) -> FluxFunction {
        FluxFunction::new(FluxKind::ALL[i], lambda).unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]

        #[test]
        fn explicit_step_contracts((c, n, taps, u, frac, lambda, fi) in instance()) {
            let k = KernelBank::new(c, c, taps).unwrap();
            let f = flux_of(fi, lambda);
            let tau_max = stability_bound(&k, n, &f).unwrap().tau_max;
            let tau = if tau_max.is_finite() { frac * tau_max } else { frac };
            let u = SignalBundle::new(c, n, u).unwrap();
            let out = explicit_step(&u, &k, &SchemeConfig::explicit(tau, f)).unwrap();
            prop_assert!(out.norm() <= u.norm() * (1.0 + 1e-12));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(500))]

        #[test]
        fn linearised_operator_spectrum_in_unit_interval((c, n, taps, u, frac, lambda, fi) in instance()) {
            let fi = fi % 3;
            let k = KernelBank::new(c, c, taps).unwrap();
            let f = flux_of(fi, lambda);
            let tau_max = stability_bound(&k, n, &f).unwrap().tau_max;
            let tau = if tau_max.is_finite() { frac * tau_max } else { frac };
            let m = dense(&k, n);
            let ku = &m * DVector::from_row_slice(&u);
            let g = DMatrix::from_diagonal(&ku.map(|s| f.diffusivity(s * s).unwrap()));
            let a = DMatrix::identity(c * n, c * n) - tau * m.transpose() * g * &m;
            let eig = a.symmetric_eigenvalues();
            for e in eig.iter() {
                prop_assert!(*e >= -1.0 - 1e-10 && *e <= 1.0 + 1e-10, "eigenvalue {}", e);
            }
        }

        #[test]
        fn explicit_step_does_not_increase_energy((c, n, taps, u, frac, lambda, fi) in instance()) {
            let fi = fi % 3;
            let k = KernelBank::new(c, c, taps).unwrap();
            let f = flux_of(fi, lambda);
            let tau_max = stability_bound(&k, n, &f).unwrap().tau_max;
            let tau = if tau_max.is_finite() { frac * tau_max } else { frac };
            let u: Vec<f64> = u.iter().map(|v| v / 50.0).collect();
            let u = SignalBundle::new(c, n, u).unwrap();
            let p = Penaliser::from(f);
            let out = explicit_step(&u, &k, &SchemeConfig::explicit(tau, f)).unwrap();
            let e0 = energy_eval(&u, &k, &p).unwrap();
            let e1 = energy_eval(&out, &k, &p).unwrap();
            prop_assert!(e1 <= e0 + 1e-10, "{} > {}", e1, e0);
        }

        #[test]
        fn zero_sum_kernels_preserve_mean(t0 in -1.0f64..1.0, t1 in -1.0f64..1.0, u in prop::collection::vec(0.0f64..255.0, 2..64), frac in 0.0f64..1.0, fi in 0usize..4) {
            let k = KernelBank::single([t0, t1, -(t0 + t1)]);
            let n = u.len();
            let f = flux_of(fi, 10.0);
            let tau_max = stability_bound(&k, n, &f).unwrap().tau_max;
            let tau = if tau_max.is_finite() { frac * tau_max } else { frac };
            let u = SignalBundle::from_samples(u).unwrap();
            let out = explicit_step(&u, &k, &SchemeConfig::explicit(tau, f)).unwrap();
            let s0: f64 = u.data().iter().sum();
            let s1: f64 = out.data().iter().sum();
            prop_assert!((s0 - s1).abs() <= 1e-10 * s0.abs().max(1.0));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn dufort_frankel_stays_bounded(
            (c, n, taps, u, _frac, lambda, fi) in instance(),
            tau in 0.01f64..20.0,
            alpha_extra in 0.0f64..2.0,
        ) {
            let fi = fi % 3;
            let k = gershgorin_rescale(&KernelBank::new(c, c, taps).unwrap()).unwrap();
            let f = flux_of(fi, lambda);
            let cfg = SchemeConfig { alpha: f.lipschitz() / 4.0 + alpha_extra, ..SchemeConfig::explicit(tau, f) };
            let u0 = SignalBundle::new(c, n, u).unwrap();
            let start = SchemeConfig { tau: tau.min(1.0 / (2.0 * cfg.alpha)), ..cfg };
            let u1 = explicit_step(&u0, &k, &start).unwrap();
            let bound = 10.0 * u0.norm().max(u1.norm());
            let (mut prev, mut cur) = (u0, u1);
            for _ in 0..500 {
                let next = dufort_frankel_step(&cur, &prev, &k, &cfg).unwrap();
                prev = std::mem::replace(&mut cur, next);
                prop_assert!(cur.norm() <= bound + 1e-12);
            }
        }

        #[test]
        fn df_eigenvalues_inside_unit_disc(rho in 1e-3f64..8.0, tau in 1e-3f64..50.0, extra in 0.0f64..3.0, t in 0.0f64..=1.0) {
            let alpha = rho / 4.0 + extra;
            let lambda = t * rho;
            let gamma = df_gamma(lambda, tau, alpha);
            for mu in df_multistep_eigenvalues(gamma, tau, alpha) {
                prop_assert!(mu.norm() <= 1.0 + 1e-12, "|mu| = {}", mu.norm());
            }
        }
    }
}
