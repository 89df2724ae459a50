//! Multi-channel 1D signals, width-3 kernel banks and their convolutions.
//!
//! Boundaries are reflecting: `u[-1] = u[0]` and `u[N] = u[N-1]`. The adjoint is the exact
//! transpose of the resulting matrix, so `<Ku, v> = <u, K^T v>` holds for every `N >= 2`.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Kernel width. Wider kernels are rejected at construction.
pub const KERNEL_WIDTH: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct SignalBundle {
    data: Vec<f64>,
    channels: usize,
    len: usize,
    pub h: f64,
}

impl SignalBundle {
    /// `data` is channel-major: channel `c` occupies `data[c*len..(c+1)*len]`.
    pub fn new(channels: usize, len: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 || len < 2 {
            return Err(Error::Dimension(format!(
                "signal needs C >= 1 and N >= 2, got C={channels}, N={len}"
            )));
        }
        if data.len() != channels * len {
            return Err(Error::Dimension(format!(
                "expected {} samples for C={channels}, N={len}, got {}",
                channels * len,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("non-finite sample at index {i}")));
        }
        Ok(Self {
            data,
            channels,
            len,
            h: 1.0,
        })
    }

    pub fn from_samples(samples: Vec<f64>) -> Result<Self> {
        let len = samples.len();
        Self::new(1, len, samples)
    }

    pub fn zeros(channels: usize, len: usize) -> Self {
        assert!(channels >= 1 && len >= 2, "invalid signal shape");
        Self {
            data: vec![0.0; channels * len],
            channels,
            len,
            h: 1.0,
        }
    }

    pub fn constant(channels: usize, len: usize, value: f64) -> Self {
        let mut s = Self::zeros(channels, len);
        s.data.fill(value);
        s
    }

    /// Wraps raw data without the finiteness scan. Shape must already be valid.
    pub(crate) fn from_raw(channels: usize, len: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), channels * len);
        Self {
            data,
            channels,
            len,
            h: 1.0,
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        &self.data[c * self.len..(c + 1) * self.len]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        &mut self.data[c * self.len..(c + 1) * self.len]
    }

    pub fn same_shape(&self, other: &SignalBundle) -> bool {
        self.channels == other.channels && self.len == other.len
    }

    pub fn check_same_shape(&self, other: &SignalBundle) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::Dimension(format!(
                "shape ({}, {}) vs ({}, {})",
                self.channels, self.len, other.channels, other.len
            )))
        }
    }

    pub fn dot(&self, other: &SignalBundle) -> f64 {
        dot(&self.data, &other.data)
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Copies every channel of a single-channel signal into `channels` channels.
    pub fn lift(&self, channels: usize) -> Result<SignalBundle> {
        if self.channels != 1 {
            return Err(Error::Dimension(format!(
                "lifting expects one channel, got {}",
                self.channels
            )));
        }
        let mut data = Vec::with_capacity(channels * self.len);
        for _ in 0..channels {
            data.extend_from_slice(&self.data);
        }
        let mut out = SignalBundle::from_raw(channels, self.len, data);
        out.h = self.h;
        Ok(out)
    }

    /// Average over channels.
    pub fn channel_mean(&self) -> SignalBundle {
        let mut out = vec![0.0; self.len];
        for c in 0..self.channels {
            for (o, v) in out.iter_mut().zip(self.channel(c)) {
                *o += v;
            }
        }
        let inv = 1.0 / self.channels as f64;
        if self.channels > 1 {
            out.iter_mut().for_each(|v| *v *= inv);
        }
        let mut s = SignalBundle::from_raw(1, self.len, out);
        s.h = self.h;
        s
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// A bank of `c_out x c_in` width-3 kernels.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelBank {
    taps: Vec<f64>,
    c_out: usize,
    c_in: usize,
    pub h: f64,
}

impl KernelBank {
    /// `taps[(o*c_in + c)*3 + t]` is tap `t` of the kernel from input `c` to output `o`.
    pub fn new(c_out: usize, c_in: usize, taps: Vec<f64>) -> Result<Self> {
        if c_out == 0 || c_in == 0 {
            return Err(Error::Dimension("kernel bank needs at least one channel".into()));
        }
        if taps.len() != c_out * c_in * KERNEL_WIDTH {
            return Err(Error::Dimension(format!(
                "expected {} taps ({c_out}x{c_in} kernels of width {KERNEL_WIDTH}), got {}",
                c_out * c_in * KERNEL_WIDTH,
                taps.len()
            )));
        }
        if taps.iter().any(|t| !t.is_finite()) {
            return Err(Error::Numerical("non-finite kernel tap".into()));
        }
        Ok(Self {
            taps,
            c_out,
            c_in,
            h: 1.0,
        })
    }

    /// Builds a bank from per-kernel tap lists; any width other than 3 is rejected.
    pub fn from_kernels(c_out: usize, c_in: usize, kernels: &[Vec<f64>]) -> Result<Self> {
        if kernels.len() != c_out * c_in {
            return Err(Error::Dimension(format!(
                "expected {} kernels, got {}",
                c_out * c_in,
                kernels.len()
            )));
        }
        let mut taps = Vec::with_capacity(kernels.len() * KERNEL_WIDTH);
        for k in kernels {
            if k.len() != KERNEL_WIDTH {
                return Err(Error::Config(format!(
                    "kernel width {} not supported, only {KERNEL_WIDTH}",
                    k.len()
                )));
            }
            taps.extend_from_slice(k);
        }
        Self::new(c_out, c_in, taps)
    }

    pub fn single(taps: [f64; 3]) -> Self {
        Self::new(1, 1, taps.to_vec()).expect("finite taps")
    }

    pub fn zeros(c_out: usize, c_in: usize) -> Self {
        Self {
            taps: vec![0.0; c_out * c_in * KERNEL_WIDTH],
            c_out,
            c_in,
            h: 1.0,
        }
    }

    /// Identity tap (0,1,0) on the diagonal.
    pub fn identity(channels: usize) -> Self {
        let mut k = Self::zeros(channels, channels);
        for c in 0..channels {
            k.taps[(c * channels + c) * KERNEL_WIDTH + 1] = 1.0;
        }
        k
    }

    pub fn c_out(&self) -> usize {
        self.c_out
    }

    pub fn c_in(&self) -> usize {
        self.c_in
    }

    pub fn is_square(&self) -> bool {
        self.c_out == self.c_in
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    pub fn taps_mut(&mut self) -> &mut [f64] {
        &mut self.taps
    }

    pub fn kernel(&self, o: usize, c: usize) -> [f64; 3] {
        let b = (o * self.c_in + c) * KERNEL_WIDTH;
        [self.taps[b], self.taps[b + 1], self.taps[b + 2]]
    }

    pub fn scaled(&self, s: f64) -> KernelBank {
        let mut k = self.clone();
        k.taps.iter_mut().for_each(|t| *t *= s);
        k
    }

    pub fn is_zero(&self) -> bool {
        self.taps.iter().all(|&t| t == 0.0)
    }
}

#[inline]
fn check_input(u: &SignalBundle, channels: usize, what: &str) -> Result<()> {
    if u.channels() != channels {
        return Err(Error::Dimension(format!(
            "{what}: signal has {} channels, kernel bank expects {channels}",
            u.channels()
        )));
    }
    Ok(())
}

/// Computes `Ku` with reflecting boundaries.
pub fn conv_apply(u: &SignalBundle, k: &KernelBank) -> Result<SignalBundle> {
    check_input(u, k.c_in, "conv_apply")?;
    let mut out = vec![0.0; k.c_out * u.len()];
    conv_into(u.data(), u.len(), k, &mut out);
    let mut s = SignalBundle::from_raw(k.c_out, u.len(), out);
    s.h = u.h;
    Ok(s)
}

/// Computes `K^T v`, the exact transpose of [`conv_apply`].
pub fn conv_adjoint_apply(v: &SignalBundle, k: &KernelBank) -> Result<SignalBundle> {
    check_input(v, k.c_out, "conv_adjoint_apply")?;
    let mut out = vec![0.0; k.c_in * v.len()];
    conv_adjoint_into(v.data(), v.len(), k, &mut out);
    let mut s = SignalBundle::from_raw(k.c_in, v.len(), out);
    s.h = v.h;
    Ok(s)
}

/// Slice form of [`conv_apply`]; `out` is overwritten.
pub fn conv_into(u: &[f64], n: usize, k: &KernelBank, out: &mut [f64]) {
    debug_assert!(n >= 2);
    out.fill(0.0);
    for o in 0..k.c_out {
        let y = &mut out[o * n..(o + 1) * n];
        for c in 0..k.c_in {
            let [k0, k1, k2] = k.kernel(o, c);
            let x = &u[c * n..(c + 1) * n];
            y[0] += k0 * x[0] + k1 * x[0] + k2 * x[1];
            for i in 1..n - 1 {
                y[i] += k0 * x[i - 1] + k1 * x[i] + k2 * x[i + 1];
            }
            y[n - 1] += k0 * x[n - 2] + k1 * x[n - 1] + k2 * x[n - 1];
        }
    }
}

/// Slice form of [`conv_adjoint_apply`]; `out` is overwritten.
pub fn conv_adjoint_into(v: &[f64], n: usize, k: &KernelBank, out: &mut [f64]) {
    debug_assert!(n >= 2);
    out.fill(0.0);
    for c in 0..k.c_in {
        let y = &mut out[c * n..(c + 1) * n];
        for o in 0..k.c_out {
            let [k0, k1, k2] = k.kernel(o, c);
            let x = &v[o * n..(o + 1) * n];
            y[0] += k0 * (x[0] + x[1]) + k1 * x[0];
            for j in 1..n - 1 {
                y[j] += k0 * x[j + 1] + k1 * x[j] + k2 * x[j - 1];
            }
            y[n - 1] += k1 * x[n - 1] + k2 * (x[n - 2] + x[n - 1]);
        }
    }
}

/// Accumulates `grad[o][c][t] += scale * sum_i y_o[i] * x_c[mirror(i+t-1)]`,
/// the derivative of `<y, Kx>` with respect to the taps of `K`.
pub fn conv_kernel_grad(x: &[f64], y: &[f64], n: usize, c_out: usize, c_in: usize, scale: f64, grad: &mut [f64]) {
    for o in 0..c_out {
        let yo = &y[o * n..(o + 1) * n];
        for c in 0..c_in {
            let xc = &x[c * n..(c + 1) * n];
            let mut g0 = yo[0] * xc[0];
            let mut g1 = 0.0;
            let mut g2 = yo[n - 1] * xc[n - 1];
            for i in 0..n {
                g1 += yo[i] * xc[i];
            }
            for i in 1..n {
                g0 += yo[i] * xc[i - 1];
            }
            for i in 0..n - 1 {
                g2 += yo[i] * xc[i + 1];
            }
            let b = (o * c_in + c) * KERNEL_WIDTH;
            grad[b] += scale * g0;
            grad[b + 1] += scale * g1;
            grad[b + 2] += scale * g2;
        }
    }
}

/// Dense row-major matrix, used as a test oracle.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseOperator {
    pub matrix: Vec<f64>,
    pub rows: usize,
    pub cols: usize,
}

impl DenseOperator {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            matrix: vec![0.0; rows * cols],
            rows,
            cols,
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.matrix[i * n + i] = 1.0;
        }
        m
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.matrix[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.matrix[r * self.cols + c] = v;
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols);
        self.matrix
            .chunks_exact(self.cols)
            .map(|row| dot(row, x))
            .collect()
    }

    pub fn transpose(&self) -> DenseOperator {
        let mut t = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.matrix[c * self.rows + r] = self.get(r, c);
            }
        }
        t
    }

    pub fn matmul(&self, other: &DenseOperator) -> DenseOperator {
        assert_eq!(self.cols, other.rows);
        let mut m = Self::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(r, k);
                if a == 0.0 {
                    continue;
                }
                for c in 0..other.cols {
                    m.matrix[r * other.cols + c] += a * other.get(k, c);
                }
            }
        }
        m
    }

    /// Multiplies row `r` by `d[r]`, i.e. computes `diag(d) * self`.
    pub fn scale_rows(&self, d: &[f64]) -> DenseOperator {
        let mut m = self.clone();
        for (r, row) in m.matrix.chunks_exact_mut(self.cols).enumerate() {
            row.iter_mut().for_each(|v| *v *= d[r]);
        }
        m
    }

    pub fn lin_comb(&self, a: f64, other: &DenseOperator, b: f64) -> DenseOperator {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let mut m = self.clone();
        for (x, y) in m.matrix.iter_mut().zip(&other.matrix) {
            *x = a * *x + b * y;
        }
        m
    }
}

#[inline]
fn mirror(i: isize, n: usize) -> usize {
    i.clamp(0, n as isize - 1) as usize
}

/// Assembles the matrix of `conv_apply(., k)` on length-`n` signals, indexed channel-major.
pub fn dense_operator_of(k: &KernelBank, n: usize) -> DenseOperator {
    assert!(n >= 2, "dense operator needs N >= 2");
    let mut m = DenseOperator::zeros(k.c_out * n, k.c_in * n);
    for o in 0..k.c_out {
        for i in 0..n {
            let r = o * n + i;
            for c in 0..k.c_in {
                let taps = k.kernel(o, c);
                for (t, &w) in taps.iter().enumerate() {
                    let j = mirror(i as isize + t as isize - 1, n);
                    m.matrix[r * m.cols + c * n + j] += w;
                }
            }
        }
    }
    m
}

const LANCZOS_TOL: f64 = 1e-11;
const MAX_LANCZOS: usize = 10_000;

/// `||K||_2` on length-`n` signals, by fully reorthogonalised Lanczos on `K^T K`.
pub fn spectral_norm(k: &KernelBank, n: usize) -> Result<f64> {
    if n < 2 {
        return Err(Error::Dimension("spectral norm needs N >= 2".into()));
    }
    if k.is_zero() {
        return Ok(0.0);
    }
    let dim = k.c_in * n;
    let start = default_start(dim);
    let res = lanczos_top(k, n, &start, MAX_LANCZOS.min(dim + 1), LANCZOS_TOL);
    if !res.converged {
        return Err(Error::Numerical(format!(
            "spectral norm did not converge after {} Lanczos steps",
            res.steps
        )));
    }
    Ok(res.theta.max(0.0).sqrt())
}

/// Warm-started spectral norm estimates for a kernel that changes slowly, as in training.
///
/// Each call runs at most `max_steps` Lanczos steps from the previous Ritz vector. The estimate
/// is a lower bound of the true norm.
#[derive(Debug, Clone, Default)]
pub struct SpectralWarmStart {
    vector: Vec<f64>,
}

impl SpectralWarmStart {
    pub fn estimate(&mut self, k: &KernelBank, n: usize, max_steps: usize) -> f64 {
        if k.is_zero() {
            return 0.0;
        }
        let dim = k.c_in * n;
        if self.vector.len() != dim {
            self.vector = default_start(dim);
        }
        let res = lanczos_top(k, n, &self.vector, max_steps.clamp(1, dim + 1), LANCZOS_TOL);
        if res.ritz.iter().all(|v| v.is_finite()) && res.ritz.iter().any(|&v| v != 0.0) {
            self.vector = res.ritz;
        }
        res.theta.max(0.0).sqrt()
    }
}

fn default_start(dim: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_1dea);
    (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()
}

struct LanczosResult {
    theta: f64,
    ritz: Vec<f64>,
    converged: bool,
    steps: usize,
}

fn normalize(v: &mut [f64]) -> f64 {
    let nrm = dot(v, v).sqrt();
    if nrm > 0.0 {
        v.iter_mut().for_each(|x| *x /= nrm);
    }
    nrm
}

fn top_eig(alpha: &[f64], beta: &[f64]) -> (f64, Vec<f64>) {
    let m = alpha.len();
    let t = DMatrix::from_fn(m, m, |i, j| {
        if i == j {
            alpha[i]
        } else if i + 1 == j {
            beta[i]
        } else if j + 1 == i {
            beta[j]
        } else {
            0.0
        }
    });
    let eig = SymmetricEigen::new(t);
    let (idx, &theta) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty tridiagonal");
    (theta, eig.eigenvectors.column(idx).iter().copied().collect())
}

fn lanczos_top(k: &KernelBank, n: usize, start: &[f64], max_steps: usize, tol: f64) -> LanczosResult {
    let dim = start.len();
    let mut q0 = start.to_vec();
    if normalize(&mut q0) == 0.0 {
        q0 = default_start(dim);
        normalize(&mut q0);
    }
    let mut basis: Vec<Vec<f64>> = vec![q0];
    let mut alpha = Vec::new();
    let mut beta = Vec::new();
    let mut ku = vec![0.0; k.c_out * n];
    let mut w = vec![0.0; dim];
    let mut theta = 0.0;
    let mut y = vec![1.0];
    let mut converged = false;
    for step in 0..max_steps {
        let q = &basis[step];
        conv_into(q, n, k, &mut ku);
        conv_adjoint_into(&ku, n, k, &mut w);
        let a = dot(q, &w);
        alpha.push(a);
        // Two passes of classical Gram-Schmidt against the whole basis.
        for _ in 0..2 {
            for b in basis.iter() {
                let p = dot(b, &w);
                w.iter_mut().zip(b).for_each(|(x, bv)| *x -= p * bv);
            }
        }
        let b_next = dot(&w, &w).sqrt();
        let m = alpha.len();
        let check = m <= 32 || m % (m / 8).max(1) == 0 || step + 1 == max_steps || m == dim;
        let scale = alpha.iter().fold(0.0f64, |acc, v| acc.max(v.abs())).max(f64::MIN_POSITIVE);
        let breakdown = b_next <= 1e-13 * scale;
        if check || breakdown {
            let (t, yv) = top_eig(&alpha, &beta);
            theta = t;
            y = yv;
            let resid = (b_next * y[m - 1]).abs();
            if breakdown || resid <= tol * theta.abs().max(f64::MIN_POSITIVE) || m == dim {
                converged = true;
                break;
            }
        }
        beta.push(b_next);
        let mut next = w.clone();
        next.iter_mut().for_each(|x| *x /= b_next);
        basis.push(next);
    }
    let mut ritz = vec![0.0; dim];
    for (yi, b) in y.iter().zip(&basis) {
        ritz.iter_mut().zip(b).for_each(|(r, bv)| *r += yi * bv);
    }
    LanczosResult {
        theta,
        ritz,
        converged,
        steps: alpha.len(),
    }
}

fn format_float(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else if v.is_nan() {
        "nan".into()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

/// Float formatting shared by every text artifact: 17 significant digits, `inf` for infinities.
pub fn fmt_f64(v: f64) -> String {
    format_float(v)
}

/// Parses floats written by [`fmt_f64`].
pub fn parse_f64(s: &str) -> Result<f64> {
    match s.trim() {
        "inf" => Ok(f64::INFINITY),
        "-inf" => Ok(f64::NEG_INFINITY),
        t => t
            .parse::<f64>()
            .map_err(|e| Error::Parse(format!("bad number {t:?}: {e}"))),
    }
}

/// Writes one signal per line, channel-major, comma-separated.
pub fn write_signals_csv(path: &Path, signals: &[SignalBundle]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for s in signals {
        let line: Vec<String> = s.data().iter().map(|&v| format_float(v)).collect();
        writeln!(w, "{}", line.join(",")).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_signals_csv(path: &Path, channels: usize) -> Result<Vec<SignalBundle>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let values = line
            .split(',')
            .map(parse_f64)
            .collect::<Result<Vec<f64>>>()
            .map_err(|e| Error::Parse(format!("{}:{}: {e}", path.display(), lineno + 1)))?;
        if values.len() % channels != 0 {
            return Err(Error::Parse(format!(
                "{}:{}: {} values do not split into {channels} channels",
                path.display(),
                lineno + 1,
                values.len()
            )));
        }
        let len = values.len() / channels;
        out.push(SignalBundle::new(channels, len, values)?);
    }
    Ok(out)
}
