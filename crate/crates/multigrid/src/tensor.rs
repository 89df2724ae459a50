//! Diffusion tensors of edge-enhancing diffusion.

use std::fmt;
use std::str::FromStr;

use diffnet_core::image::Image2D;
use diffnet_core::{Error, Result};

/// How the diffusion tensor depends on the evolving image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorModel {
    /// `D = g(grad u_sigma grad u_sigma^T)` with the Charbonnier diffusivity.
    Eed,
    /// `D = I`: homogeneous diffusion, which makes the operator linear.
    Identity,
}

impl fmt::Display for TensorModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TensorModel::Eed => "eed",
            TensorModel::Identity => "identity",
        })
    }
}

impl FromStr for TensorModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "eed" => Ok(TensorModel::Eed),
            "identity" | "homogeneous" => Ok(TensorModel::Identity),
            other => Err(Error::Config(format!("unknown tensor model {other:?}"))),
        }
    }
}

/// Per-pixel symmetric tensors `[[a, b], [b, c]]`, with `a` acting on the x (column) direction.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorField {
    pub height: usize,
    pub width: usize,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
}

impl TensorField {
    pub fn identity(height: usize, width: usize) -> Self {
        let n = height * width;
        Self {
            height,
            width,
            a: vec![1.0; n],
            b: vec![0.0; n],
            c: vec![1.0; n],
        }
    }

    /// `(a, b, c)` at pixel `(y, x)`.
    pub fn at(&self, y: usize, x: usize) -> (f64, f64, f64) {
        let i = y * self.width + x;
        (self.a[i], self.b[i], self.c[i])
    }

    /// Smallest eigenvalue over all pixels.
    pub fn min_eigenvalue(&self) -> f64 {
        (0..self.a.len())
            .map(|i| {
                let (a, b, c) = (self.a[i], self.b[i], self.c[i]);
                let mean = 0.5 * (a + c);
                let rad = (0.25 * (a - c) * (a - c) + b * b).sqrt();
                mean - rad
            })
            .fold(f64::INFINITY, f64::min)
    }
}

/// Charbonnier diffusivity `1 / sqrt(1 + s2 / lambda^2)`.
pub fn charbonnier(s2: f64, lambda: f64) -> f64 {
    1.0 / (1.0 + s2 / (lambda * lambda)).sqrt()
}

fn gaussian_taps(sigma_px: f64) -> Vec<f64> {
    let radius = (3.0 * sigma_px).ceil() as usize;
    let mut taps: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let d = i as f64 - radius as f64;
            (-d * d / (2.0 * sigma_px * sigma_px)).exp()
        })
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= sum);
    taps
}

/// Mirrors an index into `0..n` (`-1 -> 0`, `n -> n - 1`).
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let mut j = i.rem_euclid(period);
    if j >= n {
        j = period - 1 - j;
    }
    j as usize
}

/// Separable Gaussian convolution with standard deviation `sigma` in pixels, sampled, truncated
/// at three standard deviations, renormalised, with mirrored boundaries. `sigma = 0` copies.
pub fn gaussian_smooth(u: &Image2D, sigma: f64) -> Image2D {
    if sigma <= 0.0 {
        return u.clone();
    }
    let taps = gaussian_taps(sigma);
    let r = (taps.len() / 2) as isize;
    let (h, w) = u.shape();
    let mut tmp = Image2D::zeros(h, w);
    for y in 0..h {
        for x in 0..w {
            let s: f64 = taps
                .iter()
                .enumerate()
                .map(|(k, t)| t * u.get(y, reflect(x as isize + k as isize - r, w)))
                .sum();
            tmp.set(y, x, s);
        }
    }
    let mut out = Image2D::zeros(h, w).with_h(u.h);
    for y in 0..h {
        for x in 0..w {
            let s: f64 = taps
                .iter()
                .enumerate()
                .map(|(k, t)| t * tmp.get(reflect(y as isize + k as isize - r, h), x))
                .sum();
            out.set(y, x, s);
        }
    }
    out
}

/// EED tensor of `u`: eigenvector `grad u_sigma` with eigenvalue `g(|grad u_sigma|^2)` and the
/// orthogonal direction with eigenvalue 1. `sigma` is in units of the grid spacing of `u`
/// multiplied by `u.h`, i.e. a physical length; gradients are central differences divided by
/// `2 u.h`.
pub fn eed_tensor(u: &Image2D, sigma: f64, lambda: f64) -> TensorField {
    let (h, w) = u.shape();
    let us = gaussian_smooth(u, sigma / u.h);
    let inv = 1.0 / (2.0 * u.h);
    let mut t = TensorField::identity(h, w);
    for y in 0..h {
        for x in 0..w {
            let gx = (us.get(y, (x + 1).min(w - 1)) - us.get(y, x.saturating_sub(1))) * inv;
            let gy = (us.get((y + 1).min(h - 1), x) - us.get(y.saturating_sub(1), x)) * inv;
            let s2 = gx * gx + gy * gy;
            if s2 == 0.0 {
                continue;
            }
            // D = I + (g - 1) v v^T / |v|^2.
            let k = (charbonnier(s2, lambda) - 1.0) / s2;
            let i = y * w + x;
            t.a[i] = 1.0 + k * gx * gx;
            t.b[i] = k * gx * gy;
            t.c[i] = 1.0 + k * gy * gy;
        }
    }
    t
}

/// The tensor of `u` under `model`.
pub fn tensor_for(model: TensorModel, u: &Image2D, sigma: f64, lambda: f64) -> TensorField {
    match model {
        TensorModel::Eed => eed_tensor(u, sigma, lambda),
        TensorModel::Identity => TensorField::identity(u.height(), u.width()),
    }
}
