//! Synthetic benchmark data: a gray-value test image and random masks.

use diffnet_core::image::Image2D;
use diffnet_core::{Error, Result};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Smooth background, a disc, a rotated square and a striped patch, quantised to integers in
/// `[0, 255]`.
pub fn synthetic_image(height: usize, width: usize) -> Image2D {
    let (hf, wf) = (height as f64, width as f64);
    Image2D::from_fn(height, width, |y, x| {
        let (u, v) = ((x as f64 + 0.5) / wf, (y as f64 + 0.5) / hf);
        let mut g = 60.0 + 80.0 * u + 40.0 * v;
        let (dx, dy) = (u - 0.32, v - 0.35);
        if dx * dx + dy * dy < 0.04 {
            g = 220.0 - 60.0 * (dx * dx + dy * dy) / 0.04;
        }
        let (cx, cy) = (u - 0.68, v - 0.62);
        let (ru, rv) = ((cx + cy) / std::f64::consts::SQRT_2, (cy - cx) / std::f64::consts::SQRT_2);
        if ru.abs() < 0.15 && rv.abs() < 0.15 {
            g = 30.0;
        }
        if (0.1..0.4).contains(&u) && (0.7..0.92).contains(&v) {
            g = 128.0 + 90.0 * (u * 40.0).sin();
        }
        g.round().clamp(0.0, 255.0)
    })
}

/// A mask with exactly `round(density * n)` known pixels (at least one) at uniformly random
/// positions.
pub fn random_mask(height: usize, width: usize, density: f64, seed: u64) -> Result<Image2D> {
    if !(density > 0.0 && density <= 1.0) {
        return Err(Error::Config(format!("mask density must lie in (0, 1], got {density}")));
    }
    let n = height * width;
    if n == 0 {
        return Err(Error::Dimension("empty mask".into()));
    }
    let k = ((density * n as f64).round() as usize).clamp(1, n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mask = Image2D::zeros(height, width);
    for i in sample(&mut rng, n, k) {
        mask.data_mut()[i] = 1.0;
    }
    Ok(mask)
}
