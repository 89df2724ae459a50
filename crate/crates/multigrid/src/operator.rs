//! The discrete inpainting operator `A(u) = c u + (1 - c) S_D u`.
//!
//! `S_D` discretises `-div(D grad u)` from a quadratic energy on the 2x2 cells of the grid. With
//! cell differences `t, s` (horizontal, top and bottom rows), `l, r` (vertical, left and right
//! columns), their means `X, Y` and the cell tensor `(a, b, c)` averaged from the four corners,
//! each cell contributes `a (t^2 + s^2) / 2 + 2 b X Y + c (l^2 + r^2) / 2` to twice the
//! energy. The stencil is 3x3, symmetric, positive semidefinite for PSD tensors, annihilates
//! constants, and reduces to the 5-point Laplacian in the interior for `D = I`.

use diffnet_core::image::Image2D;
use diffnet_core::{Error, Result};

use crate::grid::{InpaintingProblem, SolverState};
use crate::tensor::{tensor_for, TensorField};

/// Cell tensors: the mean of the four corner tensors of every 2x2 cell, `(h-1) x (w-1)` of them.
fn cell_tensors(t: &TensorField) -> Vec<(f64, f64, f64)> {
    let (h, w) = (t.height, t.width);
    let mut out = Vec::with_capacity(h.saturating_sub(1) * w.saturating_sub(1));
    for y in 0..h.saturating_sub(1) {
        for x in 0..w - 1 {
            let (i00, i01, i10, i11) = (y * w + x, y * w + x + 1, (y + 1) * w + x, (y + 1) * w + x + 1);
            let avg = |v: &[f64]| 0.25 * (v[i00] + v[i01] + v[i10] + v[i11]);
            out.push((avg(&t.a), avg(&t.b), avg(&t.c)));
        }
    }
    out
}

/// `S_D u` for the tensor field `t`.
pub fn apply_stencil(u: &Image2D, t: &TensorField) -> Image2D {
    let (h, w) = u.shape();
    let inv_h = 1.0 / u.h;
    let mut out = Image2D::zeros(h, w).with_h(u.h);
    if h < 2 || w < 2 {
        return out;
    }
    let cells = cell_tensors(t);
    let d = u.data();
    let o = out.data_mut();
    for y in 0..h - 1 {
        for x in 0..w - 1 {
            let (a, b, c) = cells[y * (w - 1) + x];
            let (p00, p01, p10, p11) = (y * w + x, y * w + x + 1, (y + 1) * w + x, (y + 1) * w + x + 1);
            // x runs along columns: t on the top row, s on the bottom row.
            let tt = (d[p01] - d[p00]) * inv_h;
            let ss = (d[p11] - d[p10]) * inv_h;
            let ll = (d[p10] - d[p00]) * inv_h;
            let rr = (d[p11] - d[p01]) * inv_h;
            let gx = 0.5 * (tt + ss);
            let gy = 0.5 * (ll + rr);
            // Derivatives of the cell energy with respect to t, s, l, r.
            let et = 0.5 * a * tt + 0.5 * b * gy;
            let es = 0.5 * a * ss + 0.5 * b * gy;
            let el = 0.5 * c * ll + 0.5 * b * gx;
            let er = 0.5 * c * rr + 0.5 * b * gx;
            o[p00] -= (et + el) * inv_h;
            o[p01] += (et - er) * inv_h;
            o[p10] += (el - es) * inv_h;
            o[p11] += (es + er) * inv_h;
        }
    }
    out
}

/// Diagonal of `S_D`.
pub fn stencil_diagonal(t: &TensorField, h_spacing: f64) -> Vec<f64> {
    let (h, w) = (t.height, t.width);
    let mut diag = vec![0.0; h * w];
    if h < 2 || w < 2 {
        return diag;
    }
    let k = 0.5 / (h_spacing * h_spacing);
    for (idx, (a, b, c)) in cell_tensors(t).into_iter().enumerate() {
        let (y, x) = (idx / (w - 1), idx % (w - 1));
        diag[y * w + x] += k * (a + b + c);
        diag[y * w + x + 1] += k * (a - b + c);
        diag[(y + 1) * w + x] += k * (a - b + c);
        diag[(y + 1) * w + x + 1] += k * (a + b + c);
    }
    diag
}

/// `A(u) = c u + (1 - c) S_D u` with the tensor supplied.
pub fn apply_operator_with(u: &Image2D, mask: &Image2D, t: &TensorField) -> Image2D {
    let s = apply_stencil(u, t);
    let mut out = u.zip_map(mask, |v, c| c * v);
    out.data_mut()
        .iter_mut()
        .zip(mask.data().iter().zip(s.data()))
        .for_each(|(o, (c, sv))| *o += (1.0 - c) * sv);
    out.with_h(u.h)
}

/// Tensor of `u` for the problem's model and scales.
pub fn problem_tensor(u: &Image2D, prob: &InpaintingProblem) -> TensorField {
    tensor_for(prob.model, u, prob.sigma, prob.lambda)
}

/// The nonlinear operator `A(u)`, with the tensor computed from `u` itself.
pub fn apply_operator(u: &Image2D, prob: &InpaintingProblem) -> Result<Image2D> {
    u.check_same_shape(&prob.mask)?;
    Ok(apply_operator_with(u, &prob.mask, &problem_tensor(u, prob)))
}

/// `(A(y) + b) - A(u)`.
pub fn eed_residual(u: &Image2D, prob: &InpaintingProblem, y: &Image2D, b: &Image2D) -> Result<Image2D> {
    u.check_same_shape(y)?;
    u.check_same_shape(b)?;
    let ay = apply_operator(y, prob)?;
    let au = apply_operator(u, prob)?;
    let mut r = b.clone().with_h(u.h);
    r.data_mut()
        .iter_mut()
        .zip(ay.data().iter().zip(au.data()))
        .for_each(|(r, (p, q))| *r += p - q);
    Ok(r)
}

/// Right-hand side `A(y) + b` of a solver state.
pub(crate) fn state_rhs(state: &SolverState, prob: &InpaintingProblem) -> Result<Image2D> {
    let mut rhs = apply_operator(&state.y, prob)?;
    rhs.data_mut().iter_mut().zip(state.b.data()).for_each(|(r, b)| *r += b);
    Ok(rhs)
}

/// Residual of the original equation `A(u) = c f`.
pub fn equation_residual(u: &Image2D, prob: &InpaintingProblem) -> Result<Image2D> {
    let au = apply_operator(u, prob)?;
    Ok(prob.rhs().zip_map(&au, |r, a| r - a).with_h(u.h))
}

/// Mean absolute value.
pub fn residual_norm(r: &Image2D) -> f64 {
    r.mean_abs()
}

/// Euclidean norm.
pub fn residual_l2(r: &Image2D) -> f64 {
    r.data().iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub(crate) fn check_diagonal(diag: &[f64]) -> Result<()> {
    if let Some(i) = diag.iter().position(|&d| !(d > 0.0)) {
        return Err(Error::Numerical(format!("zero diagonal entry at pixel {i}")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{eed_tensor, TensorModel};
    use nalgebra::{DMatrix, DVector};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_image(h: usize, w: usize, seed: u64) -> Image2D {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image2D::from_fn(h, w, |_, _| rng.random_range(0.0..255.0))
    }

    fn rand_mask(h: usize, w: usize, seed: u64, density: f64) -> Image2D {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = Image2D::from_fn(h, w, |_, _| f64::from(u8::from(rng.random_bool(density))));
        m.set(0, 0, 1.0);
        m
    }

    /// Dense `S_D` assembled cell by cell from the gradients of the difference quotients.
    fn dense_stencil(t: &TensorField, hs: f64) -> DMatrix<f64> {
        let (h, w) = (t.height, t.width);
        let n = h * w;
        let mut m = DMatrix::zeros(n, n);
        let unit = |pairs: &[(usize, f64)]| {
            let mut v = DVector::zeros(n);
            for &(i, s) in pairs {
                v[i] += s / hs;
            }
            v
        };
        for y in 0..h - 1 {
            for x in 0..w - 1 {
                let (p00, p01, p10, p11) = (y * w + x, y * w + x + 1, (y + 1) * w + x, (y + 1) * w + x + 1);
                let corners = [p00, p01, p10, p11];
                let avg = |v: &[f64]| corners.iter().map(|&i| v[i]).sum::<f64>() / 4.0;
                let (a, b, c) = (avg(&t.a), avg(&t.b), avg(&t.c));
                let gt = unit(&[(p01, 1.0), (p00, -1.0)]);
                let gs = unit(&[(p11, 1.0), (p10, -1.0)]);
                let gl = unit(&[(p10, 1.0), (p00, -1.0)]);
                let gr = unit(&[(p11, 1.0), (p01, -1.0)]);
                let gx = (&gt + &gs) * 0.5;
                let gy = (&gl + &gr) * 0.5;
                m += (&gt * gt.transpose() + &gs * gs.transpose()) * (a / 2.0)
                    + (&gx * gy.transpose() + &gy * gx.transpose()) * b
                    + (&gl * gl.transpose() + &gr * gr.transpose()) * (c / 2.0);
            }
        }
        m
    }

    #[test]
    fn stencil_matches_dense_assembly() {
        let u = rand_image(8, 8, 1).with_h(0.7);
        let t = eed_tensor(&rand_image(8, 8, 2), 0.8, 5.0);
        let dense = dense_stencil(&t, 0.7);
        let got = apply_stencil(&u, &t);
        let want = &dense * DVector::from_row_slice(u.data());
        for (g, w) in got.data().iter().zip(want.iter()) {
            assert!((g - w).abs() <= 1e-9 * (1.0 + w.abs()));
        }
        let diag = stencil_diagonal(&t, 0.7);
        for i in 0..64 {
            assert!((diag[i] - dense[(i, i)]).abs() <= 1e-12 * (1.0 + dense[(i, i)].abs()));
        }
        // Symmetric and PSD.
        assert!((&dense - dense.transpose()).abs().max() < 1e-12);
        let eig = dense.symmetric_eigenvalues();
        assert!(eig.min() > -1e-9 * eig.max());
    }

    #[test]
    fn operator_matches_dense_assembly() {
        let u = rand_image(8, 8, 3);
        let f = rand_image(8, 8, 4);
        let mask = rand_mask(8, 8, 5, 0.3);
        let prob = InpaintingProblem::new(f, mask.clone(), 3.0, 1.0).unwrap();
        let t = problem_tensor(&u, &prob);
        let s = dense_stencil(&t, 1.0);
        let cm = DMatrix::from_diagonal(&DVector::from_row_slice(mask.data()));
        let a = &cm + (DMatrix::identity(64, 64) - &cm) * s;
        let want = a * DVector::from_row_slice(u.data());
        let got = apply_operator(&u, &prob).unwrap();
        for (g, w) in got.data().iter().zip(want.iter()) {
            assert!((g - w).abs() <= 1e-9 * (1.0 + w.abs()));
        }
    }

    #[test]
    fn identity_tensor_gives_five_point_laplacian() {
        let u = Image2D::from_fn(7, 7, |y, x| (x * x + 3 * y * y) as f64);
        let s = apply_stencil(&u, &TensorField::identity(7, 7));
        for y in 1..6 {
            for x in 1..6 {
                // -(u_xx + u_yy) = -(2 + 6).
                assert!((s.get(y, x) + 8.0).abs() < 1e-12);
            }
        }
        let d = stencil_diagonal(&TensorField::identity(7, 7), 1.0);
        assert_eq!(d[3 * 7 + 3], 4.0);
        // Boundary edges lie in a single cell and carry half weight.
        assert_eq!(d[0], 1.0);
    }

    #[test]
    fn residual_examples() {
        let f = rand_image(6, 6, 7);
        let zero = Image2D::zeros(6, 6);
        let full = InpaintingProblem::new(f.clone(), Image2D::constant(6, 6, 1.0), 1.0, 1.0).unwrap();
        assert_eq!(equation_residual(&f, &full).unwrap().mean_abs(), 0.0);
        let cf = full.rhs();
        assert_eq!(eed_residual(&f, &full, &zero, &cf).unwrap().mean_abs(), 0.0);

        let k = Image2D::constant(6, 6, 9.0);
        let partial = InpaintingProblem::new(k.clone(), rand_mask(6, 6, 8, 0.4), 0.5, 1.0).unwrap();
        assert!(equation_residual(&k, &partial).unwrap().mean_abs() < 1e-12);
        // y = 0, b = 0 gives minus the operator.
        let r = eed_residual(&f, &partial, &zero, &zero).unwrap();
        let a = apply_operator(&f, &partial).unwrap();
        assert!(r.data().iter().zip(a.data()).all(|(r, a)| (r + a).abs() < 1e-12));
    }

    #[test]
    fn residual_norm_examples() {
        assert_eq!(residual_norm(&Image2D::zeros(3, 3)), 0.0);
        assert_eq!(residual_norm(&Image2D::constant(4, 4, 1.0)), 1.0);
        let r = Image2D::new(1, 4, vec![1.0, -2.0, 3.0, -6.0]).unwrap();
        assert_eq!(residual_norm(&r), 3.0);
    }

    #[test]
    fn linear_model_is_linear() {
        let mask = rand_mask(9, 7, 9, 0.2);
        let prob = InpaintingProblem::new(Image2D::zeros(9, 7), mask, 1.0, 1.0)
            .unwrap()
            .with_model(TensorModel::Identity);
        let (u, v) = (rand_image(9, 7, 10), rand_image(9, 7, 11));
        let sum = u.zip_map(&v, |a, b| 2.0 * a - b);
        let lhs = apply_operator(&sum, &prob).unwrap();
        let (au, av) = (apply_operator(&u, &prob).unwrap(), apply_operator(&v, &prob).unwrap());
        for i in 0..lhs.len() {
            assert!((lhs.data()[i] - (2.0 * au.data()[i] - av.data()[i])).abs() < 1e-9);
        }
    }

    proptest! {
        #[test]
        fn stencil_rows_sum_to_zero(seed in 0u64..300, lambda in 0.1f64..20.0) {
            let t = eed_tensor(&rand_image(6, 7, seed), 1.0, lambda);
            let s = apply_stencil(&Image2D::constant(6, 7, 123.0), &t);
            prop_assert!(s.data().iter().all(|v| v.abs() < 1e-9));
        }

        #[test]
        fn stencil_energy_is_nonnegative(seed in 0u64..300, lambda in 0.1f64..20.0) {
            let t = eed_tensor(&rand_image(6, 7, seed), 0.5, lambda);
            let u = rand_image(6, 7, seed + 1000);
            let s = apply_stencil(&u, &t);
            let e: f64 = s.data().iter().zip(u.data()).map(|(a, b)| a * b).sum();
            prop_assert!(e >= -1e-9);
        }
    }
}
