//! Dense, independently assembled linear multigrid for homogeneous-diffusion inpainting.

use diffnet_core::image::Image2D;
use diffnet_multigrid::{
    cg_reference_solve, fas_two_grid, random_mask, CgConfig, CycleConfig, GridHierarchy, InpaintingProblem,
    SolverState, TensorModel,
};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `C + (I - C) L` where `L` is the graph Laplacian with weight `1/h^2` on interior edges and
/// half that on edges along the image boundary.
fn dense_operator(mask: &[f64], hgt: usize, wid: usize, h: f64) -> DMatrix<f64> {
    let n = hgt * wid;
    let mut lap = DMatrix::zeros(n, n);
    let mut add_edge = |i: usize, j: usize, w: f64| {
        lap[(i, i)] += w;
        lap[(j, j)] += w;
        lap[(i, j)] -= w;
        lap[(j, i)] -= w;
    };
    for y in 0..hgt {
        for x in 0..wid {
            let i = y * wid + x;
            if x + 1 < wid {
                let on_border = y == 0 || y == hgt - 1;
                add_edge(i, i + 1, if on_border { 0.5 } else { 1.0 } / (h * h));
            }
            if y + 1 < hgt {
                let on_border = x == 0 || x == wid - 1;
                add_edge(i, i + wid, if on_border { 0.5 } else { 1.0 } / (h * h));
            }
        }
    }
    let mut a = lap;
    for i in 0..n {
        if mask[i] == 1.0 {
            a.row_mut(i).fill(0.0);
            a[(i, i)] = 1.0;
        }
    }
    a
}

/// Cell averaging and replication matrices between `hgt x wid` and its halved grid.
fn transfers(hgt: usize, wid: usize) -> (DMatrix<f64>, DMatrix<f64>, usize, usize) {
    let (ch, cw) = ((hgt + 1) / 2, (wid + 1) / 2);
    let mut r = DMatrix::zeros(ch * cw, hgt * wid);
    let mut p = DMatrix::zeros(hgt * wid, ch * cw);
    for y in 0..hgt {
        for x in 0..wid {
            let c = (y / 2) * cw + x / 2;
            p[(y * wid + x, c)] = 1.0;
        }
    }
    for c in 0..ch * cw {
        let members: Vec<usize> = (0..hgt * wid).filter(|&i| p[(i, c)] == 1.0).collect();
        for &i in &members {
            r[(c, i)] = 1.0 / members.len() as f64;
        }
    }
    (r, p, ch, cw)
}

fn jacobi(a: &DMatrix<f64>, x: &mut DVector<f64>, b: &DVector<f64>, mask: &[f64], omega: f64, sweeps: usize) {
    for _ in 0..sweeps {
        let res = b - a * &*x;
        for i in 0..x.len() {
            let w = if mask[i] == 1.0 { 1.0 } else { omega };
            x[i] += w * res[i] / a[(i, i)];
        }
    }
}

fn linear_two_grid(prob: &InpaintingProblem, x0: &Image2D, cfg: &CycleConfig) -> DVector<f64> {
    let (hgt, wid) = prob.shape();
    let mask = prob.mask.data();
    let a = dense_operator(mask, hgt, wid, prob.h());
    let b = DVector::from_iterator(hgt * wid, mask.iter().zip(prob.f.data()).map(|(c, f)| c * f));
    let mut x = DVector::from_column_slice(x0.data());
    jacobi(&a, &mut x, &b, mask, cfg.omega, cfg.pre_sweeps);
    let (r, p, ch, cw) = transfers(hgt, wid);
    let coarse_mask: Vec<f64> = (0..ch * cw)
        .map(|c| if (0..hgt * wid).any(|i| p[(i, c)] == 1.0 && mask[i] == 1.0) { 1.0 } else { 0.0 })
        .collect();
    let a_coarse = dense_operator(&coarse_mask, ch, cw, 2.0 * prob.h());
    let rc = &r * (&b - &a * &x);
    let mut e = DVector::zeros(ch * cw);
    jacobi(&a_coarse, &mut e, &rc, &coarse_mask, cfg.omega, cfg.coarse_sweeps);
    x += &p * e;
    jacobi(&a, &mut x, &b, mask, cfg.omega, cfg.post_sweeps);
    x
}

fn random_problem(hgt: usize, wid: usize, seed: u64) -> (InpaintingProblem, Image2D) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f = Image2D::from_fn(hgt, wid, |_, _| rng.random_range(0.0..255.0));
    let x0 = Image2D::from_fn(hgt, wid, |_, _| rng.random_range(0.0..255.0));
    let density = rng.random_range(0.05..0.6);
    let mask = random_mask(hgt, wid, density, seed).unwrap();
    let prob = InpaintingProblem::new(f, mask, 0.93, 0.97).unwrap().with_model(TensorModel::Identity);
    (prob, x0)
}

#[test]
fn fas_reduces_to_linear_two_grid() {
    let shapes = [(8, 8), (9, 12), (16, 16), (13, 7), (10, 15), (12, 12), (7, 9), (16, 11), (6, 6), (14, 14)];
    for (k, &(hgt, wid)) in shapes.iter().enumerate() {
        let (prob, x0) = random_problem(hgt, wid, k as u64);
        let cfg = CycleConfig {
            pre_sweeps: 1 + k % 3,
            post_sweeps: 3,
            coarse_sweeps: 20 + 5 * k,
            omega: 0.8,
        };
        let hier = GridHierarchy::build(&prob, 2, 2).unwrap();
        assert_eq!(hier.len(), 2);
        let state = SolverState::for_problem(&prob, x0.clone()).unwrap();
        let fas = fas_two_grid(&state, &hier.levels[0], &hier.levels[1], &cfg).unwrap();
        let oracle = linear_two_grid(&prob, &x0, &cfg);
        let diff = fas.x.data().iter().zip(oracle.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(diff <= 1e-10, "problem {k} ({hgt}x{wid}): max difference {diff:e}");
    }
}

#[test]
fn cg_matches_a_direct_solve() {
    for seed in 0..3 {
        let (prob, _) = random_problem(16, 16, 100 + seed);
        let a = dense_operator(prob.mask.data(), 16, 16, 1.0);
        let b = DVector::from_iterator(256, prob.mask.data().iter().zip(prob.f.data()).map(|(c, f)| c * f));
        let direct = a.lu().solve(&b).unwrap();
        let cg = cg_reference_solve(&prob, 1e-10, &CgConfig::default()).unwrap();
        assert!(cg.converged);
        let diff = cg.solution.data().iter().zip(direct.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(diff < 1e-7, "seed {seed}: {diff:e}");
    }
}
