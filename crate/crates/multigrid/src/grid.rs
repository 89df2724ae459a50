//! Problems, solver state, grid transfers and the level hierarchy.

use diffnet_core::image::Image2D;
use diffnet_core::{Error, Result};

use crate::tensor::TensorModel;

/// Inpainting with edge-enhancing diffusion: known pixels (`mask = 1`) keep the data `f`, the
/// rest satisfy the steady-state diffusion equation.
#[derive(Debug, Clone, PartialEq)]
pub struct InpaintingProblem {
    /// Only the values under the mask are ever read.
    pub f: Image2D,
    pub mask: Image2D,
    pub lambda: f64,
    /// Presmoothing scale in units of the grid spacing of level 0.
    pub sigma: f64,
    pub model: TensorModel,
}

impl InpaintingProblem {
    pub fn new(f: Image2D, mask: Image2D, lambda: f64, sigma: f64) -> Result<Self> {
        let p = Self {
            f,
            mask,
            lambda,
            sigma,
            model: TensorModel::Eed,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_model(mut self, model: TensorModel) -> Self {
        self.model = model;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.f.check_same_shape(&self.mask)?;
        if self.mask.data().iter().any(|&m| m != 0.0 && m != 1.0) {
            return Err(Error::Domain("mask entries must be 0 or 1".into()));
        }
        if !self.mask.data().contains(&1.0) {
            return Err(Error::Domain("mask has no known pixel".into()));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("contrast parameter must be positive, got {}", self.lambda)));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::Config(format!("sigma must be >= 0, got {}", self.sigma)));
        }
        Ok(())
    }

    pub fn shape(&self) -> (usize, usize) {
        self.f.shape()
    }

    /// Grid spacing, taken from the data image.
    pub fn h(&self) -> f64 {
        self.f.h
    }

    /// Right-hand side `c f` of the equation `A(u) = c f`.
    pub fn rhs(&self) -> Image2D {
        self.mask.zip_map(&self.f, |c, f| c * f).with_h(self.h())
    }

    /// Known data, with unknown pixels set to the mean of the known ones.
    pub fn initial_guess(&self) -> Image2D {
        let (mut sum, mut count) = (0.0, 0.0);
        for (c, f) in self.mask.data().iter().zip(self.f.data()) {
            sum += c * f;
            count += c;
        }
        let mean = sum / count;
        self.mask
            .zip_map(&self.f, |c, f| if c == 1.0 { f } else { mean })
            .with_h(self.h())
    }
}

/// The four channels carried by the FAS cycle: iterate `x`, nonlinear right-hand side `y`,
/// linear right-hand side `b` and residual `r = A(y) + b - A(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverState {
    pub x: Image2D,
    pub y: Image2D,
    pub b: Image2D,
    pub r: Image2D,
}

impl SolverState {
    /// The original problem `A(x) = c f`: `y = 0`, `b = c f`, `r` not yet computed.
    pub fn for_problem(prob: &InpaintingProblem, x: Image2D) -> Result<Self> {
        x.check_same_shape(&prob.f)?;
        let (hgt, w) = prob.shape();
        let h = prob.h();
        Ok(Self {
            x: x.with_h(h),
            y: Image2D::zeros(hgt, w).with_h(h),
            b: prob.rhs(),
            r: Image2D::zeros(hgt, w).with_h(h),
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        self.x.shape()
    }
}

fn coarse_dims(h: usize, w: usize) -> (usize, usize) {
    (h.div_ceil(2), w.div_ceil(2))
}

/// Mean over each 2x2 cell (fewer pixels in the last row or column for odd sizes).
pub fn restrict_image(fine: &Image2D) -> Image2D {
    restrict_weighted(fine, None)
}

/// Mean of `fine` over the pixels of each 2x2 cell with positive `weight`; cells without any
/// such pixel get 0.
fn restrict_weighted(fine: &Image2D, weight: Option<&Image2D>) -> Image2D {
    let (fh, fw) = fine.shape();
    let (ch, cw) = coarse_dims(fh, fw);
    let mut out = Image2D::from_fn(ch, cw, |i, j| {
        let (mut sum, mut count) = (0.0, 0.0);
        for y in 2 * i..(2 * i + 2).min(fh) {
            for x in 2 * j..(2 * j + 2).min(fw) {
                let wgt = weight.map_or(1.0, |m| m.get(y, x));
                sum += wgt * fine.get(y, x);
                count += wgt;
            }
        }
        if count > 0.0 {
            sum / count
        } else {
            0.0
        }
    });
    out.h = 2.0 * fine.h;
    out
}

/// A coarse pixel is known if any pixel of its cell is.
pub fn restrict_mask(fine: &Image2D) -> Image2D {
    let (fh, fw) = fine.shape();
    let (ch, cw) = coarse_dims(fh, fw);
    let mut out = Image2D::from_fn(ch, cw, |i, j| {
        let any = (2 * i..(2 * i + 2).min(fh)).any(|y| (2 * j..(2 * j + 2).min(fw)).any(|x| fine.get(y, x) != 0.0));
        f64::from(u8::from(any))
    });
    out.h = 2.0 * fine.h;
    out
}

/// Nearest-neighbour prolongation: every fine pixel copies its coarse cell.
pub fn prolong(coarse: &Image2D, fine_shape: (usize, usize)) -> Result<Image2D> {
    let (fh, fw) = fine_shape;
    if coarse_dims(fh, fw) != coarse.shape() {
        return Err(Error::Dimension(format!(
            "cannot prolong {:?} to {fh}x{fw}",
            coarse.shape()
        )));
    }
    let mut out = Image2D::from_fn(fh, fw, |y, x| coarse.get(y / 2, x / 2));
    out.h = coarse.h / 2.0;
    Ok(out)
}

/// Rediscretised problems on successively coarser grids. Level 0 is the input.
#[derive(Debug, Clone, PartialEq)]
pub struct GridHierarchy {
    pub levels: Vec<InpaintingProblem>,
}

impl GridHierarchy {
    /// At most `max_levels` levels, stopping before either dimension would drop below
    /// `min_dim`. Coarse data is the mean over the known pixels of each cell.
    pub fn build(prob: &InpaintingProblem, max_levels: usize, min_dim: usize) -> Result<Self> {
        prob.validate()?;
        if max_levels == 0 {
            return Err(Error::Config("hierarchy needs at least one level".into()));
        }
        let mut levels = vec![prob.clone()];
        while levels.len() < max_levels {
            let last = levels.last().expect("non-empty");
            let (h, w) = last.shape();
            let (ch, cw) = coarse_dims(h, w);
            if ch < min_dim || cw < min_dim || (ch, cw) == (h, w) {
                break;
            }
            let coarse = InpaintingProblem {
                f: restrict_weighted(&last.f, Some(&last.mask)),
                mask: restrict_mask(&last.mask),
                ..last.clone()
            };
            levels.push(coarse);
        }
        Ok(Self { levels })
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    /// Pixels of level `l` relative to level 0.
    pub fn relative_size(&self, l: usize) -> f64 {
        self.levels[l].f.len() as f64 / self.levels[0].f.len() as f64
    }
}
