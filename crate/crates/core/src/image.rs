//! Row-major 2D images and binary PGM (P5) input/output.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Image2D {
    data: Vec<f64>,
    height: usize,
    width: usize,
    pub h: f64,
}

impl Image2D {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height < 1 || width < 1 {
            return Err(Error::Dimension(format!("image shape {height}x{width} is empty")));
        }
        if data.len() != height * width {
            return Err(Error::Dimension(format!(
                "expected {} pixels for {height}x{width}, got {}",
                height * width,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite pixel".into()));
        }
        Ok(Self {
            data,
            height,
            width,
            h: 1.0,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::constant(height, width, 0.0)
    }

    pub fn constant(height: usize, width: usize, value: f64) -> Self {
        assert!(height >= 1 && width >= 1);
        Self {
            data: vec![value; height * width],
            height,
            width,
            h: 1.0,
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut img = Self::zeros(height, width);
        for y in 0..height {
            for x in 0..width {
                img.data[y * width + x] = f(y, x);
            }
        }
        img
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn with_h(mut self, h: f64) -> Self {
        self.h = h;
        self
    }

    pub fn check_same_shape(&self, other: &Image2D) -> Result<()> {
        if self.shape() == other.shape() {
            Ok(())
        } else {
            Err(Error::Dimension(format!(
                "image shape {:?} vs {:?}",
                self.shape(),
                other.shape()
            )))
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image2D {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|v| *v = f(*v));
        out
    }

    pub fn zip_map(&self, other: &Image2D, f: impl Fn(f64, f64) -> f64) -> Image2D {
        assert_eq!(self.shape(), other.shape());
        let mut out = self.clone();
        out.data
            .iter_mut()
            .zip(&other.data)
            .for_each(|(a, &b)| *a = f(*a, b));
        out
    }

    pub fn mean_abs(&self) -> f64 {
        self.data.iter().map(|v| v.abs()).sum::<f64>() / self.data.len() as f64
    }

    pub fn mean_abs_diff(&self, other: &Image2D) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / self.data.len() as f64
    }
}

/// Reads an 8-bit binary PGM.
pub fn read_pgm(path: &Path) -> Result<Image2D> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_pgm(&bytes).map_err(|e| match e {
        Error::Parse(m) => Error::Parse(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn parse_pgm(bytes: &[u8]) -> Result<Image2D> {
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() && bytes[pos] != b'#' {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Parse("truncated PGM header".into()));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    if fields[0] != "P5" {
        return Err(Error::Parse(format!("expected P5 magic, found {:?}", fields[0])));
    }
    let num = |s: &str, what: &str| {
        s.parse::<usize>()
            .map_err(|_| Error::Parse(format!("bad PGM {what} {s:?}")))
    };
    let width = num(&fields[1], "width")?;
    let height = num(&fields[2], "height")?;
    let maxval = num(&fields[3], "maxval")?;
    if maxval != 255 {
        return Err(Error::Parse(format!("only maxval 255 is supported, got {maxval}")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let n = width * height;
    if bytes.len() < pos + n {
        return Err(Error::Parse(format!(
            "raster has {} bytes, expected {n}",
            bytes.len().saturating_sub(pos)
        )));
    }
    let data = bytes[pos..pos + n].iter().map(|&b| b as f64).collect();
    Image2D::new(height, width, data)
}

/// Round half to even, clamped to [0, 255].
pub fn to_gray_u8(v: f64) -> u8 {
    v.round_ties_even().clamp(0.0, 255.0) as u8
}

pub fn encode_pgm(img: &Image2D) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(img.data().iter().map(|&v| to_gray_u8(v)));
    out
}

pub fn write_pgm(path: &Path, img: &Image2D) -> Result<()> {
    fs::write(path, encode_pgm(img)).map_err(|e| Error::io(path, e))
}
