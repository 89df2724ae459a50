//! Synthetic piecewise-affine signals with jumps, plus additive Gaussian noise.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::signal::{read_signals_csv, write_signals_csv, SignalBundle};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetConfig {
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub len: usize,
    pub noise_sigma: f64,
    pub value_range: (f64, f64),
    pub seg_min_frac: f64,
    pub seg_max_frac: f64,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            n_train: 10_000,
            n_val: 1000,
            n_test: 1000,
            len: 256,
            noise_sigma: 10.0,
            value_range: (0.0, 255.0),
            seg_min_frac: 0.1,
            seg_max_frac: 0.5,
            seed: 0,
        }
    }
}

impl DatasetConfig {
    /// Segment length bounds in samples: `ceil(N * min_frac)` and `floor(N * max_frac)`.
    pub fn segment_bounds(&self) -> (usize, usize) {
        let lo = (self.len as f64 * self.seg_min_frac).ceil().max(1.0) as usize;
        let hi = (self.len as f64 * self.seg_max_frac).floor() as usize;
        (lo, hi)
    }

    pub fn validate(&self) -> Result<()> {
        if self.len < 2 {
            return Err(Error::Config("signal length must be >= 2".into()));
        }
        let (lo, hi) = self.segment_bounds();
        if lo > hi || hi > self.len || lo == 0 {
            return Err(Error::Config(format!(
                "segment fractions give an empty length range [{lo}, {hi}] for N={}",
                self.len
            )));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Config(format!("noise sigma must be >= 0, got {}", self.noise_sigma)));
        }
        if !(self.value_range.0 <= self.value_range.1) {
            return Err(Error::Config("value range is empty".into()));
        }
        Ok(())
    }
}

/// Clean signals and their noisy observations, index-aligned.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SignalPairs {
    pub clean: Vec<SignalBundle>,
    pub noisy: Vec<SignalBundle>,
}

impl SignalPairs {
    pub fn len(&self) -> usize {
        self.clean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clean.is_empty()
    }

    /// The first `n` pairs.
    pub fn head(&self, n: usize) -> SignalPairs {
        let n = n.min(self.len());
        SignalPairs {
            clean: self.clean[..n].to_vec(),
            noisy: self.noisy[..n].to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub train: SignalPairs,
    pub val: SignalPairs,
    pub test: SignalPairs,
}

/// Segment lengths covering exactly `len` samples, all within `[lo, hi]`.
fn segment_lengths(rng: &mut impl Rng, len: usize, lo: usize, hi: usize) -> Vec<usize> {
    loop {
        let mut lens = Vec::new();
        let mut total = 0;
        while total < len {
            let l = rng.random_range(lo..=hi);
            lens.push(l);
            total += l;
        }
        let last = lens.last_mut().expect("at least one segment");
        *last -= total - len;
        if *last >= lo {
            return lens;
        }
    }
}

/// One clean signal: affine segments with independent endpoint values, so every segment
/// boundary is a jump.
pub fn clean_signal(rng: &mut impl Rng, cfg: &DatasetConfig) -> SignalBundle {
    let (lo, hi) = cfg.segment_bounds();
    let (vmin, vmax) = cfg.value_range;
    let mut data = Vec::with_capacity(cfg.len);
    for l in segment_lengths(rng, cfg.len, lo, hi) {
        let a = rng.random_range(vmin..=vmax);
        let b = rng.random_range(vmin..=vmax);
        if l == 1 {
            data.push(a);
        } else {
            let d = (l - 1) as f64;
            data.extend((0..l).map(|i| a + (b - a) * (i as f64 / d)));
        }
    }
    SignalBundle::new(1, cfg.len, data).expect("finite samples")
}

fn split(cfg: &DatasetConfig, stream: u64, count: usize) -> SignalPairs {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(stream);
    let normal = Normal::new(0.0, cfg.noise_sigma.max(0.0)).expect("valid sigma");
    let mut out = SignalPairs::default();
    for _ in 0..count {
        let clean = clean_signal(&mut rng, cfg);
        let noisy = if cfg.noise_sigma == 0.0 {
            clean.clone()
        } else {
            let data = clean.data().iter().map(|&v| v + normal.sample(&mut rng)).collect();
            SignalBundle::new(1, cfg.len, data).expect("finite samples")
        };
        out.clean.push(clean);
        out.noisy.push(noisy);
    }
    out
}

/// Deterministic in `cfg.seed`. Each split draws from its own random stream, so changing one
/// split's size leaves the others unchanged. Noise is not clipped.
pub fn generate_dataset(cfg: &DatasetConfig) -> Result<Dataset> {
    cfg.validate()?;
    Ok(Dataset {
        train: split(cfg, 1, cfg.n_train),
        val: split(cfg, 2, cfg.n_val),
        test: split(cfg, 3, cfg.n_test),
    })
}

pub const SPLITS: [&str; 3] = ["train", "val", "test"];

pub fn write_dataset(dir: &Path, data: &Dataset) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (name, pairs) in SPLITS.iter().zip([&data.train, &data.val, &data.test]) {
        write_signals_csv(&dir.join(format!("{name}.csv")), &pairs.noisy)?;
        write_signals_csv(&dir.join(format!("{name}_clean.csv")), &pairs.clean)?;
    }
    Ok(())
}

pub fn read_split(dir: &Path, name: &str) -> Result<SignalPairs> {
    let noisy = read_signals_csv(&dir.join(format!("{name}.csv")), 1)?;
    let clean = read_signals_csv(&dir.join(format!("{name}_clean.csv")), 1)?;
    if noisy.len() != clean.len() {
        return Err(Error::Parse(format!(
            "{name}: {} noisy signals but {} clean ones",
            noisy.len(),
            clean.len()
        )));
    }
    for (a, b) in noisy.iter().zip(&clean) {
        a.check_same_shape(b)?;
    }
    Ok(SignalPairs { clean, noisy })
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    Ok(Dataset {
        train: read_split(dir, "train")?,
        val: read_split(dir, "val")?,
        test: read_split(dir, "test")?,
    })
}
