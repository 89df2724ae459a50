//! Network forms of the schemes: symmetric ResNets (one explicit step per block), standard
//! ResNets, Du Fort-Frankel nets and FSI nets, with shared or time-dynamic parameters.

mod forward;
mod io;

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::flux::{FluxFunction, FluxKind};
use crate::schemes::StabilityMode;
use crate::signal::KernelBank;

pub use forward::{
    diffusion_block_forward, network_apply, network_forward, standard_resblock_forward, BlockTape,
    ForwardTape,
};
pub(crate) use forward::block_step;
pub use io::{parse_model, read_model, render_model, write_model};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Arch {
    ResNet,
    SymResNet,
    DfNet,
    FsiNet,
}

impl Arch {
    pub const ALL: [Arch; 4] = [Arch::ResNet, Arch::SymResNet, Arch::DfNet, Arch::FsiNet];

    pub fn name(self) -> &'static str {
        match self {
            Arch::ResNet => "resnet",
            Arch::SymResNet => "symresnet",
            Arch::DfNet => "dfnet",
            Arch::FsiNet => "fsinet",
        }
    }

    /// Architectures whose outer convolution is the negated adjoint of the inner one.
    pub fn is_symmetric(self) -> bool {
        self != Arch::ResNet
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "resnet" => Ok(Arch::ResNet),
            "symresnet" => Ok(Arch::SymResNet),
            "dfnet" | "df" => Ok(Arch::DfNet),
            "fsinet" | "fsi" => Ok(Arch::FsiNet),
            other => Err(Error::Config(format!(
                "unknown architecture {other:?}, expected resnet | symresnet | dfnet | fsinet"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Sharing {
    Shared,
    TimeDynamic,
}

impl Sharing {
    pub fn name(self) -> &'static str {
        match self {
            Sharing::Shared => "shared",
            Sharing::TimeDynamic => "time-dynamic",
        }
    }
}

impl fmt::Display for Sharing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Sharing {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "shared" => Ok(Sharing::Shared),
            "time-dynamic" | "timedynamic" | "dynamic" => Ok(Sharing::TimeDynamic),
            other => Err(Error::Config(format!(
                "unknown sharing mode {other:?}, expected shared | time-dynamic"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetworkSpec {
    pub arch: Arch,
    pub blocks: usize,
    pub channels: usize,
    pub sharing: Sharing,
    pub flux: FluxKind,
    pub stability_mode: StabilityMode,
    /// Signal length used when evaluating spectral norms for the step-size constraint.
    pub signal_len: usize,
}

impl NetworkSpec {
    pub fn new(arch: Arch, blocks: usize, channels: usize, sharing: Sharing, flux: FluxKind) -> Self {
        Self {
            arch,
            blocks,
            channels,
            sharing,
            flux,
            stability_mode: StabilityMode::SpectralExact,
            signal_len: 256,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.blocks < 1 {
            return Err(Error::Config("network needs at least one block".into()));
        }
        if self.channels < 1 {
            return Err(Error::Config("network needs at least one channel".into()));
        }
        if self.signal_len < 2 {
            return Err(Error::Config("signal length must be >= 2".into()));
        }
        Ok(())
    }

    /// Number of distinct parameter blocks stored.
    pub fn stored_blocks(&self) -> usize {
        match self.sharing {
            Sharing::Shared => 1,
            Sharing::TimeDynamic => self.blocks,
        }
    }

    /// Index of the stored parameter block used by block `b`.
    pub fn param_index(&self, b: usize) -> usize {
        match self.sharing {
            Sharing::Shared => 0,
            Sharing::TimeDynamic => b,
        }
    }

    pub fn flux_with(&self, lambda: f64) -> FluxFunction {
        FluxFunction {
            kind: self.flux,
            lambda,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams {
    /// Inner bank `K` (`W1` for the standard ResNet).
    pub kernel: KernelBank,
    /// Independent outer bank `W2`; only the standard ResNet has one.
    pub outer: Option<KernelBank>,
    pub lambda: f64,
    /// Step size of the symmetric variants; unused by the standard ResNet.
    pub tau: f64,
    /// Du Fort-Frankel weight; unused elsewhere.
    pub alpha: f64,
    pub bias_in: Vec<f64>,
    pub bias_out: Vec<f64>,
}

impl BlockParams {
    pub fn symmetric(kernel: KernelBank, lambda: f64, tau: f64) -> Self {
        Self {
            kernel,
            outer: None,
            lambda,
            tau,
            alpha: 1.0,
            bias_in: Vec::new(),
            bias_out: Vec::new(),
        }
    }

    pub fn standard(w1: KernelBank, w2: KernelBank, lambda: f64, bias_in: Vec<f64>, bias_out: Vec<f64>) -> Self {
        Self {
            kernel: w1,
            outer: Some(w2),
            lambda,
            tau: 0.0,
            alpha: 1.0,
            bias_in,
            bias_out,
        }
    }

    fn zeroed(&self) -> Self {
        Self {
            kernel: self.kernel.scaled(0.0),
            outer: self.outer.as_ref().map(|k| k.scaled(0.0)),
            lambda: 0.0,
            tau: 0.0,
            alpha: 0.0,
            bias_in: vec![0.0; self.bias_in.len()],
            bias_out: vec![0.0; self.bias_out.len()],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub blocks: Vec<BlockParams>,
    /// FSI extrapolation weight of every block (trained per block in either sharing mode).
    pub extrapolation: Vec<f64>,
}

impl NetworkParams {
    pub fn block(&self, spec: &NetworkSpec, b: usize) -> &BlockParams {
        &self.blocks[spec.param_index(b)]
    }

    /// Same layout with every value zero; used as a gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        Self {
            blocks: self.blocks.iter().map(BlockParams::zeroed).collect(),
            extrapolation: vec![0.0; self.extrapolation.len()],
        }
    }

    /// Visits every trainable scalar in canonical order.
    pub fn visit_trainable(&self, spec: &NetworkSpec, mut f: impl FnMut(&f64)) {
        let mut me = self.clone();
        me.visit_trainable_mut(spec, |v| f(v));
    }

    /// Visits every trainable scalar in canonical order: per stored block the inner kernel,
    /// the outer kernel and biases (standard ResNet), lambda (if the flux has one), tau
    /// (symmetric variants), alpha (DF); then the FSI extrapolation weights.
    pub fn visit_trainable_mut(&mut self, spec: &NetworkSpec, mut f: impl FnMut(&mut f64)) {
        for p in self.blocks.iter_mut() {
            p.kernel.taps_mut().iter_mut().for_each(&mut f);
            if spec.arch == Arch::ResNet {
                if let Some(w2) = p.outer.as_mut() {
                    w2.taps_mut().iter_mut().for_each(&mut f);
                }
                p.bias_in.iter_mut().for_each(&mut f);
                p.bias_out.iter_mut().for_each(&mut f);
            }
            if spec.flux.uses_lambda() {
                f(&mut p.lambda);
            }
            if spec.arch.is_symmetric() {
                f(&mut p.tau);
            }
            if spec.arch == Arch::DfNet {
                f(&mut p.alpha);
            }
        }
        if spec.arch == Arch::FsiNet {
            self.extrapolation.iter_mut().for_each(&mut f);
        }
    }

    pub fn flatten(&self, spec: &NetworkSpec) -> Vec<f64> {
        let mut out = Vec::new();
        self.visit_trainable(spec, |v| out.push(*v));
        out
    }

    pub fn assign_flat(&mut self, spec: &NetworkSpec, flat: &[f64]) -> Result<()> {
        let n = count_parameters(spec, self);
        if flat.len() != n {
            return Err(Error::Dimension(format!(
                "expected {n} trainable values, got {}",
                flat.len()
            )));
        }
        let mut it = flat.iter();
        self.visit_trainable_mut(spec, |v| *v = *it.next().expect("length checked"));
        Ok(())
    }
}

/// Initial values for training.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitConfig {
    /// Kernel taps are drawn from `U[-kernel_range, kernel_range]`.
    pub kernel_range: f64,
    pub lambda: f64,
    pub tau: f64,
    pub alpha: f64,
    pub extrapolation: f64,
}

impl Default for InitConfig {
    fn default() -> Self {
        Self {
            kernel_range: 0.1,
            lambda: 15.0,
            tau: 1.0,
            alpha: 1.0,
            extrapolation: 1.0,
        }
    }
}

pub fn init_params<R: Rng + ?Sized>(spec: &NetworkSpec, init: &InitConfig, rng: &mut R) -> Result<NetworkParams> {
    spec.validate()?;
    let c = spec.channels;
    let random_bank = |rng: &mut R| {
        let taps = (0..c * c * 3)
            .map(|_| {
                if init.kernel_range > 0.0 {
                    rng.random_range(-init.kernel_range..=init.kernel_range)
                } else {
                    0.0
                }
            })
            .collect();
        KernelBank::new(c, c, taps)
    };
    let mut blocks = Vec::with_capacity(spec.stored_blocks());
    for _ in 0..spec.stored_blocks() {
        let p = if spec.arch == Arch::ResNet {
            let w1 = random_bank(rng)?;
            let w2 = random_bank(rng)?;
            BlockParams::standard(w1, w2, init.lambda, vec![0.0; c], vec![0.0; c])
        } else {
            let mut p = BlockParams::symmetric(random_bank(rng)?, init.lambda, init.tau);
            p.alpha = init.alpha;
            p
        };
        blocks.push(p);
    }
    let extrapolation = if spec.arch == Arch::FsiNet {
        vec![init.extrapolation; spec.blocks]
    } else {
        Vec::new()
    };
    Ok(NetworkParams {
        blocks,
        extrapolation,
    })
}

/// Checks that `params` has the layout `spec` requires.
pub fn check_params(spec: &NetworkSpec, params: &NetworkParams) -> Result<()> {
    spec.validate()?;
    if params.blocks.len() != spec.stored_blocks() {
        return Err(Error::Config(format!(
            "{} network with {} blocks needs {} parameter blocks, got {}",
            spec.sharing,
            spec.blocks,
            spec.stored_blocks(),
            params.blocks.len()
        )));
    }
    let c = spec.channels;
    for (i, p) in params.blocks.iter().enumerate() {
        if p.kernel.c_in() != c || p.kernel.c_out() != c {
            return Err(Error::Config(format!(
                "block {i}: kernel bank is {}x{}, expected {c}x{c}",
                p.kernel.c_out(),
                p.kernel.c_in()
            )));
        }
        if spec.arch == Arch::ResNet {
            match &p.outer {
                Some(w2) if w2.c_in() == c && w2.c_out() == c => {}
                _ => {
                    return Err(Error::Config(format!(
                        "block {i}: standard ResNet needs a {c}x{c} outer bank"
                    )))
                }
            }
            if p.bias_in.len() != c || p.bias_out.len() != c {
                return Err(Error::Config(format!("block {i}: expected {c} biases per layer")));
            }
        } else if p.outer.is_some() || !p.bias_in.is_empty() || !p.bias_out.is_empty() {
            return Err(Error::Config(format!(
                "block {i}: symmetric blocks carry a single bank and no biases"
            )));
        }
    }
    let want = if spec.arch == Arch::FsiNet { spec.blocks } else { 0 };
    if params.extrapolation.len() != want {
        return Err(Error::Config(format!(
            "expected {want} extrapolation weights, got {}",
            params.extrapolation.len()
        )));
    }
    Ok(())
}

/// Number of trainable scalars.
pub fn count_parameters(spec: &NetworkSpec, params: &NetworkParams) -> usize {
    let mut n = 0;
    params.visit_trainable(spec, |_| n += 1);
    n
}

/// The bank whose convolution equals `K^T` away from the boundary: taps reversed and the
/// channel bank transposed.
pub fn mirrored_transpose(k: &KernelBank) -> KernelBank {
    let mut taps = vec![0.0; k.taps().len()];
    for o in 0..k.c_out() {
        for c in 0..k.c_in() {
            let [a, b, d] = k.kernel(o, c);
            let base = (c * k.c_out() + o) * 3;
            taps[base..base + 3].copy_from_slice(&[d, b, a]);
        }
    }
    KernelBank::new(k.c_in(), k.c_out(), taps).expect("finite taps")
}
