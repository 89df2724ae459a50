//! Diffusivities, flux functions and penalisers: the activation catalog.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Smallest admissible contrast parameter.
pub const LAMBDA_MIN: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FluxKind {
    Linear,
    Charbonnier,
    PeronaMalik,
    Relu,
}

impl FluxKind {
    pub const ALL: [FluxKind; 4] = [
        FluxKind::Linear,
        FluxKind::Charbonnier,
        FluxKind::PeronaMalik,
        FluxKind::Relu,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FluxKind::Linear => "linear",
            FluxKind::Charbonnier => "charbonnier",
            FluxKind::PeronaMalik => "pm",
            FluxKind::Relu => "relu",
        }
    }

    /// Whether the flux has a contrast parameter.
    pub fn uses_lambda(self) -> bool {
        matches!(self, FluxKind::Charbonnier | FluxKind::PeronaMalik)
    }
}

impl fmt::Display for FluxKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FluxKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "linear" => Ok(FluxKind::Linear),
            "charbonnier" => Ok(FluxKind::Charbonnier),
            "pm" | "peronamalik" | "perona-malik" => Ok(FluxKind::PeronaMalik),
            "relu" => Ok(FluxKind::Relu),
            other => Err(Error::Config(format!(
                "unknown flux {other:?}, expected linear | charbonnier | pm | relu"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FluxFunction {
    pub kind: FluxKind,
    pub lambda: f64,
}

impl FluxFunction {
    pub fn new(kind: FluxKind, lambda: f64) -> Result<Self> {
        if kind.uses_lambda() && !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::Config(format!("{kind} flux needs lambda > 0, got {lambda}")));
        }
        Ok(Self { kind, lambda })
    }

    pub fn linear() -> Self {
        Self {
            kind: FluxKind::Linear,
            lambda: 1.0,
        }
    }

    pub fn with_lambda(self, lambda: f64) -> Self {
        Self { lambda, ..self }
    }

    /// g(s^2).
    pub fn diffusivity(&self, s2: f64) -> Result<f64> {
        if s2 < 0.0 {
            return Err(Error::Domain(format!("diffusivity needs s^2 >= 0, got {s2}")));
        }
        let l2 = self.lambda * self.lambda;
        match self.kind {
            FluxKind::Linear => Ok(1.0),
            FluxKind::Charbonnier => Ok(1.0 / (1.0 + s2 / l2).sqrt()),
            FluxKind::PeronaMalik => Ok(1.0 / (1.0 + s2 / l2)),
            FluxKind::Relu => Err(Error::UnsupportedKind("relu has no diffusivity".into())),
        }
    }

    /// Phi(s).
    #[inline]
    pub fn flux(&self, s: f64) -> f64 {
        match self.kind {
            FluxKind::Linear => s,
            FluxKind::Charbonnier => {
                let r = s / self.lambda;
                s / (1.0 + r * r).sqrt()
            }
            FluxKind::PeronaMalik => {
                let r = s / self.lambda;
                s / (1.0 + r * r)
            }
            FluxKind::Relu => s.max(0.0),
        }
    }

    /// Phi'(s). The ReLU derivative at 0 is 0.
    #[inline]
    pub fn derivative(&self, s: f64) -> f64 {
        match self.kind {
            FluxKind::Linear => 1.0,
            FluxKind::Charbonnier => {
                let r = s / self.lambda;
                let d = 1.0 + r * r;
                1.0 / (d * d.sqrt())
            }
            FluxKind::PeronaMalik => {
                let r2 = (s / self.lambda).powi(2);
                let d = 1.0 + r2;
                (1.0 - r2) / (d * d)
            }
            FluxKind::Relu => {
                if s > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// (Phi(s), Phi'(s), dPhi/dlambda(s)) in one pass.
    #[inline]
    pub fn eval_all(&self, s: f64) -> (f64, f64, f64) {
        match self.kind {
            FluxKind::Linear => (s, 1.0, 0.0),
            FluxKind::Charbonnier => {
                let r = s / self.lambda;
                let r2 = r * r;
                let d = 1.0 + r2;
                let sq = d.sqrt();
                let d32 = d * sq;
                (s / sq, 1.0 / d32, s * r2 / (self.lambda * d32))
            }
            FluxKind::PeronaMalik => {
                let r = s / self.lambda;
                let r2 = r * r;
                let d = 1.0 + r2;
                let d2 = d * d;
                (s / d, (1.0 - r2) / d2, 2.0 * s * r2 / (self.lambda * d2))
            }
            FluxKind::Relu => (self.flux(s), self.derivative(s), 0.0),
        }
    }

    /// dPhi/dlambda at s; zero for parameter-free kinds.
    pub fn lambda_derivative(&self, s: f64) -> f64 {
        self.eval_all(s).2
    }

    /// sup_s |Phi'(s)|. Equal to 1 for every kind in the catalog, attained at s = 0
    /// (or for s > 0 with ReLU).
    pub fn lipschitz(&self) -> f64 {
        1.0
    }
}

pub fn diffusivity_eval(f: &FluxFunction, s2: f64) -> Result<f64> {
    f.diffusivity(s2)
}

pub fn flux_eval(f: &FluxFunction, s: f64) -> f64 {
    f.flux(s)
}

pub fn flux_derivative(f: &FluxFunction, s: f64) -> f64 {
    f.derivative(s)
}

pub fn lipschitz_constant(f: &FluxFunction) -> f64 {
    f.lipschitz()
}

/// Psi with g = Psi'.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Penaliser {
    pub kind: FluxKind,
    pub lambda: f64,
}

impl Penaliser {
    pub fn new(kind: FluxKind, lambda: f64) -> Result<Self> {
        if kind == FluxKind::Relu {
            return Err(Error::UnsupportedKind("relu has no penaliser".into()));
        }
        FluxFunction::new(kind, lambda)?;
        Ok(Self { kind, lambda })
    }

    pub fn eval(&self, z: f64) -> Result<f64> {
        if z < 0.0 {
            return Err(Error::Domain(format!("penaliser needs s^2 >= 0, got {z}")));
        }
        let l2 = self.lambda * self.lambda;
        let x = z / l2;
        match self.kind {
            FluxKind::Linear => Ok(z),
            // 2 l^2 (sqrt(1+x) - 1), rewritten to avoid cancellation for small x.
            FluxKind::Charbonnier => Ok(2.0 * l2 * x / ((1.0 + x).sqrt() + 1.0)),
            FluxKind::PeronaMalik => Ok(l2 * x.ln_1p()),
            FluxKind::Relu => Err(Error::UnsupportedKind("relu has no penaliser".into())),
        }
    }
}

impl From<FluxFunction> for Penaliser {
    fn from(f: FluxFunction) -> Self {
        Self {
            kind: f.kind,
            lambda: f.lambda,
        }
    }
}

pub fn penaliser_eval(p: &Penaliser, s2: f64) -> Result<f64> {
    p.eval(s2)
}
