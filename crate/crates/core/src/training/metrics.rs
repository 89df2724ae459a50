use crate::error::{Error, Result};
use crate::signal::SignalBundle;

/// Peak value of the signal range.
pub const PEAK: f64 = 255.0;

pub fn mse(a: &SignalBundle, b: &SignalBundle) -> Result<f64> {
    a.check_same_shape(b)?;
    Ok(mse_raw(a.data(), b.data()))
}

pub(crate) fn mse_raw(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

/// `10 log10(255^2 / mse)`; `+inf` for identical signals.
pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (PEAK * PEAK / mse).log10()
    }
}

pub fn psnr(a: &SignalBundle, b: &SignalBundle) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?))
}

/// PSNR of the mean MSE over a set of signals.
pub fn pooled_psnr(outputs: &[SignalBundle], refs: &[SignalBundle]) -> Result<f64> {
    Ok(psnr_from_mse(mean_mse(outputs, refs)?))
}

pub fn mean_mse(outputs: &[SignalBundle], refs: &[SignalBundle]) -> Result<f64> {
    if outputs.len() != refs.len() || outputs.is_empty() {
        return Err(Error::Dimension(format!(
            "{} outputs vs {} references",
            outputs.len(),
            refs.len()
        )));
    }
    let mut total = 0.0;
    for (a, b) in outputs.iter().zip(refs) {
        total += mse(a, b)?;
    }
    Ok(total / outputs.len() as f64)
}

/// Mean of the per-signal PSNR values.
pub fn mean_psnr(outputs: &[SignalBundle], refs: &[SignalBundle]) -> Result<f64> {
    if outputs.len() != refs.len() || outputs.is_empty() {
        return Err(Error::Dimension(format!(
            "{} outputs vs {} references",
            outputs.len(),
            refs.len()
        )));
    }
    let mut total = 0.0;
    for (a, b) in outputs.iter().zip(refs) {
        total += psnr(a, b)?;
    }
    Ok(total / outputs.len() as f64)
}
