//! Dataset synthesis, metrics, gradients, optimisation and the classical baselines.

mod adam;
mod backward;
mod baselines;
mod constraints;
mod dataset;
mod metrics;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::network::{check_params, init_params, network_apply, network_forward, InitConfig, NetworkParams, NetworkSpec};
use crate::signal::SignalBundle;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use backward::{backward, GradientSet};
pub use baselines::{classical_baselines, standard_difference_kernel, BaselineGrid, BaselineResult};
pub use constraints::{
    default_tau_ref, project_constraints, temporal_penalty, temporal_penalty_grad, Projector, EXTRAPOLATION_RANGE,
    TAU_MIN,
};
pub use dataset::{
    clean_signal, generate_dataset, read_dataset, read_split, write_dataset, Dataset, DatasetConfig, SignalPairs, SPLITS,
};
pub use metrics::{mean_mse, mean_psnr, mse, pooled_psnr, psnr, psnr_from_mse, PEAK};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub max_epochs: usize,
    /// Temporal smoothness weight; ignored for shared parameters.
    pub beta: f64,
    pub batch_size: usize,
    pub init: InitConfig,
    pub restarts: usize,
    /// Epochs without a validation improvement before a restart stops.
    pub patience: usize,
    pub seed: u64,
    pub adam: AdamConfig,
    /// Lanczos steps per warm-started spectral norm update inside the loop.
    pub lanczos_steps: usize,
    /// Overrides [`default_tau_ref`] when set.
    pub tau_ref: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            max_epochs: 2000,
            beta: 10.0,
            batch_size: 32,
            init: InitConfig::default(),
            restarts: 3,
            patience: 100,
            seed: 0,
            adam: AdamConfig::default(),
            lanczos_steps: 12,
            tau_ref: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be >= 0, got {}", self.lr)));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::Config(format!("beta must be >= 0, got {}", self.beta)));
        }
        if self.batch_size == 0 || self.restarts == 0 || self.max_epochs == 0 {
            return Err(Error::Config("batch size, restarts and epochs must be positive".into()));
        }
        if let Some(t) = self.tau_ref {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::Config(format!("tau_ref must be positive, got {t}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean MSE over the epoch's mini-batches, before each update.
    pub train_mse: f64,
    pub val_psnr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RestartReport {
    pub restart: usize,
    pub best_val_psnr: f64,
    pub best_epoch: usize,
    pub log: Vec<EpochRecord>,
    /// Why the restart was aborted, if it was.
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: NetworkParams,
    pub best_restart: usize,
    pub best_val_psnr: f64,
    pub restarts: Vec<RestartReport>,
}

impl TrainOutcome {
    /// Epoch log of the selected restart.
    pub fn log(&self) -> &[EpochRecord] {
        &self.restarts[self.best_restart].log
    }
}

/// Loss terms and gradient of one mini-batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchLoss {
    pub mse: f64,
    pub penalty: f64,
    pub gradient: GradientSet,
}

/// Mean MSE over the batch plus the temporal penalty, and its exact gradient. Per-sample work is
/// spread over the rayon pool; partial results are summed in sample order.
pub fn batch_loss_and_gradient(
    spec: &NetworkSpec,
    params: &NetworkParams,
    noisy: &[&SignalBundle],
    clean: &[&SignalBundle],
    beta: f64,
    tau_ref: f64,
) -> Result<BatchLoss> {
    check_params(spec, params)?;
    if noisy.len() != clean.len() || noisy.is_empty() {
        return Err(Error::Dimension(format!(
            "batch of {} inputs and {} targets",
            noisy.len(),
            clean.len()
        )));
    }
    let count = noisy.len() as f64;
    let parts: Vec<(f64, NetworkParams)> = noisy
        .par_iter()
        .zip(clean.par_iter())
        .map(|(x, y)| {
            let (out, tape) = network_forward(spec, params, x)?;
            out.check_same_shape(y)?;
            let n = out.len() as f64;
            let upstream: Vec<f64> = out
                .data()
                .iter()
                .zip(y.data())
                .map(|(o, c)| 2.0 * (o - c) / (n * count))
                .collect();
            let mut acc = params.zeros_like();
            backward::backward_into(spec, params, &tape, &upstream, &mut acc);
            Ok((metrics::mse_raw(out.data(), y.data()), acc))
        })
        .collect::<Result<_>>()?;

    let mut flat_total = vec![0.0; crate::network::count_parameters(spec, params)];
    let mut mse = 0.0;
    for (m, acc) in &parts {
        mse += m;
        flat_total.iter_mut().zip(acc.flatten(spec)).for_each(|(t, v)| *t += v);
    }
    mse /= count;
    let mut total = params.zeros_like();
    total.assign_flat(spec, &flat_total)?;
    temporal_penalty_grad(spec, params, beta, tau_ref, &mut total);
    Ok(BatchLoss {
        mse,
        penalty: temporal_penalty(spec, params, beta, tau_ref),
        gradient: GradientSet {
            values: total.flatten(spec),
        },
    })
}

/// Network outputs for every input, in order.
pub fn apply_all(spec: &NetworkSpec, params: &NetworkParams, inputs: &[SignalBundle]) -> Result<Vec<SignalBundle>> {
    inputs.par_iter().map(|u| network_apply(spec, params, u)).collect()
}

/// Pooled PSNR of the network outputs on a set of pairs.
pub fn evaluate(spec: &NetworkSpec, params: &NetworkParams, pairs: &SignalPairs) -> Result<f64> {
    let outputs = apply_all(spec, params, &pairs.noisy)?;
    pooled_psnr(&outputs, &pairs.clean)
}

enum RestartEnd {
    Finished(NetworkParams, RestartReport),
    Failed(RestartReport),
}

fn restart_rng(cfg: &TrainConfig, restart: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(restart as u64);
    rng
}

/// The projected initialisation that restart `restart` of [`train`] starts from.
pub fn initial_params(spec: &NetworkSpec, cfg: &TrainConfig, restart: usize) -> Result<NetworkParams> {
    project_constraints(spec, &init_params(spec, &cfg.init, &mut restart_rng(cfg, restart))?)
}

fn run_restart(spec: &NetworkSpec, train_set: &SignalPairs, val_set: &SignalPairs, cfg: &TrainConfig, restart: usize) -> Result<RestartEnd> {
    let mut rng = restart_rng(cfg, restart);
    let mut params = project_constraints(spec, &init_params(spec, &cfg.init, &mut rng)?)?;
    let tau_ref = cfg.tau_ref.unwrap_or_else(|| default_tau_ref(spec, &params));
    let mut flat = params.flatten(spec);
    let mut adam = AdamState::new(flat.len(), cfg.adam);
    let mut projector = Projector::new(cfg.lanczos_steps);
    let mut report = RestartReport {
        restart,
        best_val_psnr: f64::NEG_INFINITY,
        best_epoch: 0,
        log: Vec::new(),
        failure: None,
    };
    let mut best = params.clone();
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut mse_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let noisy: Vec<&SignalBundle> = batch.iter().map(|&i| &train_set.noisy[i]).collect();
            let clean: Vec<&SignalBundle> = batch.iter().map(|&i| &train_set.clean[i]).collect();
            let loss = match batch_loss_and_gradient(spec, &params, &noisy, &clean, cfg.beta, tau_ref) {
                Ok(l) => l,
                Err(Error::Numerical(m)) => {
                    report.failure = Some(format!("epoch {epoch}: {m}"));
                    return Ok(RestartEnd::Failed(report));
                }
                Err(e) => return Err(e),
            };
            if !(loss.mse + loss.penalty).is_finite() || loss.gradient.values.iter().any(|g| !g.is_finite()) {
                report.failure = Some(format!("epoch {epoch}: loss became NaN or infinite"));
                return Ok(RestartEnd::Failed(report));
            }
            mse_sum += loss.mse * batch.len() as f64;
            adam_step(&mut flat, &loss.gradient.values, &mut adam, cfg.lr)?;
            params.assign_flat(spec, &flat)?;
            projector.project(spec, &mut params)?;
            flat = params.flatten(spec);
        }
        let val_psnr = match evaluate(spec, &params, val_set) {
            Ok(v) if !v.is_nan() => v,
            Ok(_) | Err(Error::Numerical(_)) => {
                report.failure = Some(format!("epoch {epoch}: validation output became non-finite"));
                return Ok(RestartEnd::Failed(report));
            }
            Err(e) => return Err(e),
        };
        report.log.push(EpochRecord {
            epoch,
            train_mse: mse_sum / train_set.len() as f64,
            val_psnr,
        });
        if val_psnr > report.best_val_psnr {
            report.best_val_psnr = val_psnr;
            report.best_epoch = epoch;
            best = params.clone();
        } else if epoch - report.best_epoch >= cfg.patience {
            break;
        }
    }
    Ok(RestartEnd::Finished(best, report))
}

/// Trains from `cfg.restarts` random initialisations with Adam, projecting onto the constraint
/// set after every step, and keeps the parameters with the best validation PSNR. A restart whose
/// loss turns non-finite is abandoned and reported; training fails only if all of them do.
pub fn train(spec: &NetworkSpec, train_set: &SignalPairs, val_set: &SignalPairs, cfg: &TrainConfig) -> Result<TrainOutcome> {
    spec.validate()?;
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Config("training and validation sets must be non-empty".into()));
    }
    let mut reports = Vec::with_capacity(cfg.restarts);
    let mut best: Option<(usize, f64, NetworkParams)> = None;
    for r in 0..cfg.restarts {
        match run_restart(spec, train_set, val_set, cfg, r)? {
            RestartEnd::Finished(params, report) => {
                if best.as_ref().is_none_or(|b| report.best_val_psnr > b.1) {
                    best = Some((r, report.best_val_psnr, params));
                }
                reports.push(report);
            }
            RestartEnd::Failed(report) => reports.push(report),
        }
    }
    let Some((best_restart, _, params)) = best else {
        let why: Vec<String> = reports
            .iter()
            .map(|r| format!("restart {}: {}", r.restart, r.failure.as_deref().unwrap_or("unknown")))
            .collect();
        return Err(Error::Numerical(format!("every restart failed ({})", why.join("; "))));
    };
    // The loop projects with warm-started norm estimates; finish with the exact projection.
    let params = project_constraints(spec, &params)?;
    let best_val_psnr = evaluate(spec, &params, val_set)?;
    Ok(TrainOutcome {
        params,
        best_restart,
        best_val_psnr,
        restarts: reports,
    })
}

/// `epoch,train_mse,val_psnr` lines with a header.
pub fn render_epoch_log(log: &[EpochRecord]) -> String {
    use crate::signal::fmt_f64;
    let mut out = String::from("epoch,train_mse,val_psnr\n");
    for r in log {
        out += &format!("{},{},{}\n", r.epoch, fmt_f64(r.train_mse), fmt_f64(r.val_psnr));
    }
    out
}
