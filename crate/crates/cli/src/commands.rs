use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use diffnet_core::flux::{FluxFunction, FluxKind};
use diffnet_core::image::{read_pgm, write_pgm, Image2D};
use diffnet_core::network::{read_model, write_model, Arch, InitConfig, NetworkSpec, Sharing};
use diffnet_core::schemes::{
    gershgorin_rescale, run_scheme, stability_bound, tau_max, Scheme, SchemeConfig, StabilityMode, StabilityReport,
};
use diffnet_core::signal::{fmt_f64, read_signals_csv, write_signals_csv, KernelBank, SignalBundle};
use diffnet_core::training::{
    classical_baselines, evaluate, generate_dataset, initial_params, psnr, read_split, render_epoch_log, train,
    write_dataset, BaselineGrid, DatasetConfig, SignalPairs, TrainConfig, SPLITS,
};
use diffnet_core::{Error, Result};
use diffnet_multigrid::{
    cg_reference_solve, fmg_solve, random_mask, render_residual_log, single_grid_solve, synthetic_image, vcycle_solve,
    CgConfig, CycleConfig, FmgConfig, InpaintingProblem, SolveReport, TensorModel,
};
use rayon::prelude::*;

use crate::args::{
    Cli, DenoiseArgs, GenDataArgs, GenInpaintArgs, InpaintArgs, StabilityArgs, TrainArgs,
};
use crate::record::write_manifest;

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn parse_kernel(s: &str) -> Result<KernelBank> {
    let taps: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| Error::Config(format!("bad kernel tap {t:?} in {s:?}"))))
        .collect::<Result<_>>()?;
    match taps[..] {
        [a, b, c] => Ok(KernelBank::single([a, b, c])),
        _ => Err(Error::Config(format!("kernel needs three taps, got {s:?}"))),
    }
}

pub fn gen_data(a: &GenDataArgs, cli: &Cli) -> Result<()> {
    let cfg = DatasetConfig {
        n_train: a.train,
        n_val: a.val,
        n_test: a.test,
        len: a.len,
        noise_sigma: a.sigma,
        seed: a.seed,
        ..DatasetConfig::default()
    };
    write_dataset(&a.out, &generate_dataset(&cfg)?)?;
    let files: Vec<String> = SPLITS
        .iter()
        .flat_map(|s| [format!("{s}.csv"), format!("{s}_clean.csv")])
        .collect();
    write_manifest(&a.out, a.seed, cli, &files)?;
    println!(
        "wrote {} / {} / {} pairs of length {} to {}",
        a.train,
        a.val,
        a.test,
        a.len,
        a.out.display()
    );
    Ok(())
}

fn load_signals(a: &DenoiseArgs) -> Result<(Vec<SignalBundle>, Option<Vec<SignalBundle>>)> {
    let (noisy, clean) = match (&a.data, &a.input) {
        (Some(dir), _) => {
            let p = read_split(dir, &a.split)?;
            (p.noisy, Some(p.clean))
        }
        (None, Some(input)) => {
            let noisy = read_signals_csv(input, 1)?;
            let clean = a.reference.as_deref().map(|r| read_signals_csv(r, 1)).transpose()?;
            (noisy, clean)
        }
        (None, None) => return Err(Error::Config("denoise needs --data or --input".into())),
    };
    let n = a.limit.unwrap_or(noisy.len()).min(noisy.len());
    let clean = clean.map(|c| c[..n.min(c.len())].to_vec());
    if let Some(c) = &clean {
        if c.len() != n {
            return Err(Error::Dimension(format!("{n} noisy signals but {} references", c.len())));
        }
    }
    Ok((noisy[..n].to_vec(), clean))
}

/// Refuses step sizes outside the scheme's stability region.
fn check_scheme_stability(scheme: Scheme, cfg: &SchemeConfig, report: &StabilityReport) -> Result<()> {
    match scheme {
        Scheme::DuFortFrankel if cfg.alpha < report.alpha_min => Err(Error::Config(format!(
            "alpha = {} is below the stability bound alpha >= {} (use --allow-unstable to run anyway)",
            fmt_f64(cfg.alpha),
            fmt_f64(report.alpha_min)
        ))),
        Scheme::Explicit | Scheme::Fsi | Scheme::Implicit if cfg.tau > report.tau_max => Err(Error::Config(format!(
            "tau = {} exceeds the stability bound tau_max = {} (use --allow-unstable to run anyway)",
            fmt_f64(cfg.tau),
            fmt_f64(report.tau_max)
        ))),
        _ => Ok(()),
    }
}

pub fn denoise(a: &DenoiseArgs) -> Result<()> {
    let kind: FluxKind = a.flux.parse()?;
    if a.grid_search {
        return grid_search(a, kind);
    }
    let scheme: Scheme = a.scheme.parse()?;
    let (noisy, clean) = load_signals(a)?;
    if noisy.is_empty() {
        return Err(Error::Config("no signals to denoise".into()));
    }
    let k = parse_kernel(&a.kernel)?;
    let cfg = SchemeConfig {
        tau: a.tau,
        alpha: a.alpha,
        cycle_len: a.cycle_len,
        flux: FluxFunction::new(kind, a.lambda)?,
    };
    cfg.validate()?;
    let report = stability_bound(&k, noisy[0].len(), &cfg.flux)?;
    if !a.allow_unstable {
        check_scheme_stability(scheme, &cfg, &report)?;
    }
    let out: Vec<SignalBundle> = noisy
        .par_iter()
        .map(|u| run_scheme(scheme, u, &k, &cfg, a.steps))
        .collect::<Result<_>>()?;
    write_signals_csv(&a.out.join("denoised.csv"), &out)?;
    println!(
        "scheme {scheme}, flux {kind}, tau {}, steps {}, tau_max {}",
        fmt_f64(a.tau),
        a.steps,
        fmt_f64(report.tau_max)
    );
    if let Some(clean) = clean {
        let mut table = String::from("signal,psnr\n");
        let mut sum = 0.0;
        for (i, (u, c)) in out.iter().zip(&clean).enumerate() {
            let p = psnr(u, c)?;
            sum += p;
            println!("signal {i} psnr {}", fmt_f64(p));
            writeln!(table, "{i},{}", fmt_f64(p)).expect("string write");
        }
        write_text(&a.out.join("psnr.csv"), &table)?;
        println!("mean_psnr = {}", fmt_f64(sum / out.len() as f64));
    }
    Ok(())
}

fn grid_search(a: &DenoiseArgs, kind: FluxKind) -> Result<()> {
    if a.scheme != "explicit" {
        return Err(Error::Config("--grid-search only supports the explicit scheme".into()));
    }
    let dir = a.data.as_deref().ok_or_else(|| Error::Config("--grid-search needs --data".into()))?;
    let limit = |p: SignalPairs| match a.limit {
        Some(n) => p.head(n),
        None => p,
    };
    let val = limit(read_split(dir, "val")?);
    let test = limit(read_split(dir, "test")?);
    let r = classical_baselines(&val, &test, kind, &BaselineGrid::default())?;
    let text = format!(
        "flux = {}\nlambda = {}\ntau = {}\nsteps = {}\ntime = {}\nval_psnr = {}\ntest_psnr = {}\n",
        r.kind,
        fmt_f64(r.lambda),
        fmt_f64(r.tau),
        r.steps,
        fmt_f64(r.time),
        fmt_f64(r.val_psnr),
        fmt_f64(r.test_psnr)
    );
    write_text(&a.out.join("baseline.txt"), &text)?;
    print!("{text}");
    Ok(())
}

pub fn train_cmd(a: &TrainArgs) -> Result<()> {
    let arch: Arch = a.arch.parse()?;
    let flux: FluxKind = a.flux.parse()?;
    let sharing = if a.time_dynamic { Sharing::TimeDynamic } else { Sharing::Shared };
    let mut train_set = read_split(&a.data, "train")?;
    let mut val_set = read_split(&a.data, "val")?;
    let test_set = read_split(&a.data, "test")?;
    if let Some(n) = a.train_size {
        train_set = train_set.head(n);
    }
    if let Some(n) = a.val_size {
        val_set = val_set.head(n);
    }
    let len = train_set
        .noisy
        .first()
        .ok_or_else(|| Error::Config("training split is empty".into()))?
        .len();
    let mut spec = NetworkSpec::new(arch, a.blocks, a.channels, sharing, flux);
    spec.stability_mode = a.stability.parse()?;
    spec.signal_len = len;
    let cfg = TrainConfig {
        lr: a.lr,
        max_epochs: a.epochs,
        beta: a.beta,
        batch_size: a.batch,
        restarts: a.restarts,
        patience: a.patience,
        seed: a.seed,
        init: InitConfig {
            lambda: a.init_lambda,
            tau: a.init_tau,
            ..InitConfig::default()
        },
        ..TrainConfig::default()
    };
    let start = Instant::now();
    let outcome = train(&spec, &train_set, &val_set, &cfg)?;
    for r in &outcome.restarts {
        match &r.failure {
            Some(why) => println!("restart {}: aborted ({why})", r.restart),
            None => println!(
                "restart {}: best val psnr {} at epoch {}",
                r.restart,
                fmt_f64(r.best_val_psnr),
                r.best_epoch
            ),
        }
    }
    let test_psnr = evaluate(&spec, &outcome.params, &test_set)?;
    write_model(&a.out.join("model.txt"), &spec, &outcome.params)?;
    write_model(&a.out.join("init.txt"), &spec, &initial_params(&spec, &cfg, outcome.best_restart)?)?;
    write_text(&a.out.join("epochs.csv"), &render_epoch_log(outcome.log()))?;
    let metrics = format!(
        "best_restart = {}\nval_psnr = {}\ntest_psnr = {}\n",
        outcome.best_restart,
        fmt_f64(outcome.best_val_psnr),
        fmt_f64(test_psnr)
    );
    write_text(&a.out.join("metrics.txt"), &metrics)?;
    println!("training took {:.1} s", start.elapsed().as_secs_f64());
    println!("test_psnr = {}", fmt_f64(test_psnr));
    Ok(())
}

fn read_mask(path: &Path) -> Result<Image2D> {
    Ok(read_pgm(path)?.map(|v| if v > 0.0 { 1.0 } else { 0.0 }))
}

pub fn inpaint(a: &InpaintArgs) -> Result<()> {
    let f = read_pgm(&a.image)?;
    let mask = read_mask(&a.mask)?;
    let model: TensorModel = a.model.parse()?;
    let prob = InpaintingProblem::new(f, mask, a.lambda, a.sigma)?.with_model(model);
    let cycle = CycleConfig {
        pre_sweeps: a.pre,
        post_sweeps: a.post,
        coarse_sweeps: a.coarse_sweeps,
        omega: a.omega,
    };
    let fmg_cfg = |levels: usize| FmgConfig {
        cycle,
        levels,
        max_vcycles: a.max_iter.unwrap_or(1000),
        ..FmgConfig::default()
    };
    let start = Instant::now();
    let report: SolveReport = match a.solver.as_str() {
        "fmg" => fmg_solve(&prob, a.tol, &fmg_cfg(a.levels))?,
        "vcycle" => vcycle_solve(&prob, a.tol, &fmg_cfg(a.levels))?,
        "twogrid" => vcycle_solve(&prob, a.tol, &fmg_cfg(2))?,
        "singlegrid" => single_grid_solve(&prob, a.tol, a.max_iter.unwrap_or(100_000), a.omega)?,
        "cg" => cg_reference_solve(
            &prob,
            a.tol,
            &CgConfig {
                max_outer: a.max_iter.unwrap_or(500),
                ..CgConfig::default()
            },
        )?,
        other => {
            return Err(Error::Config(format!(
                "unknown solver {other:?}, expected fmg | vcycle | twogrid | singlegrid | cg"
            )))
        }
    };
    let elapsed = start.elapsed().as_secs_f64();
    write_pgm(&a.out.join("reconstruction.pgm"), &report.solution)?;
    write_text(&a.out.join("residual.csv"), &render_residual_log(&report.log))?;
    let summary = format!(
        "solver = {}\nresidual_convention = mean absolute value of A(u) - c f\nresidual = {}\nconverged = {}\niterations = {}\nfine_grid_work = {}\n",
        a.solver,
        fmt_f64(report.residual),
        report.converged,
        report.iterations,
        fmt_f64(report.work.fine_sweeps)
    );
    write_text(&a.out.join("summary.txt"), &summary)?;
    print!("{summary}");
    println!("wall_time_s = {elapsed:.3}");
    if !report.converged {
        eprintln!(
            "warning: iteration cap reached before the tolerance {} (residual {})",
            fmt_f64(a.tol),
            fmt_f64(report.residual)
        );
    }
    Ok(())
}

pub fn gen_inpaint(a: &GenInpaintArgs) -> Result<()> {
    let img = synthetic_image(a.size, a.size);
    let mask = random_mask(a.size, a.size, a.density, a.seed)?;
    write_pgm(&a.out.join("image.pgm"), &img)?;
    write_pgm(&a.out.join("mask.pgm"), &mask.map(|c| 255.0 * c))?;
    println!("wrote {0}x{0} image and mask of density {1} to {2}", a.size, a.density, a.out.display());
    Ok(())
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}

/// Report lines for one kernel and the optional stored step size and weight.
fn stability_lines(
    out: &mut String,
    k: &KernelBank,
    n: usize,
    flux: &FluxFunction,
    mode: StabilityMode,
    tau: Option<f64>,
    alpha: Option<f64>,
) -> Result<bool> {
    let exact = stability_bound(k, n, flux)?;
    let report = match mode {
        StabilityMode::SpectralExact => exact,
        StabilityMode::GershgorinAPriori => StabilityReport {
            tau_max: tau_max(k, n, flux, mode)?,
            alpha_min: flux.lipschitz() / 4.0,
            ..exact
        },
    };
    writeln!(out, "norm_sq = {}", fmt_f64(report.spectral_norm_sq)).expect("string write");
    writeln!(out, "lipschitz = {}", fmt_f64(report.lipschitz)).expect("string write");
    writeln!(out, "tau_max = {}", fmt_f64(report.tau_max)).expect("string write");
    writeln!(out, "alpha_min = {}", fmt_f64(report.alpha_min)).expect("string write");
    let mut all = true;
    if let Some(t) = tau {
        let ok = t <= report.tau_max;
        all &= ok;
        writeln!(out, "tau = {} {}", fmt_f64(t), verdict(ok)).expect("string write");
    }
    if let Some(al) = alpha {
        let ok = al >= report.alpha_min;
        all &= ok;
        if ok {
            writeln!(out, "alpha = {} PASS", fmt_f64(al)).expect("string write");
        } else {
            writeln!(out, "alpha = {} FAIL (requires alpha >= {})", fmt_f64(al), fmt_f64(report.alpha_min))
                .expect("string write");
        }
    }
    Ok(all)
}

pub fn stability_check(a: &StabilityArgs) -> Result<()> {
    let mode: StabilityMode = a.mode.parse()?;
    let mut out = String::new();
    let all = if let Some(path) = &a.model {
        let (spec, params) = read_model(path)?;
        writeln!(out, "model = {} ({} blocks, {} channels, {} flux)", spec.arch, spec.blocks, spec.channels, spec.flux)
            .expect("string write");
        let mut all = true;
        for (i, b) in params.blocks.iter().enumerate() {
            writeln!(out, "[block {i}]").expect("string write");
            let flux = spec.flux_with(b.lambda);
            if spec.arch == Arch::ResNet {
                let r = stability_bound(&b.kernel, spec.signal_len, &flux)?;
                writeln!(out, "norm_sq = {}", fmt_f64(r.spectral_norm_sq)).expect("string write");
                writeln!(out, "lipschitz = {}", fmt_f64(r.lipschitz)).expect("string write");
                writeln!(out, "no stability guarantee for independent outer kernels").expect("string write");
                continue;
            }
            let alpha = (spec.arch == Arch::DfNet).then_some(b.alpha);
            all &= stability_lines(&mut out, &b.kernel, spec.signal_len, &flux, mode, Some(b.tau), alpha)?;
        }
        all
    } else if let Some(s) = &a.kernel {
        let mut k = parse_kernel(s)?;
        if a.rescale {
            k = gershgorin_rescale(&k)?;
            writeln!(out, "kernel = {} (rescaled)", k.taps().iter().map(|&v| fmt_f64(v)).collect::<Vec<_>>().join(","))
                .expect("string write");
        }
        let flux = FluxFunction::new(a.flux.parse()?, a.lambda)?;
        stability_lines(&mut out, &k, a.len, &flux, mode, a.tau, a.alpha)?
    } else {
        return Err(Error::Config("stability-check needs --model or --kernel".into()));
    };
    writeln!(out, "overall = {}", verdict(all)).expect("string write");
    if let Some(dir) = &a.out {
        write_text(&dir.join("stability.txt"), &out)?;
    }
    print!("{out}");
    Ok(())
}
