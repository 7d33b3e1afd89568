//! Command line driver: covariance export, single trajectories, convergence
//! studies, statistical noise validation and the built-in invariant suite.
//!
//! Exit codes: 0 success, 1 usage or runtime error, 2 validation failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use spde::covariance::{assemble_covariance, factorize, regularity_sum, Kernel};
use spde::error::{Error, Result};
use spde::harness::{
    self, parse_experiment_config, run_convergence_study, ExperimentConfig, InitialData,
};
use spde::io::{
    write_covariance_csv, write_errors_csv, write_json, write_trajectory_csv, ErrorRecordOut,
    RateFitOut, RatesOut, SeedFitOut,
};
use spde::noise::{ou_path_exact, sample_brownian, NoiseRealization};
use spde::scheme::{boundedness_report, nemytskii_apply, simulate, Nonlinearity, SchemeConfig};
use spde::spectral::{grid_to_coeffs, CollocationGrid, Eigenbasis, SpectralField};

#[derive(Parser)]
#[command(
    name = "spde",
    version,
    about = "Pathwise simulation of stochastic heat equations with correlated noise"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigSource {
    /// Experiment file (`key = value` sections).
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Built-in experiment: example1, example2, rate1, rate2,
    /// example1_full, example2_full.
    #[arg(long, value_name = "NAME", conflicts_with = "config")]
    preset: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Assemble the mode-space covariance matrix and export it as CSV.
    Covariance {
        /// Kernel variant: q1, q2 or constant.
        #[arg(long, default_value = "q2")]
        kernel: String,
        /// Kernel bandwidth.
        #[arg(long, default_value_t = 0.1)]
        h: f64,
        /// Matrix dimension (retained modes).
        #[arg(long, default_value_t = 100)]
        modes: usize,
        /// Per-axis quadrature node budget.
        #[arg(long, default_value_t = 512)]
        quad_order: usize,
        /// Also print regularity partial sums for this exponent.
        #[arg(long, value_name = "RHO")]
        regularity_rho: Option<f64>,
        /// Output CSV path.
        #[arg(long, default_value = "covariance.csv")]
        out: PathBuf,
    },
    /// Run one trajectory of the scheme and export it as CSV.
    Simulate {
        #[command(flatten)]
        source: ConfigSource,
        /// Galerkin modes for this run (steps follow the dt rule).
        #[arg(long, default_value_t = 128)]
        modes: usize,
        /// Override the configured final time.
        #[arg(long)]
        t_final: Option<f64>,
        /// Noise seed.
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Store every k-th state in the CSV (0 = auto, about 200 rows).
        #[arg(long, default_value_t = 0)]
        keep_every: usize,
        /// Output CSV path.
        #[arg(long, default_value = "trajectory.csv")]
        out: PathBuf,
        /// Also write the stored coefficients as a compact binary.
        #[arg(long, value_name = "FILE")]
        bin_out: Option<PathBuf>,
    },
    /// Run the coupled convergence study and write errors.csv + rates.json.
    Converge {
        #[command(flatten)]
        source: ConfigSource,
        /// Replace the configured seed list with this single seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory.
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Worker threads (0 = all cores).
        #[arg(long, default_value_t = 0)]
        threads: usize,
        /// Write measured runtimes into errors.csv (breaks byte
        /// reproducibility across runs).
        #[arg(long)]
        timings: bool,
    },
    /// Statistical validation of the correlated-noise machinery.
    NoiseCheck {
        /// Kernel variant: q1, q2 or constant.
        #[arg(long, default_value = "q2")]
        kernel: String,
        #[arg(long, default_value_t = 0.1)]
        h: f64,
        /// Modes for the Brownian covariance check.
        #[arg(long, default_value_t = 8)]
        modes: usize,
        /// Monte-Carlo sample count for the Brownian check.
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
        /// Modes for the convolution-increment check.
        #[arg(long, default_value_t = 4)]
        ou_modes: usize,
        #[arg(long, default_value_t = 0.01)]
        ou_dt: f64,
        /// Euler-Maruyama substeps per increment.
        #[arg(long, default_value_t = 2_000)]
        ou_substeps: usize,
        #[arg(long, default_value_t = 5_000)]
        ou_samples: usize,
        /// Relative tolerance on the increment covariance.
        #[arg(long, default_value_t = 0.05)]
        tolerance: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Run the built-in invariant suite.
    Selftest,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Usage problems exit 1 (clap would default to 2, which this
            // tool reserves for validation failures).
            let is_help = matches!(
                e.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            );
            let _ = e.print();
            return if is_help {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            };
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Covariance {
            kernel,
            h,
            modes,
            quad_order,
            regularity_rho,
            out,
        } => cmd_covariance(&kernel, h, modes, quad_order, regularity_rho, &out),
        Command::Simulate {
            source,
            modes,
            t_final,
            seed,
            keep_every,
            out,
            bin_out,
        } => cmd_simulate(
            &source,
            modes,
            t_final,
            seed,
            keep_every,
            &out,
            bin_out.as_deref(),
        ),
        Command::Converge {
            source,
            seed,
            out,
            threads,
            timings,
        } => cmd_converge(&source, seed, &out, threads, timings),
        Command::NoiseCheck {
            kernel,
            h,
            modes,
            samples,
            ou_modes,
            ou_dt,
            ou_substeps,
            ou_samples,
            tolerance,
            seed,
        } => cmd_noise_check(
            &kernel,
            h,
            modes,
            samples,
            ou_modes,
            ou_dt,
            ou_substeps,
            ou_samples,
            tolerance,
            seed,
        ),
        Command::Selftest => cmd_selftest(),
    }
}

fn kernel_from_flags(kernel: &str, h: f64) -> Result<Kernel<f64>> {
    match kernel.to_ascii_lowercase().as_str() {
        "q1" | "triangular_scaled" => Kernel::triangular_scaled(h),
        "q2" | "triangular" => Kernel::triangular(h),
        "constant" => Ok(Kernel::Constant),
        other => Err(Error::Config(format!(
            "unknown kernel `{other}` (expected q1, q2 or constant)"
        ))),
    }
}

fn load_config(source: &ConfigSource) -> Result<ExperimentConfig<f64>> {
    let text = match (&source.config, &source.preset) {
        (Some(path), _) => fs::read_to_string(path)?,
        (None, Some(name)) => preset_text(name)?.to_string(),
        (None, None) => preset_text("example1")?.to_string(),
    };
    parse_experiment_config(&text)
}

fn preset_text(name: &str) -> Result<&'static str> {
    match name {
        "example1" => Ok(include_str!("../presets/example1.ini")),
        "example2" => Ok(include_str!("../presets/example2.ini")),
        "rate1" => Ok(include_str!("../presets/rate1.ini")),
        "rate2" => Ok(include_str!("../presets/rate2.ini")),
        "example1_full" => Ok(include_str!("../presets/example1_full.ini")),
        "example2_full" => Ok(include_str!("../presets/example2_full.ini")),
        other => Err(Error::Config(format!(
            "unknown preset `{other}` (expected example1, example2, rate1, rate2, \
             example1_full or example2_full)"
        ))),
    }
}

fn unix_timestamp() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn cmd_covariance(
    kernel: &str,
    h: f64,
    modes: usize,
    quad_order: usize,
    regularity_rho: Option<f64>,
    out: &Path,
) -> Result<u8> {
    let kernel = kernel_from_flags(kernel, h)?;
    let t0 = Instant::now();
    let cov = assemble_covariance(&kernel, modes, quad_order)?;
    println!(
        "assembled {}x{} covariance for {} in {:.2}s ({} quadrature warnings)",
        modes,
        modes,
        cov.kernel().describe(),
        t0.elapsed().as_secs_f64(),
        cov.warnings().len()
    );
    if let Some(rho) = regularity_rho {
        for cutoff in [25usize, 50, 100] {
            if cutoff <= modes {
                let s = regularity_sum(&cov, rho, cutoff)?;
                println!("regularity partial sum (rho = {rho}, cutoff = {cutoff}): {s:.6}");
            }
        }
    }
    write_covariance_csv(&cov, fs::File::create(out)?)?;
    println!("wrote {}", out.display());
    Ok(0)
}

#[derive(Serialize)]
struct TrajectoryMeta {
    kernel: String,
    nonlinearity: String,
    n_modes: usize,
    m_steps: usize,
    t_final: f64,
    seed: u64,
    noise_hash: String,
    bounded: bool,
    max_sup_norm: f64,
    diverged: bool,
    runtime_s: f64,
    timestamp_unix: u64,
}

fn cmd_simulate(
    source: &ConfigSource,
    modes: usize,
    t_final: Option<f64>,
    seed: u64,
    keep_every: usize,
    out: &Path,
    bin_out: Option<&Path>,
) -> Result<u8> {
    let mut cfg = load_config(source)?;
    if let Some(t) = t_final {
        if t <= 0.0 {
            return Err(Error::Config("t_final must be positive".into()));
        }
        cfg.t_final = t;
    }
    let m_steps = cfg.steps_for(modes);
    let keep = if keep_every == 0 {
        (m_steps / 200).max(1)
    } else {
        keep_every
    };
    let t0 = Instant::now();
    let traj = harness::run_single(&cfg, modes, seed, keep)?;
    let runtime = t0.elapsed().as_secs_f64();
    let report = boundedness_report(&traj);
    println!(
        "simulated N = {modes}, M = {m_steps}, T = {} in {runtime:.2}s; \
         max sup norm {:.4} at step {} ({})",
        cfg.t_final,
        report.max_sup,
        report.argmax_step,
        if traj.diverged() {
            "DIVERGED"
        } else {
            "completed"
        }
    );
    let g_e = 4 * modes + 1;
    write_trajectory_csv(&traj, g_e, fs::File::create(out)?)?;
    if let Some(bin_path) = bin_out {
        spde::io::save_trajectory_bin(&traj, bin_path)?;
        println!("wrote {}", bin_path.display());
    }
    let meta = TrajectoryMeta {
        kernel: cfg.kernel.describe(),
        nonlinearity: cfg.nonlinearity.name().to_string(),
        n_modes: modes,
        m_steps,
        t_final: cfg.t_final,
        seed,
        noise_hash: format!("{:#018x}", traj.noise_hash()),
        bounded: traj.bounded(),
        max_sup_norm: report.max_sup,
        diverged: traj.diverged(),
        runtime_s: runtime,
        timestamp_unix: unix_timestamp(),
    };
    write_json(&meta, fs::File::create(spde::io::sidecar_path(out))?)?;
    println!("wrote {} ({} rows)", out.display(), traj.states().len());
    Ok(if traj.diverged() { 2 } else { 0 })
}

#[derive(Serialize)]
struct SeedMeta {
    seed: u64,
    noise_hash: String,
    ref_runtime_s: f64,
    ladder_runtimes_s: Vec<f64>,
    well_resolved: bool,
    half_ref_error: Option<f64>,
    max_sup_norm: f64,
    ref_diverged: bool,
}

#[derive(Serialize)]
struct RunMeta {
    timestamp_unix: u64,
    kernel: String,
    nonlinearity: String,
    t_final: f64,
    ref_modes: usize,
    ref_steps: usize,
    ladder: Vec<usize>,
    eval_grid: usize,
    quad_order: usize,
    covariance_warnings: usize,
    seeds: Vec<SeedMeta>,
    diverged_records: Vec<(u64, usize)>,
    total_runtime_s: f64,
}

fn cmd_converge(
    source: &ConfigSource,
    seed: Option<u64>,
    out_dir: &Path,
    threads: usize,
    timings: bool,
) -> Result<u8> {
    if threads > 0 {
        // Ignore failure if a global pool already exists.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    let mut cfg = load_config(source)?;
    if let Some(s) = seed {
        cfg.seeds = vec![s];
    }
    let out_dir = cfg
        .out_dir
        .clone()
        .map(PathBuf::from)
        .filter(|_| out_dir == Path::new("out"))
        .unwrap_or_else(|| out_dir.to_path_buf());
    fs::create_dir_all(&out_dir)?;

    println!(
        "convergence study: {} / {} drift, T = {}, ladder {:?}, reference N = {} (M = {}), {} seed(s)",
        cfg.kernel.describe(),
        cfg.nonlinearity.name(),
        cfg.t_final,
        cfg.ladder,
        cfg.ref_modes,
        cfg.ref_steps(),
        cfg.seeds.len()
    );
    let t0 = Instant::now();
    let outcome = run_convergence_study(&cfg)?;
    let total = t0.elapsed().as_secs_f64();

    let mut records = Vec::new();
    for s in &outcome.seeds {
        for r in &s.records {
            if !r.diverged {
                records.push(ErrorRecordOut {
                    seed: r.seed,
                    n_modes: r.n_modes,
                    m_steps: r.m_steps,
                    sup_error: r.sup_error,
                    runtime_s: r.runtime_s,
                });
            }
        }
    }
    records.sort_by_key(|r| (r.seed, r.n_modes));
    write_errors_csv(
        &records,
        timings,
        fs::File::create(out_dir.join("errors.csv"))?,
    )?;

    let rates = RatesOut {
        slope: outcome.pooled.map_or(f64::NAN, |f| f.slope),
        intercept: outcome.pooled.map_or(f64::NAN, |f| f.intercept),
        residual: outcome.pooled.map_or(f64::NAN, |f| f.residual),
        per_seed: outcome
            .seeds
            .iter()
            .map(|s| SeedFitOut {
                seed: s.seed,
                fit: s.fit.map(|f| RateFitOut {
                    slope: f.slope,
                    intercept: f.intercept,
                    residual: f.residual,
                    points: f.points,
                }),
            })
            .collect(),
    };
    write_json(&rates, fs::File::create(out_dir.join("rates.json"))?)?;

    let diverged: Vec<(u64, usize)> = outcome
        .seeds
        .iter()
        .flat_map(|s| {
            s.records
                .iter()
                .filter(|r| r.diverged)
                .map(|r| (r.seed, r.n_modes))
        })
        .collect();
    let meta = RunMeta {
        timestamp_unix: unix_timestamp(),
        kernel: cfg.kernel.describe(),
        nonlinearity: cfg.nonlinearity.name().to_string(),
        t_final: cfg.t_final,
        ref_modes: cfg.ref_modes,
        ref_steps: cfg.ref_steps(),
        ladder: cfg.ladder.clone(),
        eval_grid: cfg.eval_grid_effective(),
        quad_order: cfg.quad_order,
        covariance_warnings: outcome.covariance_warnings,
        seeds: outcome
            .seeds
            .iter()
            .map(|s| SeedMeta {
                seed: s.seed,
                noise_hash: format!("{:#018x}", s.records.first().map_or(0, |r| r.ref_hash)),
                ref_runtime_s: s.ref_runtime_s,
                ladder_runtimes_s: s.records.iter().map(|r| r.runtime_s).collect(),
                well_resolved: s.well_resolved,
                half_ref_error: s.half_ref_error.map(|v| v),
                max_sup_norm: s.max_sup_norm,
                ref_diverged: s.ref_diverged,
            })
            .collect(),
        diverged_records: diverged.clone(),
        total_runtime_s: total,
    };
    write_json(&meta, fs::File::create(out_dir.join("run_metadata.json"))?)?;

    for s in &outcome.seeds {
        match &s.fit {
            Some(f) => println!(
                "seed {:>3}: slope {:+.4} (residual {:.3}, {} pts){}{}",
                s.seed,
                f.slope,
                f.residual,
                f.points,
                if s.well_resolved {
                    ""
                } else {
                    "  [reference resolution marginal]"
                },
                if s.ref_diverged {
                    "  [REFERENCE DIVERGED]"
                } else {
                    ""
                },
            ),
            None => println!("seed {:>3}: no usable fit", s.seed),
        }
    }
    if let Some(p) = &outcome.pooled {
        println!("pooled slope {:+.4} over {} points", p.slope, p.points);
    }
    if !diverged.is_empty() {
        println!("diverged runs (excluded from fits): {diverged:?}");
    }
    println!(
        "wrote {}, {}, {} in {:.1}s",
        out_dir.join("errors.csv").display(),
        out_dir.join("rates.json").display(),
        out_dir.join("run_metadata.json").display(),
        total
    );
    Ok(0)
}

#[allow(clippy::too_many_arguments)]
fn cmd_noise_check(
    kernel: &str,
    h: f64,
    modes: usize,
    samples: usize,
    ou_modes: usize,
    ou_dt: f64,
    ou_substeps: usize,
    ou_samples: usize,
    tolerance: f64,
    seed: u64,
) -> Result<u8> {
    let kernel = kernel_from_flags(kernel, h)?;
    println!(
        "noise check: {} with {} modes, {} Brownian samples, \
         OU {} modes x {} substeps x {} samples",
        kernel.describe(),
        modes,
        samples,
        ou_modes,
        ou_substeps,
        ou_samples
    );
    let cov = assemble_covariance(&kernel, modes, 256)?;
    let factor = Arc::new(factorize(&cov)?);
    let ou_cov = assemble_covariance(&kernel, ou_modes, 256)?;
    let ou_factor = Arc::new(factorize(&ou_cov)?);
    let basis = Eigenbasis::<f64>::new(modes.max(ou_modes));

    let t0 = Instant::now();
    let brownian_worst = harness::brownian_covariance_check(&factor, 1.0, samples, seed)?;
    let brownian_pass = brownian_worst <= 1.0;
    let ou_worst = harness::ou_increment_check(
        &ou_factor,
        basis.eigenvalues(),
        ou_dt,
        ou_substeps,
        ou_samples,
        seed,
    )?;
    let ou_pass = ou_worst <= tolerance;
    println!(
        "brownian covariance: worst deviation {brownian_worst:.3} of the 5-SE budget -> {}",
        if brownian_pass { "PASS" } else { "FAIL" }
    );
    println!(
        "convolution increments: worst relative deviation {ou_worst:.4} (tolerance {tolerance:.4}) -> {}",
        if ou_pass { "PASS" } else { "FAIL" }
    );
    println!("noise check finished in {:.1}s", t0.elapsed().as_secs_f64());
    Ok(if brownian_pass && ou_pass { 0 } else { 2 })
}

fn cmd_selftest() -> Result<u8> {
    let mut all_pass = true;
    let mut check = |name: &str, pass: bool, detail: String| {
        println!(
            "{}: {} ({detail})",
            name,
            if pass { "PASS" } else { "FAIL" }
        );
        all_pass &= pass;
    };

    // Basis orthonormality by quadrature.
    {
        let basis = Eigenbasis::<f64>::new(16);
        let m = 2048usize;
        let hstep = std::f64::consts::PI / m as f64;
        let mut worst = 0.0f64;
        for k in 1..=16usize {
            for l in k..=16usize {
                let mut acc = 0.0;
                for j in 0..m {
                    let x = (j as f64 + 0.5) * hstep;
                    acc += basis.eigenfunction_eval(k, x).unwrap()
                        * basis.eigenfunction_eval(l, x).unwrap();
                }
                acc *= hstep;
                let expect = if k == l { 1.0 } else { 0.0 };
                worst = worst.max((acc - expect).abs());
            }
        }
        check(
            "orthonormality",
            worst < 1e-8,
            format!("max deviation {worst:.2e}"),
        );
    }

    // Transform round trip and fast/direct agreement.
    {
        let basis = Eigenbasis::<f64>::new(16);
        let coeffs: Vec<f64> = (0..16)
            .map(|i| ((i * 31 + 7) % 13) as f64 / 6.5 - 1.0)
            .collect();
        let field = SpectralField::new(coeffs.clone(), Arc::clone(&basis)).unwrap();
        let grid = CollocationGrid::new(31);
        let vals = field.eval_on_grid(&grid);
        let back = grid_to_coeffs(&vals, &grid, 16, &basis).unwrap();
        let worst = back
            .coeffs()
            .iter()
            .zip(&coeffs)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        check(
            "transform round trip",
            worst < 1e-12,
            format!("max deviation {worst:.2e}"),
        );

        let mut direct = vec![0.0; 31];
        field.eval_on_points(grid.points(), &mut direct);
        let worst = vals
            .iter()
            .zip(&direct)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        check(
            "fast vs direct transform",
            worst < 1e-12,
            format!("max deviation {worst:.2e}"),
        );
    }

    // Semigroup composition and projection commutation.
    {
        let basis = Eigenbasis::<f64>::new(8);
        let field = SpectralField::new(
            vec![0.9, -0.4, 0.2, 0.8, -0.7, 0.1, 0.05, -0.3],
            Arc::clone(&basis),
        )
        .unwrap();
        let a = field
            .semigroup_apply(0.2)
            .unwrap()
            .semigroup_apply(0.3)
            .unwrap();
        let b = field.semigroup_apply(0.5).unwrap();
        let worst = a
            .coeffs()
            .iter()
            .zip(b.coeffs())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0f64, f64::max);
        check(
            "semigroup composition",
            worst < 1e-14,
            format!("max deviation {worst:.2e}"),
        );

        let p1 = field.semigroup_apply(0.37).unwrap().project(3);
        let p2 = field.project(3).semigroup_apply(0.37).unwrap();
        let exact = p1.coeffs() == p2.coeffs();
        check(
            "projection commutes with semigroup",
            exact,
            "bitwise".to_string(),
        );
    }

    // Constant-kernel covariance against the closed form.
    {
        let cov = assemble_covariance(&Kernel::<f64>::Constant, 8, 128)?;
        let mut worst = 0.0f64;
        for k in 1..=8usize {
            for l in 1..=8usize {
                let ck = if k % 2 == 1 {
                    (2.0 / std::f64::consts::PI).sqrt() * 2.0 / k as f64
                } else {
                    0.0
                };
                let cl = if l % 2 == 1 {
                    (2.0 / std::f64::consts::PI).sqrt() * 2.0 / l as f64
                } else {
                    0.0
                };
                worst = worst.max((cov.get(k, l) - ck * cl).abs());
            }
        }
        check(
            "constant-kernel covariance",
            worst < 1e-8,
            format!("max deviation {worst:.2e}"),
        );
    }

    // Cholesky reconstruction of an assembled matrix.
    {
        let cov = assemble_covariance(&Kernel::triangular(0.1f64).unwrap(), 32, 128)?;
        let f = factorize(&cov)?;
        let rebuilt = f.lower().times_transpose();
        let mut worst = 0.0f64;
        for k in 0..32 {
            for l in 0..32 {
                let mut want = cov.entries()[(k, l)];
                if k == l {
                    want += f.jitter_used();
                }
                worst = worst.max((rebuilt[(k, l)] - want).abs());
            }
        }
        let tol = 1e-10 * (1.0 + cov.entries().max_abs());
        check(
            "cholesky reconstruction",
            worst <= tol,
            format!("max deviation {worst:.2e}"),
        );
    }

    // Restriction telescoping.
    {
        let cov = assemble_covariance(&Kernel::triangular(0.2f64).unwrap(), 4, 64)?;
        let factor = Arc::new(factorize(&cov)?);
        let h = sample_brownian(factor, 16, 1.0, 12345)?;
        let view = h.couple_restrict(4, 8)?;
        let mut exact = true;
        for m in 0..8 {
            let coarse = view.increment(m)?;
            for k in 0..4 {
                let fine = h.increments().row(2 * m)[k] + h.increments().row(2 * m + 1)[k];
                exact &= coarse[k] == fine;
            }
        }
        check("restriction telescoping", exact, "bitwise".to_string());
    }

    // Zero-drift telescoping: scheme state equals the convolution path.
    {
        let n = 16;
        let m = 50;
        let basis = Eigenbasis::<f64>::new(n);
        let cov = assemble_covariance(&Kernel::triangular(0.1f64).unwrap(), n, 128)?;
        let factor = Arc::new(factorize(&cov)?);
        let real = NoiseRealization::new(factor, m, 1.0, 777)?;
        let ou = ou_path_exact(&real.view(n, m)?, &basis)?;
        let cfg = SchemeConfig::new(n, m, 1.0, &Nonlinearity::Zero);
        let xi = SpectralField::zeros(n, Arc::clone(&basis));
        let traj = simulate(&cfg, &Nonlinearity::Zero, &xi, &ou, 1e9)?;
        let mut worst = 0.0f64;
        for (idx, st) in traj.states().iter().enumerate() {
            for k in 0..n {
                worst = worst.max((st.coeffs()[k] - ou.state(idx).coeffs()[k]).abs());
            }
        }
        check(
            "zero-drift telescoping",
            worst <= 1e-12,
            format!("max deviation {worst:.2e}"),
        );
    }

    // Heat decay against the exact solution.
    {
        let n = 4;
        let m = 64;
        let basis = Eigenbasis::<f64>::new(n);
        let ou = spde::noise::OuPath::zeros(n, m, 1.0, &basis);
        let cfg = SchemeConfig::new(n, m, 1.0, &Nonlinearity::Zero);
        let xi = harness::initial_condition(InitialData::TwoModeSine, &basis);
        let traj = simulate(&cfg, &Nonlinearity::Zero, &xi, &ou, 1e9)?;
        let last = traj.states().last().unwrap();
        let mut worst = 0.0f64;
        for k in 0..n {
            let xi_k = if k < xi.coeffs().len() {
                xi.coeffs()[k]
            } else {
                0.0
            };
            let want = xi_k * (-(((k + 1) * (k + 1)) as f64)).exp();
            worst = worst.max((last.coeffs()[k] - want).abs());
        }
        check(
            "deterministic heat decay",
            worst <= 1e-12,
            format!("max deviation {worst:.2e}"),
        );
    }

    // Nemytskii dealiasing for the cubic.
    {
        let basis = Eigenbasis::<f64>::new(8);
        let coeffs: Vec<f64> = (0..8)
            .map(|i| ((i * 5 + 2) % 7) as f64 / 3.5 - 1.0)
            .collect();
        let u = SpectralField::new(coeffs, Arc::clone(&basis)).unwrap();
        let lo = nemytskii_apply(&Nonlinearity::Cubic, &u, 16)?;
        let hi = nemytskii_apply(&Nonlinearity::Cubic, &u, 32)?;
        let worst = lo
            .coeffs()
            .iter()
            .zip(hi.coeffs())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        check(
            "cubic dealiasing",
            worst < 1e-10,
            format!("max deviation {worst:.2e}"),
        );
    }

    // Rate-fit oracle.
    {
        let points: Vec<(usize, f64)> = [16usize, 32, 64, 128]
            .iter()
            .map(|&n| (n, 3.0 * (n as f64).powf(-0.5)))
            .collect();
        let fit = harness::fit_rate(&points)?;
        check(
            "rate-fit oracle",
            (fit.slope + 0.5).abs() < 1e-12,
            format!("slope {:+.12}", fit.slope),
        );
    }

    println!(
        "selftest: {}",
        if all_pass {
            "ALL PASS"
        } else {
            "FAILURES PRESENT"
        }
    );
    Ok(if all_pass { 0 } else { 2 })
}
