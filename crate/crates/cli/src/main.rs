//! Command-line driver: synthetic data generation, noise, inversion,
//! evaluation, benchmarking, and kernel self-checks.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cylsound_core::config::RunConfig;
use cylsound_core::container;
use cylsound_core::error::CoreError;
use cylsound_core::forward::run_forward_with;
use cylsound_core::greens::{build_kernel_table_with, incident_field_with, radial_kernel};
use cylsound_core::grids::make_grids;
use cylsound_core::inverse::{run_inverse, ModeDiag, ReconstructionResult};
use cylsound_core::metrics::{bench_csv_header, bench_records_csv, run_bench, slice_error};
use cylsound_core::models::{add_noise, clipped_mass_fraction, model_peak, sample_xi, NoiseSpec};
use cylsound_core::special::{besselj, bessely};

#[derive(Parser)]
#[command(
    name = "cylsound",
    about = "Acoustic sounding of a cylindrical waveguide: forward data synthesis and regularized inversion",
    version
)]
struct Cli {
    /// Worker threads for the mode-parallel stages (0 = automatic).
    #[arg(long, global = true, default_value_t = 0)]
    parallel: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigOpt {
    /// Path to the JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Override the kernel damping parameter from the config.
    #[arg(long)]
    eps: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic observation data for every configured frequency.
    Forward {
        #[command(flatten)]
        cfg: ConfigOpt,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Also export the kernel table(s) for reuse.
        #[arg(long)]
        save_table: bool,
    },
    /// Perturb generated data with calibrated Gaussian noise.
    Noise {
        /// Directory holding a `w` field container (or the container itself).
        #[arg(long)]
        data: PathBuf,
        /// Relative noise level.
        #[arg(long)]
        delta: f64,
        /// RNG seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Reconstruct the contrast from observation data.
    Invert {
        #[command(flatten)]
        cfg: ConfigOpt,
        /// Directory with the data containers (layout as written by `forward`).
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sectional error profile of a reconstruction against a truth field.
    Evaluate {
        /// Truth contrast container.
        #[arg(long)]
        truth: PathBuf,
        /// Reconstructed contrast container.
        #[arg(long)]
        recon: PathBuf,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Time the inversion across the configured grid list.
    Bench {
        #[command(flatten)]
        cfg: ConfigOpt,
        #[arg(long)]
        out: PathBuf,
        /// Run the per-mode stages serially.
        #[arg(long)]
        serial: bool,
    },
    /// Run kernel and special-function self-checks on the configured grids.
    GreensCheck {
        #[command(flatten)]
        cfg: ConfigOpt,
    },
}

fn exit_code_for(err: &CoreError) -> u8 {
    match err {
        CoreError::Validation { .. } | CoreError::ShapeMismatch { .. } => 2,
        CoreError::NoConvergence { .. } => 3,
        CoreError::Resonance { .. } => 4,
        CoreError::Io(_) | CoreError::Container(_) => 5,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.parallel > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.parallel)
            .build_global()
        {
            eprintln!("error: failed to size the thread pool: {e}");
            return ExitCode::from(1);
        }
    }
    let result = match cli.command {
        Command::Forward {
            cfg,
            out,
            save_table,
        } => cmd_forward(&cfg, &out, save_table),
        Command::Noise {
            data,
            delta,
            seed,
            out,
        } => cmd_noise(&data, delta, seed, &out),
        Command::Invert { cfg, data, out } => cmd_invert(&cfg, &data, &out),
        Command::Evaluate { truth, recon, out } => cmd_evaluate(&truth, &recon, &out),
        Command::Bench { cfg, out, serial } => cmd_bench(&cfg, &out, serial),
        Command::GreensCheck { cfg } => cmd_greens_check(&cfg),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

fn load_config(opt: &ConfigOpt) -> Result<RunConfig, CoreError> {
    let mut cfg = RunConfig::load(&opt.config)?;
    if let Some(eps) = opt.eps {
        cfg.greens.eps = eps;
        cfg.validate()?;
    }
    Ok(cfg)
}

fn omega_dir(base: &Path, omega: f64) -> PathBuf {
    base.join(format!("omega-{omega}"))
}

fn cmd_forward(opt: &ConfigOpt, out: &Path, save_table: bool) -> Result<u8, CoreError> {
    let cfg = load_config(opt)?;
    let grids = make_grids(&cfg.geometry, &cfg.grid)?;
    let sources = cfg.sources.build();
    let xi = sample_xi(&cfg.model, &grids);
    std::fs::create_dir_all(out)?;
    container::save_physical(&out.join("xi_exact"), &xi, &cfg.geometry)?;
    std::fs::write(out.join("config.json"), cfg.to_json_pretty())?;
    let clipped = clipped_mass_fraction(&cfg.model, &cfg.geometry, &cfg.grid);
    println!("scatterer mass outside the inner cylinder: {clipped:.3e} (clipped)");

    for &omega in &cfg.omegas {
        let table = build_kernel_table_with(
            cfg.greens.kernel,
            omega,
            &cfg.geometry,
            &cfg.grid,
            cfg.greens.eps,
        )?;
        if !table.flags.is_empty() {
            println!(
                "omega {omega}: {} near-resonant mode(s) flagged: {:?}",
                table.flags.len(),
                table.flags
            );
        }
        let (u0_modal, u0_phys) = incident_field_with(
            cfg.greens.kernel,
            &sources,
            omega,
            &cfg.geometry,
            &cfg.grid,
            cfg.greens.eps,
        )?;
        let fwd = run_forward_with(&table, &grids, &u0_modal, &xi, &cfg.forward)?;

        let dir = omega_dir(out, omega);
        container::save_physical(&dir.join("w"), &fwd.w_phys, &cfg.geometry)?;
        container::save_physical(&dir.join("u0"), &u0_phys, &cfg.geometry)?;
        let mut csv = String::from("iteration,delta\n");
        for (k, d) in fwd.delta_history.iter().enumerate() {
            let _ = writeln!(csv, "{},{}", k + 1, d);
        }
        std::fs::write(dir.join("convergence.csv"), csv)?;
        if save_table {
            container::save_kernel_table(&dir.join("kernel-table"), &table)?;
        }
        println!(
            "omega {omega}: converged in {} iterations ({:.2} s); data in {}",
            fwd.iterations,
            fwd.wall_seconds,
            dir.display()
        );
    }
    Ok(0)
}

fn locate_w_container(data: &Path) -> PathBuf {
    if data.join("meta.txt").exists() {
        data.to_path_buf()
    } else {
        data.join("w")
    }
}

fn cmd_noise(data: &Path, delta: f64, seed: u64, out: &Path) -> Result<u8, CoreError> {
    let src = locate_w_container(data);
    let (w, geom) = container::load_physical(&src)?;
    let grids = make_grids(&geom, &w.spec)?;
    let (noisy, measured) = add_noise(&w, &grids, &NoiseSpec { delta, seed })?;
    std::fs::create_dir_all(out)?;
    container::save_physical(&out.join("w"), &noisy, &geom)?;
    let provenance = serde_json::json!({
        "delta": delta,
        "seed": seed,
        "measured_relative_norm": measured,
        "source": src.display().to_string(),
    });
    std::fs::write(
        out.join("noise.json"),
        serde_json::to_string_pretty(&provenance).expect("serializable"),
    )?;
    println!("wrote perturbed data (measured relative norm {measured:.3e})");
    Ok(0)
}

fn diagnostics_csv(diags: &[ModeDiag]) -> String {
    let mut out = String::from("n,m,rank,sigma1,residual_rel,rhs_norm,flagged\n");
    for d in diags {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            d.n_signed, d.m_bin, d.rank, d.sigma1, d.residual_rel, d.rhs_norm, d.flagged
        );
    }
    out
}

fn write_recon(out: &Path, cfg: &RunConfig, recon: &ReconstructionResult) -> Result<(), CoreError> {
    std::fs::create_dir_all(out)?;
    container::save_physical(&out.join("xi"), &recon.xi, &cfg.geometry)?;
    container::save_physical(&out.join("c"), &recon.c_field, &cfg.geometry)?;
    for rec in &recon.per_omega {
        let dir = omega_dir(out, rec.omega);
        container::save_physical(&dir.join("xi"), &rec.xi, &cfg.geometry)?;
        container::save_physical(&dir.join("u"), &rec.u_phys, &cfg.geometry)?;
        container::save_physical(&dir.join("v"), &rec.v_phys, &cfg.geometry)?;
        std::fs::write(dir.join("diagnostics.csv"), diagnostics_csv(&rec.diags))?;
    }
    let mut timing = String::from("omega,step1_s,total_s\n");
    for rec in &recon.per_omega {
        let _ = writeln!(
            timing,
            "{},{},{}",
            rec.omega, rec.step1_seconds, rec.total_seconds
        );
    }
    let _ = writeln!(timing, "all,{},{}", recon.step1_seconds, recon.wall_seconds);
    std::fs::write(out.join("timing.csv"), timing)?;
    std::fs::write(
        out.join("settings.json"),
        serde_json::to_string_pretty(&recon.settings).expect("serializable"),
    )?;
    Ok(())
}

fn cmd_invert(opt: &ConfigOpt, data: &Path, out: &Path) -> Result<u8, CoreError> {
    let cfg = load_config(opt)?;
    let mut fields = Vec::new();
    for &omega in &cfg.omegas {
        let per_omega = omega_dir(data, omega).join("w");
        let src = if per_omega.join("meta.txt").exists() {
            per_omega
        } else {
            locate_w_container(data)
        };
        let (w, _) = container::load_physical(&src)?;
        fields.push((omega, w));
    }
    let sources = cfg.sources.build();
    let recon = run_inverse(
        &fields,
        &sources,
        &cfg.geometry,
        cfg.greens.kernel,
        cfg.greens.eps,
        &cfg.regularization,
    )?;
    write_recon(out, &cfg, &recon)?;
    let residues: Vec<f64> = recon.per_omega.iter().map(|r| r.imag_residue).collect();
    println!(
        "reconstruction written to {} (step1 {:.2} s, total {:.2} s, imaginary residue {:?}, c-domain violations {})",
        out.display(),
        recon.step1_seconds,
        recon.wall_seconds,
        residues,
        recon.c_violations
    );
    let (peak, violated) = model_peak(&cfg.model);
    if violated {
        println!(
            "note: configured model peaks at xi = {peak} >= 1, where the contrast formula is undefined"
        );
    }
    Ok(0)
}

fn cmd_evaluate(truth: &Path, recon: &Path, out: &Path) -> Result<u8, CoreError> {
    let (xi_exact, geom) = container::load_physical(truth)?;
    let (xi_appr, _) = container::load_physical(recon)?;
    let grids = make_grids(&geom, &xi_exact.spec)?;
    let table = slice_error(&xi_appr, &xi_exact, &grids)?;
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    std::fs::write(out, table.to_csv())?;
    println!("max_z delta_L2 = {}", table.max_error());
    Ok(0)
}

fn cmd_bench(opt: &ConfigOpt, out: &Path, serial: bool) -> Result<u8, CoreError> {
    let cfg = load_config(opt)?;
    if serial {
        // a one-thread pool keeps the inner stages serial for clean timings
        rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build_global()
            .ok();
    }
    let sources = cfg.sources.build();
    let records = run_bench(
        &cfg.bench.grids,
        cfg.omegas[0],
        &cfg.geometry,
        &cfg.model,
        &sources,
        cfg.greens.kernel,
        cfg.greens.eps,
        &cfg.regularization,
        !serial,
    )?;
    std::fs::create_dir_all(out)?;
    let path = out.join("bench.csv");
    let body = bench_records_csv(&records);
    if path.exists() {
        // append-only log: keep prior rows, add new ones without a header
        let mut existing = std::fs::read_to_string(&path)?;
        existing.push_str(body.trim_start_matches(bench_csv_header()));
        std::fs::write(&path, existing)?;
    } else {
        std::fs::write(&path, body)?;
    }
    for r in &records {
        println!(
            "nr={} nphi={} nz={}: total {:.3} s, step1 {:.3} s",
            r.nr, r.nphi, r.nz, r.t_total_seconds, r.t_step1_seconds
        );
    }
    Ok(0)
}

fn cmd_greens_check(opt: &ConfigOpt) -> Result<u8, CoreError> {
    let cfg = load_config(opt)?;
    let geom = cfg.geometry;
    let grids = make_grids(&geom, &cfg.grid)?;
    let omega = cfg.omegas[0];
    let eps = cfg.greens.eps;
    let mut all_ok = true;
    let mut resonance_hit = false;
    let report = |name: &str, ok: bool, all: &mut bool| {
        println!("{}: {}", name, if ok { "pass" } else { "FAIL" });
        *all &= ok;
    };

    // special functions: Wronskians on a small sweep
    let mut ok = true;
    for n in (0..=16).step_by(4) {
        for i in 0..12 {
            let x = 10f64.powf(-2.0 + 4.0 * i as f64 / 11.0);
            let j = besselj(n, x).unwrap();
            let y = bessely(n, x).unwrap();
            let w = j.value * y.derivative - j.derivative * y.value;
            let exact = 2.0 / (std::f64::consts::PI * x);
            if ((w - exact) / exact).abs() > 1e-10 {
                ok = false;
            }
        }
    }
    report("cylinder-function wronskians", ok, &mut all_ok);

    // kernel table: resonance scan (the waveguide kernel carries the
    // cutoff diagnostics regardless of the configured solver kernel)
    match build_kernel_table_with(
        cylsound_core::greens::KernelKind::Waveguide,
        omega,
        &geom,
        &cfg.grid,
        eps,
    ) {
        Ok(table) => {
            report("resonance scan", table.flags.is_empty(), &mut all_ok);
            if !table.flags.is_empty() {
                resonance_hit = true;
                println!("  flagged modes: {:?}", table.flags);
            }
        }
        Err(CoreError::Resonance { modes }) => {
            report("resonance scan", false, &mut all_ok);
            resonance_hit = true;
            println!("  resonant modes (undamped): {modes:?}");
        }
        Err(e) => return Err(e),
    }

    // pointwise kernel probes on the configured frequency
    let probe_eps = if eps > 0.0 { eps } else { 1e-6 };
    let mid_m = grids.omega_z[cfg.grid.nz / 4];
    let mut sym_ok = true;
    let mut wall_ok = true;
    let mut jump_ok = true;
    let mut ode_ok = true;
    for &(n, om_ax) in &[(0i64, 0.0), (2, mid_m), (5, grids.omega_z[1])] {
        let k = radial_kernel(n, om_ax, omega, &geom, probe_eps)?;
        let (ra, rb) = (0.31 * geom.a, 0.77 * geom.a);
        let g1 = k.eval(ra, rb)?;
        let g2 = k.eval(rb, ra)?;
        if (g1 - g2).norm() > 1e-12 * g1.norm().max(1e-300) {
            sym_ok = false;
        }

        let h = 1e-5;
        let rp = 0.6 * geom.a;
        let g0 = k.eval(geom.b, rp)?;
        let gm1 = k.eval(geom.b - h, rp)?;
        let gm2 = k.eval(geom.b - 2.0 * h, rp)?;
        let wall = (3.0 * g0 - 4.0 * gm1 + gm2) / (2.0 * h);
        let scale = g0.norm().max(gm1.norm());
        if scale > 0.0 && wall.norm() > 1e-3 * scale {
            wall_ok = false;
        }

        let hj = 1e-4;
        let right = (k.eval(rp + hj, rp)? - k.eval(rp, rp)?) / hj;
        let left = (k.eval(rp, rp)? - k.eval(rp - hj, rp)?) / hj;
        let jump = (right - left).re;
        let expected = 1.0 / (2.0 * std::f64::consts::PI * rp);
        if ((jump - expected) / expected).abs() > 1e-2 {
            jump_ok = false;
        }

        // interior equation residual by a small central stencil
        let r = 0.5 * (geom.r0 + geom.b);
        let hr = 1e-4;
        let g = k.eval(r, rp)?;
        let gp = k.eval(r + hr, rp)?;
        let gm = k.eval(r - hr, rp)?;
        let d2 = (gp - 2.0 * g + gm) / (hr * hr);
        let d1 = (gp - gm) / (2.0 * hr);
        let kappa_sq = omega * omega - om_ax * om_ax;
        let residual = d2 + d1 / r - (n * n) as f64 / (r * r) * g
            + num_complex::Complex64::from(kappa_sq) * g;
        let scale = (kappa_sq.abs() + (n * n) as f64 / (r * r) + 1.0) * g.norm();
        if scale > 0.0 && residual.norm() > 1e-4 * scale {
            ode_ok = false;
        }
    }
    report("kernel symmetry", sym_ok, &mut all_ok);
    report("neumann wall derivative", wall_ok, &mut all_ok);
    report("point-source jump", jump_ok, &mut all_ok);
    report("modal equation residual", ode_ok, &mut all_ok);

    if all_ok {
        Ok(0)
    } else if resonance_hit {
        Ok(4)
    } else {
        Ok(1)
    }
}
