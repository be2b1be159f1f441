//! Reconstruction-error metrics, blob localization, and the scaling
//! benchmark.

use std::fmt::Write as _;

use crate::error::{CoreError, Result};
use crate::fields::{PhysicalField, Region};
use crate::forward::{run_forward_with, ForwardSettings};
use crate::greens::{build_kernel_table_with, incident_field_with, KernelKind, SourceSet};
use crate::grids::{make_grids, Geometry, GridSpec, Grids};
use crate::inverse::{run_inverse, RegSettings};
use crate::models::{sample_xi, ModelSpec};

/// Per-section relative error profile.
#[derive(Debug, Clone)]
pub struct SliceErrorTable {
    /// `(z, error)` rows, one per axial grid point.
    pub rows: Vec<(f64, f64)>,
}

impl SliceErrorTable {
    pub fn max_error(&self) -> f64 {
        self.rows.iter().fold(0.0f64, |acc, &(_, e)| acc.max(e))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("z,delta_l2\n");
        for &(z, e) in &self.rows {
            let _ = writeln!(out, "{z},{e}");
        }
        out
    }
}

/// Relative sectional error: for each z, the radially weighted disc norm
/// of the difference, normalized by the largest sectional norm of the
/// exact field.
pub fn slice_error(
    xi_appr: &PhysicalField,
    xi_exact: &PhysicalField,
    grids: &Grids,
) -> Result<SliceErrorTable> {
    if !xi_appr.same_layout(xi_exact) || xi_appr.region != Region::X {
        return Err(CoreError::ShapeMismatch {
            expected: "matching inner-grid fields".into(),
            found: "mismatched layouts".into(),
        });
    }
    let spec = xi_appr.spec;
    let mut diff_sq = vec![0.0f64; spec.nz];
    let mut exact_sq = vec![0.0f64; spec.nz];
    for (ir, (pa, pe)) in xi_appr
        .values
        .outer_iter()
        .zip(xi_exact.values.outer_iter())
        .enumerate()
    {
        let w = grids.wrp[ir] * grids.rp[ir] * grids.dphi;
        for (ra, re) in pa.outer_iter().zip(pe.outer_iter()) {
            for (l, (a, e)) in ra.iter().zip(re.iter()).enumerate() {
                diff_sq[l] += w * (a - e).norm_sqr();
                exact_sq[l] += w * e.norm_sqr();
            }
        }
    }
    let denom = exact_sq.iter().fold(0.0f64, |acc, &v| acc.max(v)).sqrt();
    if denom == 0.0 {
        return Err(CoreError::validation(
            "xi_exact",
            "sectional error is undefined for an identically zero exact field",
        ));
    }
    let rows = grids
        .z
        .iter()
        .enumerate()
        .map(|(l, &z)| (z, diff_sq[l].sqrt() / denom))
        .collect();
    Ok(SliceErrorTable { rows })
}

/// A connected above-threshold region of a sampled field.
#[derive(Debug, Clone)]
pub struct Blob {
    pub cells: usize,
    /// Field-weighted Cartesian centroid.
    pub centroid: [f64; 3],
    /// Integrated field value over the blob (cell-weighted).
    pub mass: f64,
}

/// Connected components of `{xi > frac * max xi}` under 6-neighborhood
/// adjacency (periodic in the angle), discarding components smaller than
/// `min_cells`.
pub fn localize_blobs(
    xi: &PhysicalField,
    grids: &Grids,
    frac: f64,
    min_cells: usize,
) -> Vec<Blob> {
    let (nr, np, nz) = xi.values.dim();
    let peak = xi.values.iter().fold(f64::NEG_INFINITY, |a, v| a.max(v.re));
    if !(peak > 0.0) {
        return Vec::new();
    }
    let thr = frac * peak;
    let idx = |i: usize, j: usize, l: usize| (i * np + j) * nz + l;
    let mask: Vec<bool> = {
        let mut m = vec![false; nr * np * nz];
        for i in 0..nr {
            for j in 0..np {
                for l in 0..nz {
                    m[idx(i, j, l)] = xi.values[(i, j, l)].re > thr;
                }
            }
        }
        m
    };
    let mut seen = vec![false; mask.len()];
    let mut blobs = Vec::new();
    for start in 0..mask.len() {
        if !mask[start] || seen[start] {
            continue;
        }
        let mut stack = vec![start];
        seen[start] = true;
        let mut cells = Vec::new();
        while let Some(cur) = stack.pop() {
            cells.push(cur);
            let l = cur % nz;
            let j = (cur / nz) % np;
            let i = cur / (np * nz);
            let mut push = |ii: usize, jj: usize, ll: usize| {
                let t = idx(ii, jj, ll);
                if mask[t] && !seen[t] {
                    seen[t] = true;
                    stack.push(t);
                }
            };
            if i > 0 {
                push(i - 1, j, l);
            }
            if i + 1 < nr {
                push(i + 1, j, l);
            }
            push(i, (j + 1) % np, l);
            push(i, (j + np - 1) % np, l);
            if l > 0 {
                push(i, j, l - 1);
            }
            if l + 1 < nz {
                push(i, j, l + 1);
            }
        }
        if cells.len() < min_cells {
            continue;
        }
        let mut mass = 0.0;
        let mut cx = [0.0f64; 3];
        for &c in &cells {
            let l = c % nz;
            let j = (c / nz) % np;
            let i = c / (np * nz);
            let r = grids.rp[i];
            let w = xi.values[(i, j, l)].re * (grids.wrp[i] * r).max(1e-300);
            let (x, y) = (r * grids.phi[j].cos(), r * grids.phi[j].sin());
            mass += w;
            cx[0] += w * x;
            cx[1] += w * y;
            cx[2] += w * grids.z[l];
        }
        for c in cx.iter_mut() {
            *c /= mass;
        }
        blobs.push(Blob {
            cells: cells.len(),
            centroid: cx,
            mass,
        });
    }
    blobs.sort_by(|a, b| b.mass.partial_cmp(&a.mass).unwrap());
    blobs
}

/// One benchmark measurement.
#[derive(Debug, Clone)]
pub struct BenchRecord {
    pub nr: usize,
    pub nphi: usize,
    pub nz: usize,
    pub omega: f64,
    pub t_total_seconds: f64,
    pub t_step1_seconds: f64,
    pub parallel: bool,
    pub hardware: String,
}

pub fn bench_csv_header() -> &'static str {
    "nr,nphi,nz,omega,t_total_s,t_step1_s,parallel,hardware\n"
}

pub fn bench_records_csv(records: &[BenchRecord]) -> String {
    let mut out = String::from(bench_csv_header());
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.nr, r.nphi, r.nz, r.omega, r.t_total_seconds, r.t_step1_seconds, r.parallel, r.hardware
        );
    }
    out
}

/// End-to-end timing of the inversion across grid configurations.
///
/// For each `(nr, nphi, nz)` the harness generates exact synthetic data,
/// inverts it, and records total and factorize-and-solve times.
pub fn run_bench(
    grid_list: &[(usize, usize, usize)],
    omega: f64,
    geom: &Geometry,
    model: &ModelSpec,
    sources: &SourceSet,
    kind: KernelKind,
    eps: f64,
    reg: &RegSettings,
    parallel: bool,
) -> Result<Vec<BenchRecord>> {
    let hardware = format!(
        "{} logical cores",
        std::thread::available_parallelism()
            .map(|n| n.get())
            .unwrap_or(1)
    );
    let mut records = Vec::with_capacity(grid_list.len());
    for &(nr, nphi, nz) in grid_list {
        let spec = GridSpec {
            nr,
            nrp: nr + 1,
            nphi,
            nz,
        };
        let grids = make_grids(geom, &spec)?;
        let xi = sample_xi(model, &grids);
        let table = build_kernel_table_with(kind, omega, geom, &spec, eps)?;
        let (u0, _) = incident_field_with(kind, sources, omega, geom, &spec, eps)?;
        let fwd = run_forward_with(&table, &grids, &u0, &xi, &ForwardSettings::default())?;

        let t0 = std::time::Instant::now();
        let recon = run_inverse(&[(omega, fwd.w_phys.clone())], sources, geom, kind, eps, reg)?;
        let t_total = t0.elapsed().as_secs_f64();
        records.push(BenchRecord {
            nr,
            nphi,
            nz,
            omega,
            t_total_seconds: t_total,
            t_step1_seconds: recon.step1_seconds,
            parallel,
            hardware: hardware.clone(),
        });
    }
    Ok(records)
}
