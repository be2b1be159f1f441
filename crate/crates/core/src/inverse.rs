//! Regularized inversion: per-mode first-kind solves, field resynthesis,
//! and pointwise division down to the contrast.
//!
//! Discretizing the observation-layer integral equation turns each mode
//! `(n, Omega_m)` into a dense complex system `A V = W` with
//! `A = [mu_j G_n(r_i, r'_j, Omega_m) r'_j]` and `W = w_n / (2 pi omega^2)`.
//! The systems are tiny but severely ill-conditioned; truncated SVD (the
//! minimal-norm least-squares solution of the truncated operator) and
//! Tikhonov filtering are provided, with the regularization strength
//! selectable directly or through the discrepancy principle.
//!
//! The truncation rule is scale-aware: by default the cutoff is relative
//! to the largest singular value across all modes of a frequency, so
//! modes whose entire spectrum sits at the evanescent floor contribute
//! nothing instead of amplifying rounding noise.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::fields::{ModalField, PhysicalField, Region};
use crate::forward::apply_modal_kernel;
use crate::greens::{
    build_kernel_table_with, incident_field_with, KernelKind, ModalKernelTable, SourceSet,
};
#[cfg(test)]
use crate::greens::{build_kernel_table, incident_field};
use crate::grids::{make_grids, Geometry, Grids};
use crate::transforms::Transformer;

const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

/// Shared factorization of one distinct radial system.
#[derive(Debug)]
pub struct RadialSvdCore {
    pub a: DMatrix<Complex64>,
    pub u: DMatrix<Complex64>,
    pub v_t: DMatrix<Complex64>,
    /// Singular values, descending.
    pub sigma: DVector<f64>,
}

impl RadialSvdCore {
    pub fn new(a: DMatrix<Complex64>) -> Self {
        let svd = a.clone().svd(true, true);
        RadialSvdCore {
            a,
            u: svd.u.expect("left vectors requested"),
            v_t: svd.v_t.expect("right vectors requested"),
            sigma: svd.singular_values,
        }
    }

    pub fn sigma1(&self) -> f64 {
        if self.sigma.is_empty() {
            0.0
        } else {
            self.sigma[0]
        }
    }
}

/// One mode's system: labels plus the (possibly shared) factorization.
#[derive(Debug, Clone)]
pub struct RadialOperator {
    pub n_bin: usize,
    pub m_bin: usize,
    pub n_signed: i64,
    pub flagged: bool,
    pub core: Arc<RadialSvdCore>,
}

/// Build and factorize the per-mode systems of a kernel table.
///
/// Kernels depend on `(|n|, |Omega|)` only, so the factorizations are
/// computed once per distinct pair and shared across mirrored modes; the
/// returned list still carries one entry per `(n, m)` bin pair.
pub fn assemble_operators(
    table: &ModalKernelTable,
    grids: &Grids,
) -> Result<Vec<RadialOperator>> {
    let spec = table.spec;
    let dist_n = spec.distinct_orders();
    let dist_m = spec.distinct_freqs();
    let weights: Vec<f64> = grids
        .wrp
        .iter()
        .zip(&grids.rp)
        .map(|(&w, &r)| w * r)
        .collect();

    let pairs: Vec<(usize, usize)> = (0..dist_n)
        .flat_map(|dn| (0..dist_m).map(move |dm| (dn, dm)))
        .collect();
    let cores: Vec<Arc<RadialSvdCore>> = pairs
        .par_iter()
        .map(|&(dn, dm)| {
            // any bin pair mapping onto (dn, dm); bins dn and dm do
            let kernel = table.y_kernel(dn, dm);
            let a = DMatrix::from_fn(spec.nr, spec.nrp, |i, j| kernel[(i, j)] * weights[j]);
            Arc::new(RadialSvdCore::new(a))
        })
        .collect();

    let flagged: std::collections::HashSet<(i64, usize)> =
        table.flags.iter().copied().collect();
    let mut ops = Vec::with_capacity(spec.nphi * spec.nz);
    for n_bin in 0..spec.nphi {
        let n_signed = spec.order_of_bin(n_bin);
        let dn = n_signed.unsigned_abs() as usize;
        for m_bin in 0..spec.nz {
            let dm = if m_bin == 0 {
                0
            } else {
                m_bin.min(spec.nz - m_bin)
            };
            ops.push(RadialOperator {
                n_bin,
                m_bin,
                n_signed,
                flagged: flagged.contains(&(n_signed, m_bin)),
                core: Arc::clone(&cores[dn * dist_m + dm]),
            });
        }
    }
    Ok(ops)
}

/// Truncated-SVD solution keeping components with `sigma_k >= threshold_rel * sigma_1`.
///
/// Returns the minimal-norm least-squares solution of the truncated
/// operator and the retained rank (zero if every singular value falls
/// below the threshold).
pub fn tsvd_solve(
    core: &RadialSvdCore,
    rhs: &DVector<Complex64>,
    threshold_rel: f64,
) -> (DVector<Complex64>, usize) {
    let cutoff = threshold_rel * core.sigma1();
    tsvd_solve_cutoff(core, rhs, cutoff)
}

/// Truncated-SVD solution with an absolute singular-value cutoff.
pub fn tsvd_solve_cutoff(
    core: &RadialSvdCore,
    rhs: &DVector<Complex64>,
    sigma_cutoff: f64,
) -> (DVector<Complex64>, usize) {
    tsvd_solve_guarded(core, rhs, sigma_cutoff, 0.0)
}

/// Truncated-SVD solution with both a singular-value cutoff and a data
/// floor: directions whose data coefficient `u_k^* W` falls below
/// `coef_floor` carry no measurable signal and are skipped rather than
/// amplified by `1/sigma_k`.
pub fn tsvd_solve_guarded(
    core: &RadialSvdCore,
    rhs: &DVector<Complex64>,
    sigma_cutoff: f64,
    coef_floor: f64,
) -> (DVector<Complex64>, usize) {
    let mut v = DVector::zeros(core.v_t.ncols());
    let mut rank = 0;
    for k in 0..core.sigma.len() {
        let s = core.sigma[k];
        if !(s >= sigma_cutoff) || s == 0.0 {
            break;
        }
        let coef = core.u.column(k).dotc(rhs);
        rank = k + 1;
        if coef_floor > 0.0 && coef.norm() < coef_floor {
            continue;
        }
        v.axpy(
            coef / s,
            &core.v_t.row(k).transpose().conjugate(),
            Complex64::new(1.0, 0.0),
        );
    }
    (v, rank)
}

/// Truncated-SVD rank chosen by the discrepancy principle: components are
/// added (largest singular value first) until the residual drops to
/// `target`, never using singular values below `sigma_floor`.
pub fn tsvd_solve_discrepancy(
    core: &RadialSvdCore,
    rhs: &DVector<Complex64>,
    target: f64,
    sigma_floor: f64,
) -> (DVector<Complex64>, usize) {
    tsvd_solve_discrepancy_guarded(core, rhs, target, sigma_floor, 0.0)
}

/// Discrepancy-rank solve with the data-coefficient guard of
/// [`tsvd_solve_guarded`].
pub fn tsvd_solve_discrepancy_guarded(
    core: &RadialSvdCore,
    rhs: &DVector<Complex64>,
    target: f64,
    sigma_floor: f64,
    coef_floor: f64,
) -> (DVector<Complex64>, usize) {
    let mut v = DVector::zeros(core.v_t.ncols());
    let mut residual_sq = rhs.norm_squared();
    let mut rank = 0;
    for k in 0..core.sigma.len() {
        if residual_sq.sqrt() <= target {
            break;
        }
        let s = core.sigma[k];
        if !(s >= sigma_floor) || s == 0.0 {
            break;
        }
        let proj = core.u.column(k).dotc(rhs);
        rank = k + 1;
        if coef_floor > 0.0 && proj.norm() < coef_floor {
            continue;
        }
        v.axpy(
            proj / s,
            &core.v_t.row(k).transpose().conjugate(),
            Complex64::new(1.0, 0.0),
        );
        residual_sq = (residual_sq - proj.norm_sqr()).max(0.0);
    }
    (v, rank)
}

/// Tikhonov-filtered solution `V = sum sigma_k (u_k^* rhs) / (sigma_k^2 + alpha) v_k`.
pub fn tikhonov_solve(
    core: &RadialSvdCore,
    rhs: &DVector<Complex64>,
    alpha: f64,
) -> DVector<Complex64> {
    let mut v = DVector::zeros(core.v_t.ncols());
    for k in 0..core.sigma.len() {
        let s = core.sigma[k];
        if s == 0.0 {
            break;
        }
        let coef = core.u.column(k).dotc(rhs) * (s / (s * s + alpha));
        v.axpy(coef, &core.v_t.row(k).transpose().conjugate(), Complex64::new(1.0, 0.0));
    }
    v
}

fn tikhonov_residual(core: &RadialSvdCore, coeffs: &[Complex64], perp_sq: f64, alpha: f64) -> f64 {
    let mut r = perp_sq;
    for (k, c) in coeffs.iter().enumerate() {
        let s = core.sigma[k];
        let f = alpha / (s * s + alpha);
        r += c.norm_sqr() * f * f;
    }
    r.sqrt()
}

/// Pick the Tikhonov parameter by bisection so the residual matches
/// `delta * ||rhs||` (within 2%). Returns `(solution, alpha, hit_edge)`;
/// `hit_edge` marks an unattainable target clamped at a bracket end.
pub fn tikhonov_discrepancy(
    core: &RadialSvdCore,
    rhs: &DVector<Complex64>,
    delta: f64,
) -> (DVector<Complex64>, f64, bool) {
    let coeffs: Vec<Complex64> = (0..core.sigma.len())
        .map(|k| core.u.column(k).dotc(rhs))
        .collect();
    let explained: f64 = coeffs.iter().map(|c| c.norm_sqr()).sum();
    let perp_sq = (rhs.norm_squared() - explained).max(0.0);
    let target = delta * rhs.norm();

    let s1 = core.sigma1().max(f64::MIN_POSITIVE);
    let mut lo = 1e-16 * s1 * s1;
    let mut hi = 1e8 * s1 * s1;
    let r_lo = tikhonov_residual(core, &coeffs, perp_sq, lo);
    let r_hi = tikhonov_residual(core, &coeffs, perp_sq, hi);
    if target <= r_lo {
        return (tikhonov_solve(core, rhs, lo), lo, true);
    }
    if target >= r_hi {
        return (tikhonov_solve(core, rhs, hi), hi, true);
    }
    for _ in 0..200 {
        let mid = (lo.ln() + hi.ln()).mul_add(0.5, 0.0).exp();
        let r = tikhonov_residual(core, &coeffs, perp_sq, mid);
        if (r - target).abs() <= 0.02 * target {
            return (tikhonov_solve(core, rhs, mid), mid, false);
        }
        if r < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let alpha = (lo.ln() + hi.ln()).mul_add(0.5, 0.0).exp();
    (tikhonov_solve(core, rhs, alpha), alpha, false)
}

/// Regularization method selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegMethod {
    Tsvd,
    Tikhonov,
}

/// How reconstructions from several frequencies combine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OmegaCombine {
    /// Report the first frequency's reconstruction.
    Single,
    ArithmeticMean,
}

/// Optional spatial postprocessing of the recovered contrast.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PostFilter {
    None,
    /// 3x3x3 median over (r, phi, z), periodic in the angle.
    Median3,
}

/// Regularization and division parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegSettings {
    pub method: RegMethod,
    /// TSVD cutoff, relative to the reference singular value.
    pub tsvd_rel_threshold: f64,
    /// Reference for the cutoff: the largest singular value across all
    /// modes (true) or of each mode's own matrix (false).
    pub tsvd_global_floor: bool,
    /// Data floor, relative to the strongest mode's right-hand side:
    /// singular directions whose data coefficient falls below it are
    /// treated as unmeasured (guards rounding-noise amplification).
    pub coef_floor_rel: f64,
    /// Fixed Tikhonov parameter; `None` selects the discrepancy rule.
    pub tikhonov_alpha: Option<f64>,
    /// Discrepancy target for Tikhonov when no fixed alpha is given.
    pub discrepancy_delta: Option<f64>,
    /// Known relative data-noise level; switches TSVD to a
    /// discrepancy-consistent rank per mode.
    pub noise_delta: Option<f64>,
    /// Pointwise division guard, relative to the largest |u| on the grid.
    pub div_tol: f64,
    pub omega_combine: OmegaCombine,
    /// Postprocessing applied to each recovered contrast field.
    pub postfilter: PostFilter,
}

impl Default for RegSettings {
    fn default() -> Self {
        RegSettings {
            method: RegMethod::Tsvd,
            tsvd_rel_threshold: 1e-10,
            tsvd_global_floor: false,
            coef_floor_rel: 1e-13,
            tikhonov_alpha: None,
            discrepancy_delta: None,
            noise_delta: None,
            div_tol: 1e-12,
            omega_combine: OmegaCombine::Single,
            postfilter: PostFilter::None,
        }
    }
}

impl RegSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.tsvd_rel_threshold > 0.0 && self.tsvd_rel_threshold < 1.0) {
            return Err(CoreError::validation(
                "regularization.tsvd_rel_threshold",
                "must lie in (0, 1)",
            ));
        }
        if !(self.coef_floor_rel >= 0.0) {
            return Err(CoreError::validation(
                "regularization.coef_floor_rel",
                "must be >= 0",
            ));
        }
        if !(self.div_tol > 0.0) {
            return Err(CoreError::validation(
                "regularization.div_tol",
                "must be positive",
            ));
        }
        if let Some(a) = self.tikhonov_alpha {
            if !(a > 0.0) {
                return Err(CoreError::validation(
                    "regularization.tikhonov_alpha",
                    "must be positive",
                ));
            }
        }
        for (name, v) in [
            ("regularization.discrepancy_delta", self.discrepancy_delta),
            ("regularization.noise_delta", self.noise_delta),
        ] {
            if let Some(d) = v {
                if !(d >= 0.0 && d < 1.0) {
                    return Err(CoreError::validation(name, "must lie in [0, 1)"));
                }
            }
        }
        Ok(())
    }
}

/// Per-mode solve diagnostics.
#[derive(Debug, Clone, Copy)]
pub struct ModeDiag {
    pub n_signed: i64,
    pub m_bin: usize,
    pub rank: usize,
    pub sigma1: f64,
    /// `||A V - W|| / ||W||`, zero for empty right-hand sides.
    pub residual_rel: f64,
    pub rhs_norm: f64,
    pub flagged: bool,
}

/// Solve every mode of the data field and rebuild the interior fields.
pub fn recover_fields(
    ops: &[RadialOperator],
    w_modal: &ModalField,
    u0_modal: &ModalField,
    table: &ModalKernelTable,
    grids: &Grids,
    reg: &RegSettings,
) -> Result<(ModalField, ModalField, Vec<ModeDiag>)> {
    reg.validate()?;
    let spec = table.spec;
    if w_modal.spec != spec || w_modal.region != Region::Y {
        return Err(CoreError::ShapeMismatch {
            expected: "data on the observation modal grid".into(),
            found: format!("{:?} on {:?}", w_modal.spec, w_modal.region),
        });
    }
    let omega = table.omega;
    let rhs_scale = 1.0 / (TWO_PI * omega * omega);
    let sigma_ref = if reg.tsvd_global_floor {
        ops.iter()
            .map(|op| op.core.sigma1())
            .fold(0.0f64, f64::max)
    } else {
        0.0
    };
    let rhs_max = if reg.coef_floor_rel > 0.0 {
        ops.iter()
            .map(|op| {
                let mut s = 0.0;
                for i in 0..spec.nr {
                    s += w_modal.values[(op.n_bin, op.m_bin, i)].norm_sqr();
                }
                s.sqrt() * rhs_scale
            })
            .fold(0.0f64, f64::max)
    } else {
        0.0
    };
    // physical-space noise spreads roughly uniformly over the modal
    // coefficients, so the measured-signal floor must not sink below the
    // global noise scale
    let floor_rel = reg
        .coef_floor_rel
        .max(reg.noise_delta.unwrap_or(0.0));
    let coef_floor = floor_rel * rhs_max;

    let solved: Vec<(usize, usize, DVector<Complex64>, ModeDiag)> = ops
        .par_iter()
        .map(|op| {
            let rhs = DVector::from_fn(spec.nr, |i, _| {
                w_modal.values[(op.n_bin, op.m_bin, i)] * rhs_scale
            });
            let rhs_norm = rhs.norm();
            let cutoff = if reg.tsvd_global_floor {
                reg.tsvd_rel_threshold * sigma_ref
            } else {
                reg.tsvd_rel_threshold * op.core.sigma1()
            };
            let (v, rank) = match reg.method {
                RegMethod::Tsvd => match reg.noise_delta {
                    Some(delta) if delta > 0.0 => tsvd_solve_discrepancy_guarded(
                        &op.core,
                        &rhs,
                        delta * rhs_norm,
                        cutoff,
                        coef_floor,
                    ),
                    _ => tsvd_solve_guarded(&op.core, &rhs, cutoff, coef_floor),
                },
                RegMethod::Tikhonov => {
                    let v = match (reg.tikhonov_alpha, reg.discrepancy_delta, reg.noise_delta) {
                        (Some(alpha), _, _) => tikhonov_solve(&op.core, &rhs, alpha),
                        (None, Some(delta), _) | (None, None, Some(delta)) => {
                            tikhonov_discrepancy(&op.core, &rhs, delta).0
                        }
                        (None, None, None) => {
                            // parameter-free fallback: filter at the rounding floor
                            let s1 = op.core.sigma1();
                            tikhonov_solve(&op.core, &rhs, 1e-14 * s1 * s1)
                        }
                    };
                    let rank = op.core.sigma.len();
                    (v, rank)
                }
            };
            let residual_rel = if rhs_norm > 0.0 {
                (&op.core.a * &v - &rhs).norm() / rhs_norm
            } else {
                0.0
            };
            let diag = ModeDiag {
                n_signed: op.n_signed,
                m_bin: op.m_bin,
                rank,
                sigma1: op.core.sigma1(),
                residual_rel,
                rhs_norm,
                flagged: op.flagged,
            };
            (op.n_bin, op.m_bin, v, diag)
        })
        .collect();

    let mut v_modal = ModalField::zeros(&spec, Region::X, omega);
    let mut diags = Vec::with_capacity(solved.len());
    for (n_bin, m_bin, v, diag) in solved {
        for i in 0..spec.nrp {
            v_modal.values[(n_bin, m_bin, i)] = v[i];
        }
        diags.push(diag);
    }
    diags.sort_by_key(|d| (d.n_signed, d.m_bin));

    let mut u_modal = apply_modal_kernel(table, grids, &v_modal, Region::X)?;
    for (u, u0) in u_modal.values.iter_mut().zip(u0_modal.values.iter()) {
        *u += u0;
    }
    Ok((v_modal, u_modal, diags))
}

/// Pointwise contrast recovery `xi = v/u`, guarded by
/// `|u| > div_tol * max|u|` (the threshold on a dimensionful field is
/// only meaningful relative to its own scale).
///
/// Returns the real part as the contrast plus the relative norm of the
/// imaginary residue (a consistency diagnostic, not an error).
pub fn divide_fields(
    v_phys: &PhysicalField,
    u_phys: &PhysicalField,
    div_tol: f64,
) -> Result<(PhysicalField, f64)> {
    if !v_phys.same_layout(u_phys) {
        return Err(CoreError::ShapeMismatch {
            expected: format!("{:?}", v_phys.values.dim()),
            found: format!("{:?}", u_phys.values.dim()),
        });
    }
    let u_scale = u_phys
        .values
        .iter()
        .fold(0.0f64, |acc, v| acc.max(v.norm()));
    let div_tol = div_tol * u_scale;
    let mut xi = PhysicalField::zeros(&v_phys.spec, v_phys.region, None);
    let mut imag_sq = 0.0;
    let mut full_sq = 0.0;
    for ((out, v), u) in xi
        .values
        .iter_mut()
        .zip(v_phys.values.iter())
        .zip(u_phys.values.iter())
    {
        if u.norm() > div_tol {
            let q = v / u;
            imag_sq += q.im * q.im;
            full_sq += q.norm_sqr();
            *out = Complex64::new(q.re, 0.0);
        }
    }
    let residue = if full_sq > 0.0 {
        (imag_sq / full_sq).sqrt()
    } else {
        0.0
    };
    Ok((xi, residue))
}

/// 3x3x3 median filter on the real part of a field, periodic in the
/// angle, clamped radially and axially.
pub fn median_filter3(f: &PhysicalField) -> PhysicalField {
    let (nr, np, nz) = f.values.dim();
    let mut out = f.clone();
    let mut window = Vec::with_capacity(27);
    for i in 0..nr {
        for j in 0..np {
            for l in 0..nz {
                window.clear();
                for di in -1i64..=1 {
                    let ii = i as i64 + di;
                    if ii < 0 || ii >= nr as i64 {
                        continue;
                    }
                    for dj in -1i64..=1 {
                        let jj = (j as i64 + dj).rem_euclid(np as i64) as usize;
                        for dl in -1i64..=1 {
                            let ll = l as i64 + dl;
                            if ll < 0 || ll >= nz as i64 {
                                continue;
                            }
                            window.push(f.values[(ii as usize, jj, ll as usize)].re);
                        }
                    }
                }
                window.sort_by(|a, b| a.partial_cmp(b).unwrap());
                out.values[(i, j, l)] = Complex64::new(window[window.len() / 2], 0.0);
            }
        }
    }
    out
}

/// Sound speed from the contrast: `c = 1/sqrt(1 - xi)` where defined.
/// Points violating `1 - xi > 0` are set to zero and counted.
pub fn sound_speed(xi: &PhysicalField) -> (PhysicalField, usize) {
    let mut c = PhysicalField::zeros(&xi.spec, xi.region, None);
    let mut violations = 0;
    for (out, v) in c.values.iter_mut().zip(xi.values.iter()) {
        let denom = 1.0 - v.re;
        if denom > 0.0 {
            *out = Complex64::new(1.0 / denom.sqrt(), 0.0);
        } else {
            violations += 1;
        }
    }
    (c, violations)
}

/// Reconstruction for one frequency.
#[derive(Debug)]
pub struct OmegaRecon {
    pub omega: f64,
    pub xi: PhysicalField,
    pub v_phys: PhysicalField,
    pub u_phys: PhysicalField,
    pub diags: Vec<ModeDiag>,
    pub imag_residue: f64,
    pub step1_seconds: f64,
    pub total_seconds: f64,
}

/// Full output of the inversion pipeline.
#[derive(Debug)]
pub struct ReconstructionResult {
    /// Combined contrast (per [`OmegaCombine`]).
    pub xi: PhysicalField,
    pub per_omega: Vec<OmegaRecon>,
    /// Sound speed recovered from the combined contrast.
    pub c_field: PhysicalField,
    pub c_violations: usize,
    pub settings: RegSettings,
    pub wall_seconds: f64,
    /// Factorize-and-solve time summed over frequencies.
    pub step1_seconds: f64,
}

/// Invert measured data for one or more frequencies.
///
/// `data` pairs each frequency with its observation-layer field. The
/// per-frequency pipeline is: modal transform, per-mode regularized
/// solves, interior resynthesis, pointwise division; multiple
/// frequencies combine per `settings.omega_combine`.
pub fn run_inverse(
    data: &[(f64, PhysicalField)],
    sources: &SourceSet,
    geom: &Geometry,
    kind: KernelKind,
    eps: f64,
    settings: &RegSettings,
) -> Result<ReconstructionResult> {
    settings.validate()?;
    if data.is_empty() {
        return Err(CoreError::validation("data", "no frequencies supplied"));
    }
    let start = std::time::Instant::now();
    let mut per_omega = Vec::with_capacity(data.len());
    let mut step1_total = 0.0;
    for (omega, w_phys) in data {
        if !(*omega > 0.0) {
            return Err(CoreError::validation("omegas", "must be positive"));
        }
        let t_omega = std::time::Instant::now();
        let spec = w_phys.spec;
        let grids = make_grids(geom, &spec)?;
        let transformer = Transformer::new(&grids);
        let table = build_kernel_table_with(kind, *omega, geom, &spec, eps)?;
        let (u0_modal, _) = incident_field_with(kind, sources, *omega, geom, &spec, eps)?;
        let mut w = w_phys.clone();
        w.omega = Some(*omega);
        let w_modal = transformer.to_modal(&w)?;

        let t_step1 = std::time::Instant::now();
        let ops = assemble_operators(&table, &grids)?;
        let (v_modal, u_modal, diags) =
            recover_fields(&ops, &w_modal, &u0_modal, &table, &grids, settings)?;
        let step1 = t_step1.elapsed().as_secs_f64();
        step1_total += step1;

        let v_phys = transformer.to_physical(&v_modal)?;
        let u_phys = transformer.to_physical(&u_modal)?;
        let (xi, imag_residue) = divide_fields(&v_phys, &u_phys, settings.div_tol)?;
        let xi = match settings.postfilter {
            PostFilter::None => xi,
            PostFilter::Median3 => median_filter3(&xi),
        };
        per_omega.push(OmegaRecon {
            omega: *omega,
            xi,
            v_phys,
            u_phys,
            diags,
            imag_residue,
            step1_seconds: step1,
            total_seconds: t_omega.elapsed().as_secs_f64(),
        });
    }

    let xi = match settings.omega_combine {
        OmegaCombine::Single => per_omega[0].xi.clone(),
        OmegaCombine::ArithmeticMean => {
            let mut acc = per_omega[0].xi.clone();
            for rec in per_omega.iter().skip(1) {
                for (a, b) in acc.values.iter_mut().zip(rec.xi.values.iter()) {
                    *a += b;
                }
            }
            let scale = 1.0 / per_omega.len() as f64;
            for a in acc.values.iter_mut() {
                *a *= scale;
            }
            acc
        }
    };
    let (c_field, c_violations) = sound_speed(&xi);

    Ok(ReconstructionResult {
        xi,
        per_omega,
        c_field,
        c_violations,
        settings: *settings,
        wall_seconds: start.elapsed().as_secs_f64(),
        step1_seconds: step1_total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testsupport::{rng_complex_vec, seeded_rng};

    fn random_system(
        rng: &mut rand_chacha::ChaCha8Rng,
        nr: usize,
        nc: usize,
    ) -> (RadialSvdCore, DVector<Complex64>) {
        let a = DMatrix::from_vec(nr, nc, rng_complex_vec(rng, nr * nc));
        let rhs = DVector::from_vec(rng_complex_vec(rng, nr));
        (RadialSvdCore::new(a), rhs)
    }

    /// Dense complex linear solve by Gaussian elimination with partial
    /// pivoting; test-side oracle, independent of the SVD path.
    fn gauss_solve(a: &DMatrix<Complex64>, b: &DVector<Complex64>) -> DVector<Complex64> {
        let n = a.nrows();
        let mut m = a.clone();
        let mut rhs = b.clone();
        for col in 0..n {
            let mut piv = col;
            for r in col + 1..n {
                if m[(r, col)].norm() > m[(piv, col)].norm() {
                    piv = r;
                }
            }
            if piv != col {
                m.swap_rows(col, piv);
                rhs.swap_rows(col, piv);
            }
            let d = m[(col, col)];
            for r in col + 1..n {
                let f = m[(r, col)] / d;
                for c in col..n {
                    let v = m[(col, c)];
                    m[(r, c)] -= f * v;
                }
                let v = rhs[col];
                rhs[r] -= f * v;
            }
        }
        let mut x = DVector::zeros(n);
        for row in (0..n).rev() {
            let mut acc = rhs[row];
            for c in row + 1..n {
                acc -= m[(row, c)] * x[c];
            }
            x[row] = acc / m[(row, row)];
        }
        x
    }

    #[test]
    fn tsvd_truncates_tiny_directions() {
        // diag(1, 1e-16) embedded in a 2x3 system
        let mut a = DMatrix::zeros(2, 3);
        a[(0, 0)] = Complex64::new(1.0, 0.0);
        a[(1, 1)] = Complex64::new(1e-16, 0.0);
        let core = RadialSvdCore::new(a);
        let rhs = DVector::from_vec(vec![Complex64::new(2.0, 0.0), Complex64::new(3.0, 0.0)]);
        let (v, rank) = tsvd_solve(&core, &rhs, 1e-8);
        assert_eq!(rank, 1);
        assert!((v[0] - Complex64::new(2.0, 0.0)).norm() < 1e-14);
        assert!(v[1].norm() == 0.0 && v[2].norm() == 0.0);

        let (v0, r0) = tsvd_solve(&core, &DVector::zeros(2), 1e-8);
        assert_eq!(r0, 1); // rank counts retained directions, not content
        assert!(v0.iter().all(|c| c.norm() == 0.0));
    }

    #[test]
    fn tsvd_matches_minimal_norm_pseudoinverse_oracle() {
        let mut rng = seeded_rng(31);
        for _ in 0..20 {
            let (core, rhs) = random_system(&mut rng, 6, 7);
            let (v, rank) = tsvd_solve(&core, &rhs, 1e-12);
            assert_eq!(rank, 6);
            // minimal-norm solution: V = A^H (A A^H)^{-1} rhs
            let aah = &core.a * core.a.adjoint();
            let y = gauss_solve(&aah, &rhs);
            let oracle = core.a.adjoint() * y;
            assert!(
                (&v - &oracle).norm() <= 1e-8 * oracle.norm(),
                "{:e}",
                (&v - &oracle).norm() / oracle.norm()
            );
        }
    }

    #[test]
    fn tsvd_residual_monotone_in_rank() {
        let mut rng = seeded_rng(77);
        let (core, rhs) = random_system(&mut rng, 8, 9);
        let mut prev = f64::INFINITY;
        for k in 0..=8 {
            let thr = if k == 0 {
                2.0 // everything truncated
            } else {
                (core.sigma[k - 1] / core.sigma1()) * 0.999999
            };
            let (v, rank) = tsvd_solve(&core, &rhs, thr);
            assert_eq!(rank, k);
            let r = (&core.a * v - &rhs).norm();
            assert!(r <= prev + 1e-13, "rank {k}: {r} > {prev}");
            prev = r;
        }
    }

    #[test]
    fn tsvd_solution_lies_in_retained_row_space() {
        // normal-solution property via an independent projector: modified
        // Gram-Schmidt on the rows of the truncated operator
        let mut rng = seeded_rng(53);
        let (core, rhs) = random_system(&mut rng, 5, 8);
        let keep = 3usize;
        let thr = (core.sigma[keep - 1] / core.sigma1()) * 0.999999;
        let (v, rank) = tsvd_solve(&core, &rhs, thr);
        assert_eq!(rank, keep);

        // truncated operator rebuilt from the factors
        let mut a_trunc: DMatrix<Complex64> = DMatrix::zeros(5, 8);
        for k in 0..keep {
            let col = core.u.column(k).into_owned();
            let row = core.v_t.row(k).into_owned();
            a_trunc += (col * row).scale(core.sigma[k]);
        }
        let mut basis: Vec<DVector<Complex64>> = Vec::new();
        for i in 0..a_trunc.nrows() {
            let mut r = a_trunc.row(i).transpose().conjugate();
            for b in &basis {
                let p = b.dotc(&r);
                r.axpy(-p, b, Complex64::new(1.0, 0.0));
            }
            // re-orthogonalize once
            for b in &basis {
                let p = b.dotc(&r);
                r.axpy(-p, b, Complex64::new(1.0, 0.0));
            }
            if r.norm() > 1e-10 {
                let n = r.norm();
                basis.push(r.unscale(n));
            }
        }
        assert_eq!(basis.len(), keep);
        let mut proj: DVector<Complex64> = DVector::zeros(8);
        for b in &basis {
            proj.axpy(b.dotc(&v), b, Complex64::new(1.0, 0.0));
        }
        assert!(
            (&v - &proj).norm() <= 1e-10 * v.norm(),
            "null-space leak {:e}",
            (&v - &proj).norm() / v.norm()
        );
    }

    #[test]
    fn tikhonov_limits_and_filter_identity() {
        let mut rng = seeded_rng(41);
        // full-rank square system: alpha -> 0 recovers the direct solution
        let a = DMatrix::from_vec(5, 5, rng_complex_vec(&mut rng, 25));
        let rhs = DVector::from_vec(rng_complex_vec(&mut rng, 5));
        let direct = gauss_solve(&a, &rhs);
        let core = RadialSvdCore::new(a.clone());
        let s1 = core.sigma1();
        let v = tikhonov_solve(&core, &rhs, 1e-14 * s1 * s1);
        assert!((&v - &direct).norm() <= 1e-6 * direct.norm());

        // alpha -> infinity kills the solution
        let v_inf = tikhonov_solve(&core, &rhs, 1e18 * s1 * s1);
        assert!(v_inf.norm() <= 1e-12 * direct.norm());

        // rectangular filter identity vs dense normal-equation oracle
        let (core, rhs) = random_system(&mut rng, 6, 7);
        let alpha = 1e-3;
        let v = tikhonov_solve(&core, &rhs, alpha);
        let mut lhs = core.a.adjoint() * &core.a;
        for i in 0..7 {
            lhs[(i, i)] += Complex64::new(alpha, 0.0);
        }
        let oracle = gauss_solve(&lhs, &(core.a.adjoint() * &rhs));
        assert!(
            (&v - &oracle).norm() <= 1e-10 * oracle.norm(),
            "{:e}",
            (&v - &oracle).norm() / oracle.norm()
        );
    }

    #[test]
    fn tikhonov_discrepancy_hits_target() {
        let mut rng = seeded_rng(59);
        for _ in 0..10 {
            let (core, rhs) = random_system(&mut rng, 6, 7);
            let delta = 0.05;
            let (v, _alpha, edge) = tikhonov_discrepancy(&core, &rhs, delta);
            assert!(!edge);
            let r = (&core.a * &v - &rhs).norm();
            let target = delta * rhs.norm();
            assert!(
                (r - target).abs() <= 0.05 * target,
                "residual {r} target {target}"
            );
        }
        // unattainable target: residual floor above delta * ||rhs||
        let (core, _) = random_system(&mut rng, 4, 3);
        // rhs partly outside the column space makes tiny targets unreachable
        let rhs = DVector::from_vec(rng_complex_vec(&mut rng, 4));
        let (_, _, edge) = tikhonov_discrepancy(&core, &rhs, 1e-15);
        assert!(edge);
    }

    #[test]
    fn division_guards_and_scaling() {
        let spec = crate::grids::GridSpec {
            nr: 4,
            nrp: 5,
            nphi: 8,
            nz: 8,
        };
        let mut u = PhysicalField::zeros(&spec, Region::X, Some(2.0));
        for (i, x) in u.values.iter_mut().enumerate() {
            *x = Complex64::new(0.3 + (i % 3) as f64, 0.1);
        }
        let mut v = u.clone();
        for x in v.values.iter_mut() {
            *x *= Complex64::new(2.0, 0.0);
        }
        let (xi, residue) = divide_fields(&v, &u, 1e-12).unwrap();
        assert!(xi.values.iter().all(|x| (x.re - 2.0).abs() < 1e-14));
        assert!(residue < 1e-14);

        let zero_u = PhysicalField::zeros(&spec, Region::X, Some(2.0));
        let (xi, _) = divide_fields(&v, &zero_u, 1e-12).unwrap();
        assert!(xi.values.iter().all(|x| x.norm() == 0.0));

        // a sub-region below tol stays exactly zero
        let mut u_mixed = u.clone();
        for j in 0..spec.nphi {
            for l in 0..spec.nz {
                u_mixed.values[(2, j, l)] = Complex64::new(1e-15, 0.0);
            }
        }
        let (xi, _) = divide_fields(&v, &u_mixed, 1e-12).unwrap();
        for j in 0..spec.nphi {
            for l in 0..spec.nz {
                assert_eq!(xi.values[(2, j, l)], Complex64::new(0.0, 0.0));
            }
        }
    }

    #[test]
    fn zero_data_recovers_incident_field() {
        let geom = Geometry::default();
        let spec = crate::grids::GridSpec {
            nr: 8,
            nrp: 9,
            nphi: 8,
            nz: 8,
        };
        let grids = make_grids(&geom, &spec).unwrap();
        let table = build_kernel_table(2.0, &geom, &spec, 1e-6).unwrap();
        let (u0, _) = incident_field(&SourceSet::default_eight(), 2.0, &geom, &spec, 1e-6).unwrap();
        let ops = assemble_operators(&table, &grids).unwrap();
        assert_eq!(ops.len(), 8 * 8);
        let w = ModalField::zeros(&spec, Region::Y, 2.0);
        let (v, u, diags) =
            recover_fields(&ops, &w, &u0, &table, &grids, &RegSettings::default()).unwrap();
        assert!(v.values.iter().all(|x| x.norm() == 0.0));
        for (a, b) in u.values.iter().zip(u0.values.iter()) {
            assert!((a - b).norm() <= 1e-14 * b.norm().max(1e-300));
        }
        assert!(diags.iter().all(|d| d.residual_rel == 0.0));
    }

    #[test]
    fn operator_count_and_shared_factorization() {
        let geom = Geometry::default();
        let spec = crate::grids::GridSpec::default();
        let grids = make_grids(&geom, &spec).unwrap();
        let table = build_kernel_table(3.0, &geom, &spec, 1e-6).unwrap();
        let ops = assemble_operators(&table, &grids).unwrap();
        assert_eq!(ops.len(), 90 * 64);
        assert_eq!(ops[0].core.a.nrows(), 32);
        assert_eq!(ops[0].core.a.ncols(), 33);
        // mirrored bins share their factorization
        let op_a = ops.iter().find(|o| o.n_bin == 1 && o.m_bin == 2).unwrap();
        let op_b = ops.iter().find(|o| o.n_bin == 89 && o.m_bin == 62).unwrap();
        assert!(Arc::ptr_eq(&op_a.core, &op_b.core));
        // singular values sorted descending with a sharp decay
        let s = &ops[0].core.sigma;
        for k in 1..s.len() {
            assert!(s[k] <= s[k - 1]);
        }
    }
}
