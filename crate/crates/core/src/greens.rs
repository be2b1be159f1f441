//! Per-mode radial Green's kernels of the cylindrical waveguide and the
//! incident field of point sources.
//!
//! Two constructions live here, serving different purposes:
//!
//! 1. **Pointwise radial kernel** ([`radial_kernel`]): for one mode
//!    `(n, Omega)` the two-point boundary-value solution of
//!
//!    ```text
//!    (1/r)(r g')' - (n^2/r^2) g + kappa^2 g = delta(r - r') / (2 pi r),
//!    kappa^2 = omega^2 (1 + i eps)^2 - Omega^2,
//!    ```
//!
//!    regular at the axis with a Neumann wall `g'(b) = 0`, assembled as
//!    `g = u1(r_<) u2(r_>) / (2 pi r' W)` from the cylinder-function pair
//!    of the branch (`J/Y` propagating, scaled `I/K` evanescent, power
//!    law near the cutoff). This is the exact modal kernel; it carries
//!    the defining properties (derivative jump, interior equation, wall
//!    condition) and backs the self-check command and the kernel tests.
//!
//! 2. **Discrete kernel table** ([`build_kernel_table`]): the solvers
//!    consume the axial-window discretization instead, mirroring how the
//!    measured data itself is sampled and transformed. The physical-space
//!    kernel is expanded over the Neumann-disc eigenmodes,
//!
//!    ```text
//!    G0_n(r, r', zh) = -(i/(4 pi)) sum_l phi_l(r) phi_l(r')
//!                       e^{i q_l |zh|} / (N_l q_l),
//!    phi_l(r) = J_n(lambda_l r),  J_n'(lambda_l b) = 0,
//!    q_l = sqrt(omega^2 (1+i eps)^2 - lambda_l^2)   (Im q >= 0),
//!    ```
//!
//!    sampled on the axial grid and pushed through the crate's forward
//!    axial transform. The finite window couples neighboring axial
//!    frequencies; that coupling is what gives the per-mode systems
//!    their singular-value spread. The `zh = 0` sample is cell-averaged
//!    in `z`, which regularizes the kernel diagonal and makes the
//!    eigenmode series absolutely convergent.
//!
//! `q_l = 0` — the waveguide cutoff `omega b = j'_{n,l}` — is the
//! resonance of the windowed construction; `J_n'(kappa b) = 0` plays the
//! same role for the pointwise kernel. With `eps = 0` resonant modes are
//! a [`CoreError::Resonance`]; damped kernels stay finite and are only
//! flagged.

use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

use ndarray::{Array2, Array4, ArrayView2};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{CoreError, Result};
use crate::fields::{ModalField, PhysicalField, Region};
use crate::grids::{make_grids, Geometry, GridSpec, Grids};
use crate::special::{ik_sweep_scaled, j_orders_real, j_sweep, jy_sweep, IkSweepScaled, JySweep};
use crate::transforms::Transformer;

const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

/// Relative denominator size below which a mode counts as resonant.
const RESONANCE_TOL: f64 = 1e-8;

/// Orders with `(|kappa| b)^2 / (4(n+1))` below this use the power-law
/// limit of the pointwise kernel.
const POWER_LIMIT_TOL: f64 = 1e-8;

/// Eigenmode series cap: modes with `lambda * dz > LAMBDA_DECAY` cannot
/// move any nonzero axial sample above ~2e-16.
const LAMBDA_DECAY: f64 = 36.0;

/// One harmonic point source.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SourcePoint {
    pub amplitude_re: f64,
    pub amplitude_im: f64,
    pub r: f64,
    pub phi: f64,
    pub z: f64,
}

impl SourcePoint {
    pub fn amplitude(&self) -> Complex64 {
        Complex64::new(self.amplitude_re, self.amplitude_im)
    }
}

/// A finite set of point sources.
#[derive(Debug, Clone, Default, serde::Serialize, serde::Deserialize)]
pub struct SourceSet {
    pub points: Vec<SourcePoint>,
}

impl SourceSet {
    /// Eight unit sources on the ring r = 4.01, four below and four above
    /// the midplane, a quarter turn apart.
    pub fn default_eight() -> Self {
        use std::f64::consts::FRAC_PI_2 as H;
        use std::f64::consts::PI;
        let phis = [0.0, H, -H, PI, 0.0, H, -H, PI];
        let zs = [-1.0, -1.0, -1.0, -1.0, 1.0, 1.0, 1.0, 1.0];
        let points = phis
            .iter()
            .zip(&zs)
            .map(|(&phi, &z)| SourcePoint {
                amplitude_re: 1.0,
                amplitude_im: 0.0,
                r: 4.01,
                phi,
                z,
            })
            .collect();
        SourceSet { points }
    }

    pub fn validate(&self) -> Result<()> {
        for (i, p) in self.points.iter().enumerate() {
            if !(p.r > 0.0) || !p.r.is_finite() {
                return Err(CoreError::validation(
                    format!("sources.points[{i}].r"),
                    "source radius must be positive and finite",
                ));
            }
            if !p.phi.is_finite() || !p.z.is_finite() {
                return Err(CoreError::validation(
                    format!("sources.points[{i}]"),
                    "coordinates must be finite",
                ));
            }
        }
        Ok(())
    }
}

/// Which physical kernel backs the solver tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelKind {
    /// Radiating free-space kernel `-e^{i k d} / (4 pi d)` sampled on the
    /// grid and transformed (the measurement layer sits in open space).
    FreeSpace,
    /// Neumann-walled waveguide kernel via the disc eigenmode series.
    Waveguide,
}

impl Default for KernelKind {
    fn default() -> Self {
        KernelKind::FreeSpace
    }
}

// ---------------------------------------------------------------------------
// Pointwise two-point kernel
// ---------------------------------------------------------------------------

enum Branch {
    /// `Re kappa^2 > 0`; sweeps evaluated at `x = kappa * rho`.
    Osc {
        kappa: Complex64,
        wall: Option<JySweep>,
    },
    /// `Re kappa^2 <= 0`; scaled sweeps at `x = tau * rho`.
    Evan {
        tau: Complex64,
        wall: Option<IkSweepScaled>,
    },
}

/// Everything needed to evaluate `g_n(r, r')` for one `(Omega, omega)`
/// pair and all orders `0..=nmax`.
pub(crate) struct ModeBasis {
    nmax: usize,
    b: f64,
    branch: Branch,
    /// Smallest order evaluated through the power-law limit.
    power_from: usize,
    resonant: Vec<bool>,
}

pub(crate) enum RadiusEval {
    Zero,
    Osc(JySweep),
    Evan(IkSweepScaled),
}

impl ModeBasis {
    pub fn new(nmax: usize, omega: f64, omega_axial: f64, eps: f64, b: f64) -> Result<Self> {
        let k_shift = Complex64::new(1.0, eps) * omega;
        let kappa_sq = k_shift * k_shift - omega_axial * omega_axial;
        let zb_sq = kappa_sq.norm() * b * b;
        // orders n with (|kappa| b)^2 / (4(n+1)) <= tol take the power limit
        let power_from = (zb_sq / (4.0 * POWER_LIMIT_TOL)).floor() as usize;

        let mut resonant = vec![false; nmax + 1];
        let branch = if kappa_sq.re > 0.0 {
            let kappa = kappa_sq.sqrt();
            let wall = if power_from == 0 {
                None
            } else {
                let zb = (kappa * b).norm();
                let sweep = jy_sweep(nmax, kappa * b)?;
                for n in 0..=nmax.min(power_from.saturating_sub(1)) {
                    // away from its zeros J_n'(z) has magnitude ~ (n/z + 1) J_n(z);
                    // only a genuine Neumann eigenvalue drops far below that
                    let scale = (n as f64 / zb + 1.0) * sweep.j[n].norm();
                    if sweep.jp[n].norm() < RESONANCE_TOL * scale {
                        resonant[n] = true;
                    }
                }
                Some(sweep)
            };
            Branch::Osc { kappa, wall }
        } else {
            let tau = (-kappa_sq).sqrt();
            let wall = if power_from == 0 {
                None
            } else {
                Some(ik_sweep_scaled(nmax, tau * b)?)
            };
            Branch::Evan { tau, wall }
        };
        // the kappa -> 0 limit of the n = 0 mode is the Neumann eigenmode
        if power_from == 0 {
            resonant[0] = true;
        }
        Ok(ModeBasis {
            nmax,
            b,
            branch,
            power_from,
            resonant,
        })
    }

    pub fn is_resonant(&self, n: usize) -> bool {
        self.resonant[n]
    }

    /// Cylinder-function sweeps at radius `rho` (skipped where every order
    /// uses the power limit).
    pub fn eval_radius(&self, rho: f64) -> Result<RadiusEval> {
        if rho == 0.0 || self.power_from == 0 {
            return Ok(RadiusEval::Zero);
        }
        let n_eval = self.nmax.min(self.power_from.saturating_sub(1));
        match &self.branch {
            Branch::Osc { kappa, .. } => Ok(RadiusEval::Osc(jy_sweep(n_eval, kappa * rho)?)),
            Branch::Evan { tau, .. } => Ok(RadiusEval::Evan(ik_sweep_scaled(n_eval, tau * rho)?)),
        }
    }

    /// Kernel value `g_n(lo, hi)` for `0 <= lo <= hi`.
    pub fn g(
        &self,
        n: usize,
        lo_r: f64,
        lo: &RadiusEval,
        hi_r: f64,
        hi: &RadiusEval,
    ) -> Complex64 {
        debug_assert!(lo_r <= hi_r);
        if hi_r == 0.0 {
            // the (0,0) corner carries zero quadrature weight; its limit is
            // direction-dependent, so store zero
            return Complex64::new(0.0, 0.0);
        }
        if n >= self.power_from {
            if n == 0 {
                return Complex64::new(0.0, 0.0); // resonant, flagged
            }
            let ratio =
                (lo_r * hi_r / (self.b * self.b)).powi(n as i32) + (lo_r / hi_r).powi(n as i32);
            return Complex64::new(-ratio / (4.0 * std::f64::consts::PI * n as f64), 0.0);
        }
        match (&self.branch, lo, hi) {
            (Branch::Osc { wall, .. }, _, RadiusEval::Osc(hi_s)) => {
                let wall = wall.as_ref().expect("wall sweep exists off the power path");
                let u1 = match lo {
                    RadiusEval::Zero => {
                        if n == 0 {
                            Complex64::new(1.0, 0.0)
                        } else {
                            return Complex64::new(0.0, 0.0);
                        }
                    }
                    RadiusEval::Osc(lo_s) => lo_s.j[n],
                    _ => unreachable!("mixed branch evaluations"),
                };
                let u2 = wall.yp[n] * hi_s.j[n] - wall.jp[n] * hi_s.y[n];
                -u1 * u2 / (4.0 * wall.jp[n])
            }
            (Branch::Evan { tau, wall }, _, RadiusEval::Evan(hi_s)) => {
                let wall = wall.as_ref().expect("wall sweep exists off the power path");
                let u1 = match lo {
                    RadiusEval::Zero => {
                        if n == 0 {
                            Complex64::new(1.0, 0.0)
                        } else {
                            return Complex64::new(0.0, 0.0);
                        }
                    }
                    RadiusEval::Evan(lo_s) => lo_s.i[n],
                    _ => unreachable!("mixed branch evaluations"),
                };
                // all exponents have non-positive real part for hi <= b;
                // a source slightly outside the wall stays representable
                let e_through_wall = (tau * (lo_r + hi_r - 2.0 * self.b)).exp();
                let e_direct = (tau * (lo_r - hi_r)).exp();
                let bracket =
                    e_through_wall * wall.kp[n] * hi_s.i[n] / wall.ip[n] - e_direct * hi_s.k[n];
                u1 * bracket / TWO_PI
            }
            _ => unreachable!("mixed branch evaluations"),
        }
    }
}

/// Evaluator for a single mode `(n, Omega)`, mainly for diagnostics and
/// point probes; the solver tables use the windowed construction instead.
pub struct RadialKernel {
    basis: ModeBasis,
    n_abs: usize,
}

/// Construct the radial kernel for one mode. With `eps = 0` a Neumann
/// resonance is an error (the reported mode index pairs the order with 0
/// since no frequency-bin context exists here).
pub fn radial_kernel(
    n: i64,
    omega_axial: f64,
    omega: f64,
    geom: &Geometry,
    eps: f64,
) -> Result<RadialKernel> {
    geom.validate()?;
    if !(omega > 0.0) {
        return Err(CoreError::validation("omega", "must be positive"));
    }
    let n_abs = n.unsigned_abs() as usize;
    let basis = ModeBasis::new(n_abs, omega, omega_axial, eps, geom.b)?;
    if eps == 0.0 && basis.is_resonant(n_abs) {
        return Err(CoreError::Resonance {
            modes: vec![(n, 0)],
        });
    }
    Ok(RadialKernel { basis, n_abs })
}

impl RadialKernel {
    /// `g_n(r, r')`; symmetric in its arguments.
    pub fn eval(&self, r: f64, rp: f64) -> Result<Complex64> {
        if r < 0.0 || rp < 0.0 {
            return Err(CoreError::Domain("radii must be non-negative".into()));
        }
        let (lo_r, hi_r) = if r <= rp { (r, rp) } else { (rp, r) };
        let lo = self.basis.eval_radius(lo_r)?;
        let hi = self.basis.eval_radius(hi_r)?;
        Ok(self.basis.g(self.n_abs, lo_r, &lo, hi_r, &hi))
    }

    pub fn is_resonant(&self) -> bool {
        self.basis.is_resonant(self.n_abs)
    }
}

// ---------------------------------------------------------------------------
// Neumann-disc radial eigenmodes
// ---------------------------------------------------------------------------

/// `J_n(x)` for a single order.
fn jn_single(n: usize, x: f64) -> f64 {
    if x == 0.0 {
        return if n == 0 { 1.0 } else { 0.0 };
    }
    j_orders_real(n, x)[n]
}

/// `(J_n', J_n'')` from one recurrence pass.
fn jn_deriv_pair(n: usize, x: f64) -> (f64, f64) {
    let all = j_orders_real(n + 2, x);
    let jm1 = if n == 0 { -all[1] } else { all[n - 1] };
    let jp = 0.5 * (jm1 - all[n + 1]);
    let jm2 = match n {
        0 => all[2],
        1 => -all[1],
        _ => all[n - 2],
    };
    let jpp = 0.25 * (jm2 - 2.0 * all[n] + all[n + 2]);
    (jp, jpp)
}

/// Positive zeros of `J_n'` up to `x_cap`, for every order `0..=nmax`.
///
/// One shared coarse scan brackets the zeros of every order at once
/// (consecutive zeros are at least ~pi apart); each bracket is polished
/// by Newton steps. The result depends only on `(nmax, x_cap)`, so it is
/// memoized across frequencies and table builds.
fn neumann_derivative_zeros(nmax: usize, x_cap: f64) -> std::sync::Arc<Vec<Vec<f64>>> {
    type Cache = HashMap<(usize, u64), std::sync::Arc<Vec<Vec<f64>>>>;
    static CACHE: OnceLock<Mutex<Cache>> = OnceLock::new();
    let key = (nmax, x_cap.to_bits());
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(hit) = cache.lock().unwrap().get(&key) {
        return hit.clone();
    }

    let step = 0.5;
    let count = (x_cap / step).ceil() as usize;
    let samples: Vec<(f64, Vec<f64>)> = (1..=count)
        .into_par_iter()
        .map(|i| {
            let x = step * i as f64;
            let sweep = j_sweep(nmax, Complex64::new(x, 0.0)).expect("real J sweep");
            (x, sweep.jp.iter().map(|v| v.re).collect())
        })
        .collect();

    let zeros: Vec<Vec<f64>> = (0..=nmax)
        .into_par_iter()
        .map(|n| {
            let mut out = Vec::new();
            for w in samples.windows(2) {
                let (xa, fa) = (w[0].0, w[0].1[n]);
                let (xb, fb) = (w[1].0, w[1].1[n]);
                // skip the sub-normal region left of the turning point
                if fa.abs() < 1e-280 || fb.abs() < 1e-280 {
                    continue;
                }
                if fa.signum() == fb.signum() {
                    continue;
                }
                let mut x = 0.5 * (xa + xb);
                for _ in 0..60 {
                    let (f, fd) = jn_deriv_pair(n, x);
                    let dx = f / fd;
                    let next = x - dx;
                    if next > xa && next < xb {
                        x = next;
                    } else {
                        x = 0.5 * (x + if f.signum() == fa.signum() { xb } else { xa });
                    }
                    if dx.abs() < 1e-13 * x {
                        break;
                    }
                }
                out.push(x);
            }
            out
        })
        .collect();

    let arc = std::sync::Arc::new(zeros);
    cache.lock().unwrap().insert(key, arc.clone());
    arc
}

/// Radial eigenmodes of one angular order: `phi(r) = J_n(lambda r)` with
/// `J_n'(lambda b) = 0`, plus the inverse squared norm on the disc.
struct RadialModes {
    lambda: Vec<f64>,
    inv_norm: Vec<f64>,
}

fn radial_modes(n: usize, zeros: &[f64], b: f64) -> RadialModes {
    let mut lambda = Vec::with_capacity(zeros.len() + 1);
    let mut inv_norm = Vec::with_capacity(zeros.len() + 1);
    if n == 0 {
        // the constant eigenmode
        lambda.push(0.0);
        inv_norm.push(2.0 / (b * b));
    }
    for &jp in zeros {
        let jn = jn_single(n, jp);
        let norm = 0.5 * b * b * (1.0 - (n as f64 * n as f64) / (jp * jp)) * jn * jn;
        lambda.push(jp / b);
        inv_norm.push(1.0 / norm);
    }
    RadialModes { lambda, inv_norm }
}

/// Axial propagation constants `q_l` with `Im q >= 0`.
fn axial_constants(modes: &RadialModes, omega: f64, eps: f64) -> Vec<Complex64> {
    let k = Complex64::new(1.0, eps) * omega;
    let k2 = k * k;
    modes.lambda.iter().map(|&l| (k2 - l * l).sqrt()).collect()
}

/// Cutoff detection tolerance; wide enough to absorb the eigenvalue
/// solver's ~1e-13 relative error, far below any grid's genuine spacing.
const Q_CUTOFF_TOL: f64 = 1e-5;

/// A frequency sitting on a waveguide cutoff makes `1/q_l` blow up for
/// `eps = 0` and merely enormous for small damping; both deserve a flag,
/// so the test uses the undamped distance.
fn cutoff_resonant(modes: &RadialModes, omega: f64) -> bool {
    let tol = Q_CUTOFF_TOL * omega;
    modes
        .lambda
        .iter()
        .any(|&l| (omega * omega - l * l).abs() < tol * tol)
}

/// Series factor of one eigenmode at axial lag `d >= 0`:
/// `-(i/(4 pi)) e^{i q d} / (N q)`. Lags inside half a grid cell are
/// replaced by the cell average of `e^{i q |s|}`, which is finite even on
/// the kernel diagonal and makes the mode series absolutely convergent.
fn axial_factor(q: Complex64, inv_norm: f64, d: f64, dz: f64) -> Complex64 {
    let pref = Complex64::new(0.0, -inv_norm / (4.0 * std::f64::consts::PI)) / q;
    let iq = Complex64::new(0.0, 1.0) * q;
    if d < 0.5 * dz {
        pref * ((iq * (0.5 * dz)).exp() - 1.0) * 2.0 / (iq * dz)
    } else {
        pref * (iq * d).exp()
    }
}

/// Point sample of the windowed construction's physical-space kernel
/// `G0_n(r, r', zh)`; meaningful away from the source point
/// (`zh != 0` or `r != r'`).
pub fn axial_kernel_point(
    n: i64,
    omega: f64,
    geom: &Geometry,
    eps: f64,
    r: f64,
    rp: f64,
    zh: f64,
) -> Result<Complex64> {
    geom.validate()?;
    if !(omega > 0.0) {
        return Err(CoreError::validation("omega", "must be positive"));
    }
    let n_abs = n.unsigned_abs() as usize;
    let x_cap = ((LAMBDA_DECAY / zh.abs().max(1e-2)) + omega + 5.0) * geom.b;
    let zeros = neumann_derivative_zeros(n_abs, x_cap.min(5e4));
    let modes = radial_modes(n_abs, &zeros[n_abs], geom.b);
    let qs = axial_constants(&modes, omega, eps);
    if eps == 0.0 && cutoff_resonant(&modes, omega) {
        return Err(CoreError::Resonance {
            modes: vec![(n, 0)],
        });
    }
    let mut acc = Complex64::new(0.0, 0.0);
    for (l, &q) in qs.iter().enumerate() {
        let phi_r = jn_single(n_abs, modes.lambda[l] * r);
        let phi_rp = jn_single(n_abs, modes.lambda[l] * rp);
        let pref = Complex64::new(0.0, -modes.inv_norm[l] / (4.0 * std::f64::consts::PI)) / q;
        acc += phi_r * phi_rp * pref * (Complex64::new(0.0, 1.0) * q * zh.abs()).exp();
    }
    Ok(acc)
}

/// One axial lane of the windowed kernel at arbitrary radii: the same
/// construction as the solver tables, evaluated pointwise. Returns
/// `G_n(r, r', Omega_m)` for every frequency bin.
pub fn windowed_kernel_lane(
    kind: KernelKind,
    n: i64,
    omega: f64,
    geom: &Geometry,
    eps: f64,
    nphi: usize,
    nz: usize,
    r: f64,
    rp: f64,
) -> Result<Vec<Complex64>> {
    match kind {
        KernelKind::FreeSpace => {
            let spec = GridSpec {
                nr: 2,
                nrp: 2,
                nphi,
                nz,
            };
            let grids = make_grids(geom, &spec)?;
            let transformer = Transformer::new(&grids);
            let k = Complex64::new(1.0, eps) * omega;
            let mut scratch = Vec::new();
            let lane = free_space_pair_lane(k, r.max(rp), r.min(rp), &grids, &transformer, &mut scratch);
            let bin = if n >= 0 {
                n as usize
            } else {
                (nphi as i64 + n) as usize
            };
            Ok((0..nz).map(|m| lane[(bin, m)]).collect())
        }
        KernelKind::Waveguide => waveguide_kernel_lane(n, omega, geom, eps, nz, r, rp),
    }
}

/// Waveguide lane via the eigenmode series.
fn waveguide_kernel_lane(
    n: i64,
    omega: f64,
    geom: &Geometry,
    eps: f64,
    nz: usize,
    r: f64,
    rp: f64,
) -> Result<Vec<Complex64>> {
    let spec = GridSpec {
        nr: 2,
        nrp: 2,
        nphi: 2,
        nz,
    };
    let grids = make_grids(geom, &spec)?;
    let transformer = Transformer::new(&grids);
    let n_abs = n.unsigned_abs() as usize;
    let x_cap = lambda_cap(omega, grids.dz) * geom.b;
    let zeros = neumann_derivative_zeros(n_abs, x_cap);
    let modes = radial_modes(n_abs, &zeros[n_abs], geom.b);
    let qs = axial_constants(&modes, omega, eps);
    if eps == 0.0 && cutoff_resonant(&modes, omega) {
        return Err(CoreError::Resonance {
            modes: vec![(n, 0)],
        });
    }
    let half = nz / 2;
    let mut lag = vec![Complex64::default(); nz];
    for (l, &q) in qs.iter().enumerate() {
        let w = jn_single(n_abs, modes.lambda[l] * r) * jn_single(n_abs, modes.lambda[l] * rp);
        if w == 0.0 {
            continue;
        }
        for (jz, v) in lag.iter_mut().enumerate() {
            let d = jz.abs_diff(half) as f64 * grids.dz;
            *v += w * axial_factor(q, modes.inv_norm[l], d, grids.dz);
        }
    }
    transformer.fz_forward_inplace(&mut lag);
    Ok(lag)
}

// ---------------------------------------------------------------------------
// Kernel table
// ---------------------------------------------------------------------------

/// Dense table of `G_n(r_i, r'_j, Omega_m)` for every mode of a grid.
///
/// Values depend on `(|n|, |Omega|)` only, so storage covers the distinct
/// half-spectrum; accessors map arbitrary DFT bins onto it.
pub struct ModalKernelTable {
    pub geom: Geometry,
    pub spec: GridSpec,
    pub omega: f64,
    pub eps: f64,
    /// `(dist_n, dist_m, nrp, nrp)` kernel with targets on the inner grid.
    x_block: Array4<Complex64>,
    /// `(dist_n, dist_m, nr, nrp)` kernel with targets on the observation grid.
    y_block: Array4<Complex64>,
    /// Flagged `(signed n, m_bin)` pairs: resonant orders.
    pub flags: Vec<(i64, usize)>,
}

fn dist_m_of_bin(nz: usize, m_bin: usize) -> usize {
    if m_bin == 0 {
        0
    } else {
        m_bin.min(nz - m_bin)
    }
}

impl ModalKernelTable {
    pub fn logical_shape(&self) -> (usize, usize, usize, usize) {
        (self.spec.nphi, self.spec.nz, self.spec.nr, self.spec.nrp)
    }

    fn dist_indices(&self, n_bin: usize, m_bin: usize) -> (usize, usize) {
        let dn = self.spec.order_of_bin(n_bin).unsigned_abs() as usize;
        let dm = dist_m_of_bin(self.spec.nz, m_bin);
        (dn, dm)
    }

    /// Kernel block with targets on the inner radial grid.
    pub fn x_kernel(&self, n_bin: usize, m_bin: usize) -> ArrayView2<'_, Complex64> {
        let (dn, dm) = self.dist_indices(n_bin, m_bin);
        self.x_block
            .index_axis(ndarray::Axis(0), dn)
            .index_axis_move(ndarray::Axis(0), dm)
    }

    /// Kernel block with targets on the observation radial grid.
    pub fn y_kernel(&self, n_bin: usize, m_bin: usize) -> ArrayView2<'_, Complex64> {
        let (dn, dm) = self.dist_indices(n_bin, m_bin);
        self.y_block
            .index_axis(ndarray::Axis(0), dn)
            .index_axis_move(ndarray::Axis(0), dm)
    }

    pub(crate) fn from_blocks(
        geom: Geometry,
        spec: GridSpec,
        omega: f64,
        eps: f64,
        x_block: Array4<Complex64>,
        y_block: Array4<Complex64>,
        flags: Vec<(i64, usize)>,
    ) -> Self {
        ModalKernelTable {
            geom,
            spec,
            omega,
            eps,
            x_block,
            y_block,
            flags,
        }
    }

    pub(crate) fn blocks(&self) -> (&Array4<Complex64>, &Array4<Complex64>) {
        (&self.x_block, &self.y_block)
    }
}

/// Eigenmode cap for one axial grid: everything the window can see.
fn lambda_cap(omega: f64, dz: f64) -> f64 {
    LAMBDA_DECAY / dz + omega + 5.0
}

struct OrderSlices {
    x: Vec<Array2<Complex64>>,
    y: Vec<Array2<Complex64>>,
    resonant: bool,
}

/// Physical-space kernel samples and their axial transform for one order.
fn build_order(
    grids: &Grids,
    zeros_n: &[f64],
    n: usize,
    omega: f64,
    eps: f64,
    transformer: &Transformer,
) -> OrderSlices {
    let spec = &grids.spec;
    let b = grids.geom.b;
    let modes = radial_modes(n, zeros_n, b);
    let qs = axial_constants(&modes, omega, eps);
    let resonant = cutoff_resonant(&modes, omega);
    let nl = modes.lambda.len();
    let dist_d = spec.nz / 2 + 1;

    let mut zfac = vec![Complex64::default(); nl * dist_d];
    for l in 0..nl {
        for d in 0..dist_d {
            zfac[l * dist_d + d] =
                axial_factor(qs[l], modes.inv_norm[l], d as f64 * grids.dz, grids.dz);
        }
    }

    let nrp = spec.nrp;
    let nr = spec.nr;
    let phi_x: Vec<f64> = (0..nl)
        .flat_map(|l| grids.rp.iter().map(move |&r| (l, r)).collect::<Vec<_>>())
        .map(|(l, r)| jn_single(n, modes.lambda[l] * r))
        .collect();
    let phi_y: Vec<f64> = (0..nl)
        .flat_map(|l| grids.r.iter().map(move |&r| (l, r)).collect::<Vec<_>>())
        .map(|(l, r)| jn_single(n, modes.lambda[l] * r))
        .collect();

    // physical-space samples per lag distance
    let mut g0x = vec![Array2::<Complex64>::zeros((nrp, nrp)); dist_d];
    let mut g0y = vec![Array2::<Complex64>::zeros((nr, nrp)); dist_d];
    for l in 0..nl {
        let px = &phi_x[l * nrp..(l + 1) * nrp];
        let py = &phi_y[l * nr..(l + 1) * nr];
        let zrow = &zfac[l * dist_d..(l + 1) * dist_d];
        for (d, &zf) in zrow.iter().enumerate() {
            if zf.norm_sqr() == 0.0 {
                continue; // lag beyond this mode's reach
            }
            let gx = &mut g0x[d];
            for i in 0..nrp {
                let pi = px[i];
                if pi == 0.0 {
                    continue;
                }
                let w = zf * pi;
                for j in 0..nrp {
                    gx[(i, j)] += w * px[j];
                }
            }
            let gy = &mut g0y[d];
            for i in 0..nr {
                let w = zf * py[i];
                for j in 0..nrp {
                    gy[(i, j)] += w * px[j];
                }
            }
        }
    }

    // axial transform per radial pair over the periodic lag sequence
    let nz = spec.nz;
    let half = nz / 2;
    let mut x_out = vec![Array2::<Complex64>::zeros((nrp, nrp)); dist_d];
    let mut y_out = vec![Array2::<Complex64>::zeros((nr, nrp)); dist_d];
    let mut lag = vec![Complex64::default(); nz];
    for i in 0..nrp {
        for j in 0..nrp {
            for (jz, v) in lag.iter_mut().enumerate() {
                *v = g0x[jz.abs_diff(half)][(i, j)];
            }
            transformer.fz_forward_inplace(&mut lag);
            for (d, out) in x_out.iter_mut().enumerate() {
                out[(i, j)] = lag[d];
            }
        }
    }
    for i in 0..nr {
        for j in 0..nrp {
            for (jz, v) in lag.iter_mut().enumerate() {
                *v = g0y[jz.abs_diff(half)][(i, j)];
            }
            transformer.fz_forward_inplace(&mut lag);
            for (d, out) in y_out.iter_mut().enumerate() {
                out[(i, j)] = lag[d];
            }
        }
    }
    OrderSlices {
        x: x_out,
        y: y_out,
        resonant,
    }
}

fn expand_flags(spec: &GridSpec, resonant_orders: &[usize]) -> Vec<(i64, usize)> {
    let mut flags = Vec::new();
    for &dn in resonant_orders {
        let mut n_vals = vec![dn as i64];
        if dn != 0 && spec.order_of_bin((spec.nphi - dn) % spec.nphi) == -(dn as i64) {
            n_vals.push(-(dn as i64));
        }
        for &nv in &n_vals {
            for m in 0..spec.nz {
                flags.push((nv, m));
            }
        }
    }
    flags.sort_unstable();
    flags
}

/// Build the solver kernel table with the default (free-space) kernel.
pub fn build_kernel_table(
    omega: f64,
    geom: &Geometry,
    spec: &GridSpec,
    eps: f64,
) -> Result<ModalKernelTable> {
    build_kernel_table_with(KernelKind::FreeSpace, omega, geom, spec, eps)
}

/// Build the solver kernel table with an explicit kernel kind.
pub fn build_kernel_table_with(
    kind: KernelKind,
    omega: f64,
    geom: &Geometry,
    spec: &GridSpec,
    eps: f64,
) -> Result<ModalKernelTable> {
    match kind {
        KernelKind::FreeSpace => build_free_space_table(omega, geom, spec, eps),
        KernelKind::Waveguide => build_waveguide_table(omega, geom, spec, eps),
    }
}

/// Windowed eigenmode construction of the Neumann-walled waveguide table.
///
/// With `eps = 0` a cutoff resonance aborts the build; with damping the
/// affected orders are only flagged.
fn build_waveguide_table(
    omega: f64,
    geom: &Geometry,
    spec: &GridSpec,
    eps: f64,
) -> Result<ModalKernelTable> {
    if !(omega > 0.0) {
        return Err(CoreError::validation("omega", "must be positive"));
    }
    if !(eps >= 0.0) {
        return Err(CoreError::validation("greens.eps", "must be non-negative"));
    }
    let grids = make_grids(geom, spec)?;
    let transformer = Transformer::new(&grids);
    let dist_n = spec.distinct_orders();
    let dist_m = spec.distinct_freqs();
    let nmax = spec.nphi / 2;

    let x_cap = lambda_cap(omega, grids.dz) * geom.b;
    let zeros = neumann_derivative_zeros(nmax, x_cap);

    let orders: Vec<(usize, OrderSlices)> = (0..dist_n)
        .into_par_iter()
        .map(|n| (n, build_order(&grids, &zeros[n], n, omega, eps, &transformer)))
        .collect();

    let mut x_block = Array4::zeros((dist_n, dist_m, spec.nrp, spec.nrp));
    let mut y_block = Array4::zeros((dist_n, dist_m, spec.nr, spec.nrp));
    let mut resonant_orders = Vec::new();
    for (n, slices) in orders {
        if slices.resonant {
            resonant_orders.push(n);
        }
        for d in 0..dist_m {
            x_block
                .index_axis_mut(ndarray::Axis(0), n)
                .index_axis_mut(ndarray::Axis(0), d)
                .assign(&slices.x[d]);
            y_block
                .index_axis_mut(ndarray::Axis(0), n)
                .index_axis_mut(ndarray::Axis(0), d)
                .assign(&slices.y[d]);
        }
    }

    resonant_orders.sort_unstable();
    let flags = expand_flags(spec, &resonant_orders);
    if eps == 0.0 && !flags.is_empty() {
        return Err(CoreError::Resonance { modes: flags });
    }

    Ok(ModalKernelTable::from_blocks(
        *geom, *spec, omega, eps, x_block, y_block, flags,
    ))
}

// ---------------------------------------------------------------------------
// Free-space kernel table
// ---------------------------------------------------------------------------

/// `-e^{i k d} / (4 pi d)` with `k = omega (1 + i eps)`; the `+` branch
/// decays under damping, matching the waveguide convention `Im q >= 0`.
fn free_space_point(k: Complex64, d: f64) -> Complex64 {
    -(Complex64::new(0.0, 1.0) * k * d).exp() / (4.0 * std::f64::consts::PI * d)
}

fn gauss_nodes_sym(half: f64, n: usize) -> &'static Vec<(f64, f64)> {
    // nodes for averaging over [-half, half], cached per call site scale
    // via a tiny table keyed by the bit pattern
    static CACHE: OnceLock<Mutex<HashMap<(u64, usize), &'static Vec<(f64, f64)>>>> =
        OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let key = (half.to_bits(), n);
    let mut guard = cache.lock().unwrap();
    if let Some(hit) = guard.get(&key) {
        return hit;
    }
    let nodes: Vec<(f64, f64)> = crate::special::gauss_legendre_nodes(-half, half, n);
    let leaked: &'static Vec<(f64, f64)> = Box::leak(Box::new(nodes));
    guard.insert(key, leaked);
    leaked
}

/// Kernel sample at in-plane separation `rho` and axial lag `zh`, with
/// the near-singular samples averaged over the axial (and if necessary
/// angular) grid cell. `arc_half` is half the azimuthal cell arc length
/// at this radius pair (zero disables the angular average).
fn free_space_sample(k: Complex64, rho: f64, zh: f64, dz: f64, arc_half: f64) -> Complex64 {
    let az = zh.abs();
    if az >= 0.5 * dz {
        return free_space_point(k, (rho * rho + zh * zh).sqrt());
    }
    // the |zh| < dz/2 sample is the z-cell average
    if rho > 2.0 * arc_half || arc_half == 0.0 {
        if rho == 0.0 {
            // axis-on-axis corner: annihilated by the radial quadrature
            // weight everywhere it is consumed
            return Complex64::new(0.0, 0.0);
        }
        let mut acc = Complex64::new(0.0, 0.0);
        for &(s, w) in gauss_nodes_sym(0.5 * dz, 12) {
            acc += w * free_space_point(k, (rho * rho + s * s).sqrt());
        }
        return acc / dz;
    }
    // diagonal neighborhood: average over the angular cell as well (the
    // 1/d singularity is integrable in two dimensions)
    let mut acc = Complex64::new(0.0, 0.0);
    for &(t, wt) in gauss_nodes_sym(arc_half, 12) {
        let rho_t = (rho * rho + t * t).sqrt();
        for &(s, ws) in gauss_nodes_sym(0.5 * dz, 12) {
            acc += wt * ws * free_space_point(k, (rho_t * rho_t + s * s).sqrt());
        }
    }
    acc / (dz * 2.0 * arc_half)
}

/// Free-space kernel lane over all `(n, m)` bins for one radius pair.
fn free_space_pair_lane(
    k: Complex64,
    rt: f64,
    rs: f64,
    grids: &Grids,
    transformer: &Transformer,
    scratch: &mut Vec<Complex64>,
) -> Array2<Complex64> {
    let spec = &grids.spec;
    let (nphi, nz) = (spec.nphi, spec.nz);
    let half = nz / 2;
    // cell arc at the diagonal; only meaningful when rt == rs
    let arc_half = if rt == rs {
        0.5 * rt * grids.dphi
    } else {
        0.0
    };
    // sample over (phi_hat, zhat)
    scratch.resize(nphi * nz, Complex64::default());
    for (jp, &phi) in grids.phi.iter().enumerate() {
        let rho_sq = rt * rt + rs * rs - 2.0 * rt * rs * phi.cos();
        let rho = rho_sq.max(0.0).sqrt();
        for (jz, &z) in grids.z.iter().enumerate() {
            let _ = half;
            scratch[jp * nz + jz] =
                free_space_sample(k, rho, z, grids.dz, if jp == 0 { arc_half } else { 0.0 });
        }
    }
    // axial transform along each phi row, then the angular series
    for jp in 0..nphi {
        transformer.fz_forward_inplace(&mut scratch[jp * nz..(jp + 1) * nz]);
    }
    let mut out = Array2::<Complex64>::zeros((nphi, nz));
    let mut lane = vec![Complex64::default(); nphi];
    for m in 0..nz {
        for jp in 0..nphi {
            lane[jp] = scratch[jp * nz + m];
        }
        transformer.phi_series_inplace(&mut lane);
        for n in 0..nphi {
            out[(n, m)] = lane[n];
        }
    }
    out
}

/// Free-space construction of the kernel table: sample the closed-form
/// kernel on the grid and transform, mirroring how the data itself is
/// processed. No resonances exist on this path.
fn build_free_space_table(
    omega: f64,
    geom: &Geometry,
    spec: &GridSpec,
    eps: f64,
) -> Result<ModalKernelTable> {
    if !(omega > 0.0) {
        return Err(CoreError::validation("omega", "must be positive"));
    }
    if !(eps >= 0.0) {
        return Err(CoreError::validation("greens.eps", "must be non-negative"));
    }
    let grids = make_grids(geom, spec)?;
    let transformer = Transformer::new(&grids);
    let dist_n = spec.distinct_orders();
    let dist_m = spec.distinct_freqs();
    let k = Complex64::new(1.0, eps) * omega;

    // distinct radius pairs: the inner block is symmetric
    let mut pairs: Vec<(usize, usize, f64, f64, bool)> = Vec::new();
    for i in 0..spec.nrp {
        for j in i..spec.nrp {
            pairs.push((i, j, grids.rp[i], grids.rp[j], true));
        }
    }
    for i in 0..spec.nr {
        for j in 0..spec.nrp {
            pairs.push((i, j, grids.r[i], grids.rp[j], false));
        }
    }

    let lanes: Vec<(usize, usize, bool, Array2<Complex64>)> = pairs
        .par_iter()
        .map_init(Vec::new, |scratch, &(i, j, rt, rs, inner)| {
            let lane = free_space_pair_lane(k, rt, rs, &grids, &transformer, scratch);
            (i, j, inner, lane)
        })
        .collect();

    let mut x_block = Array4::zeros((dist_n, dist_m, spec.nrp, spec.nrp));
    let mut y_block = Array4::zeros((dist_n, dist_m, spec.nr, spec.nrp));
    for (i, j, inner, lane) in lanes {
        for dn in 0..dist_n {
            for dm in 0..dist_m {
                let v = lane[(dn, dm)];
                if inner {
                    x_block[(dn, dm, i, j)] = v;
                    x_block[(dn, dm, j, i)] = v;
                } else {
                    y_block[(dn, dm, i, j)] = v;
                }
            }
        }
    }

    Ok(ModalKernelTable::from_blocks(
        *geom,
        *spec,
        omega,
        eps,
        x_block,
        y_block,
        Vec::new(),
    ))
}

// ---------------------------------------------------------------------------
// Incident field
// ---------------------------------------------------------------------------

/// Incident field of a source set with the default (free-space) kernel.
pub fn incident_field(
    sources: &SourceSet,
    omega: f64,
    geom: &Geometry,
    spec: &GridSpec,
    eps: f64,
) -> Result<(ModalField, PhysicalField)> {
    incident_field_with(KernelKind::FreeSpace, sources, omega, geom, spec, eps)
}

/// Incident field with an explicit kernel kind, consistent with the
/// matching solver table.
pub fn incident_field_with(
    kind: KernelKind,
    sources: &SourceSet,
    omega: f64,
    geom: &Geometry,
    spec: &GridSpec,
    eps: f64,
) -> Result<(ModalField, PhysicalField)> {
    match kind {
        KernelKind::FreeSpace => incident_field_free_space(sources, omega, geom, spec, eps),
        KernelKind::Waveguide => incident_field_waveguide(sources, omega, geom, spec, eps),
    }
}

/// Free-space incident field: the closed-form source fields are sampled
/// on the physical grid and transformed.
fn incident_field_free_space(
    sources: &SourceSet,
    omega: f64,
    geom: &Geometry,
    spec: &GridSpec,
    eps: f64,
) -> Result<(ModalField, PhysicalField)> {
    sources.validate()?;
    if !(omega > 0.0) {
        return Err(CoreError::validation("omega", "must be positive"));
    }
    let grids = make_grids(geom, spec)?;
    let transformer = Transformer::new(&grids);
    let k = Complex64::new(1.0, eps) * omega;

    let mut u0_phys = PhysicalField::zeros(spec, Region::X, Some(omega));
    for (s, p) in sources.points.iter().enumerate() {
        let (sx, sy) = (p.r * p.phi.cos(), p.r * p.phi.sin());
        let amp = p.amplitude();
        for (i, &r) in grids.rp.iter().enumerate() {
            for (jp, &phi) in grids.phi.iter().enumerate() {
                let dx = r * phi.cos() - sx;
                let dy = r * phi.sin() - sy;
                let rho_sq = dx * dx + dy * dy;
                for (jz, &z) in grids.z.iter().enumerate() {
                    let dzs = z - p.z;
                    let d = (rho_sq + dzs * dzs).sqrt();
                    if d < 1e-9 {
                        return Err(CoreError::validation(
                            format!("sources.points[{s}]"),
                            "source coincides with a grid node",
                        ));
                    }
                    u0_phys.values[(i, jp, jz)] += amp * free_space_point(k, d);
                }
            }
        }
    }
    let u0 = transformer.to_modal(&u0_phys)?;
    Ok((u0, u0_phys))
}

/// Waveguide incident field via the windowed eigenmode series.
fn incident_field_waveguide(
    sources: &SourceSet,
    omega: f64,
    geom: &Geometry,
    spec: &GridSpec,
    eps: f64,
) -> Result<(ModalField, PhysicalField)> {
    sources.validate()?;
    if !(omega > 0.0) {
        return Err(CoreError::validation("omega", "must be positive"));
    }
    let grids = make_grids(geom, spec)?;
    let transformer = Transformer::new(&grids);
    let nmax = spec.nphi / 2;
    let ns = sources.points.len();

    let x_cap = lambda_cap(omega, grids.dz) * geom.b;
    let zeros = neumann_derivative_zeros(nmax, x_cap);

    struct OrderField {
        /// `(i_rp, jz)` samples for the positive and mirrored negative order.
        pos: Array2<Complex64>,
        neg: Array2<Complex64>,
        resonant: bool,
    }

    let per_order: Vec<(usize, OrderField)> = (0..=nmax)
        .into_par_iter()
        .map(|n| {
            let modes = radial_modes(n, &zeros[n], geom.b);
            let qs = axial_constants(&modes, omega, eps);
            let resonant = cutoff_resonant(&modes, omega);
            let nl = modes.lambda.len();

            let nrp = spec.nrp;
            let nz = spec.nz;
            let phi_rp: Vec<f64> = (0..nl)
                .flat_map(|l| grids.rp.iter().map(move |&r| (l, r)).collect::<Vec<_>>())
                .map(|(l, r)| jn_single(n, modes.lambda[l] * r))
                .collect();
            let phi_src: Vec<f64> = (0..nl)
                .flat_map(|l| {
                    sources
                        .points
                        .iter()
                        .map(move |p| (l, p.r))
                        .collect::<Vec<_>>()
                })
                .map(|(l, r)| jn_single(n, modes.lambda[l] * r))
                .collect();

            let mut pos = Array2::<Complex64>::zeros((nrp, nz));
            let mut neg = Array2::<Complex64>::zeros((nrp, nz));
            let mut g_samples = vec![Complex64::default(); nz];
            let mut zf = vec![Complex64::default(); nl * nz];
            for (s, p) in sources.points.iter().enumerate() {
                for l in 0..nl {
                    for (jz, &z) in grids.z.iter().enumerate() {
                        zf[l * nz + jz] =
                            axial_factor(qs[l], modes.inv_norm[l], (z - p.z).abs(), grids.dz);
                    }
                }
                let amp_pos = p.amplitude() * Complex64::from_polar(1.0, -(n as f64) * p.phi);
                let amp_neg = p.amplitude() * Complex64::from_polar(1.0, n as f64 * p.phi);
                for i in 0..nrp {
                    for v in g_samples.iter_mut() {
                        *v = Complex64::default();
                    }
                    for l in 0..nl {
                        let w = phi_rp[l * nrp + i] * phi_src[l * ns + s];
                        if w == 0.0 {
                            continue;
                        }
                        let zrow = &zf[l * nz..(l + 1) * nz];
                        for (v, &zv) in g_samples.iter_mut().zip(zrow.iter()) {
                            *v += w * zv;
                        }
                    }
                    for jz in 0..nz {
                        pos[(i, jz)] += amp_pos * g_samples[jz];
                        neg[(i, jz)] += amp_neg * g_samples[jz];
                    }
                }
            }
            (n, OrderField { pos, neg, resonant })
        })
        .collect();

    let resonant_orders: Vec<usize> = per_order
        .iter()
        .filter(|(_, f)| f.resonant)
        .map(|(n, _)| *n)
        .collect();
    let flags = expand_flags(spec, &resonant_orders);
    if eps == 0.0 && !flags.is_empty() {
        return Err(CoreError::Resonance { modes: flags });
    }

    let mut u0 = ModalField::zeros(spec, Region::X, omega);
    let mut lane = vec![Complex64::default(); spec.nz];
    for (n, field) in per_order {
        // positive order occupies bin n; the mirrored negative order sits
        // at bin nphi - n when that is a distinct bin
        let mut bins = vec![(n, &field.pos)];
        let neg_bin = (spec.nphi - n) % spec.nphi;
        if n != 0 && spec.order_of_bin(neg_bin) == -(n as i64) {
            bins.push((neg_bin, &field.neg));
        }
        for (bin, data) in bins {
            for i in 0..spec.nrp {
                for (jz, v) in lane.iter_mut().enumerate() {
                    *v = data[(i, jz)];
                }
                transformer.fz_forward_inplace(&mut lane);
                for m in 0..spec.nz {
                    u0.values[(bin, m, i)] = lane[m];
                }
            }
        }
    }

    let u0_phys = transformer.to_physical(&u0)?;
    Ok((u0, u0_phys))
}
