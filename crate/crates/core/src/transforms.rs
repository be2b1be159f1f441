//! Discrete counterparts of the axial Fourier transform and the azimuthal
//! Fourier series, with the scaling conventions fixed once for the whole
//! crate.
//!
//! Forward axial transform (continuous convention `F[f](Omega) =
//! integral f(z) e^{+i Omega z} dz`):
//!
//! ```text
//! F_m = dz * sum_j f(z_j) e^{+i Omega_m z_j}
//! ```
//!
//! Inverse: `f_j = (dOmega / 2pi) * sum_m F_m e^{-i Omega_m z_j}`.
//!
//! Azimuthal series: `f_n = (1/nphi) * sum_j f(phi_j) e^{-i n phi_j}` with
//! synthesis `f(phi_j) = sum_n f_n e^{+i n phi_j}`.
//!
//! Every other module must go through these operations; the discrete
//! Parseval identities hold exactly under this pairing.

use std::sync::Arc;

use ndarray::Axis;
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{CoreError, Result};
use crate::fields::{ModalField, PhysicalField, Region};
use crate::grids::Grids;

/// Cached FFT plans and phase tables for one grid layout.
pub struct Transformer {
    nz: usize,
    nphi: usize,
    plan_z_fwd: Arc<dyn Fft<f64>>,
    plan_z_inv: Arc<dyn Fft<f64>>,
    plan_phi_fwd: Arc<dyn Fft<f64>>,
    plan_phi_inv: Arc<dyn Fft<f64>>,
    /// `dz * exp(+i Omega_m z0)` applied after the +i-kernel DFT.
    phase_fwd: Vec<Complex64>,
    /// `exp(-i Omega_m z0) / (nz * dz)` applied before the -i-kernel DFT.
    phase_inv: Vec<Complex64>,
}

impl Transformer {
    pub fn new(grids: &Grids) -> Self {
        let mut planner = FftPlanner::new();
        let nz = grids.spec.nz;
        let nphi = grids.spec.nphi;
        let z0 = -grids.geom.z_half;
        let phase_fwd = grids
            .omega_z
            .iter()
            .map(|&w| Complex64::from_polar(grids.dz, w * z0))
            .collect();
        let inv_scale = 1.0 / (nz as f64 * grids.dz);
        let phase_inv = grids
            .omega_z
            .iter()
            .map(|&w| Complex64::from_polar(inv_scale, -w * z0))
            .collect();
        Transformer {
            nz,
            nphi,
            plan_z_fwd: planner.plan_fft_inverse(nz),
            plan_z_inv: planner.plan_fft_forward(nz),
            plan_phi_fwd: planner.plan_fft_forward(nphi),
            plan_phi_inv: planner.plan_fft_inverse(nphi),
            phase_fwd,
            phase_inv,
        }
    }

    fn check_len(&self, got: usize, want: usize) -> Result<()> {
        if got != want {
            return Err(CoreError::ShapeMismatch {
                expected: want.to_string(),
                found: got.to_string(),
            });
        }
        Ok(())
    }

    /// Axial transform of `nz` samples over the z grid, in place.
    pub fn fz_forward_inplace(&self, buf: &mut [Complex64]) {
        self.plan_z_fwd.process(buf);
        for (v, ph) in buf.iter_mut().zip(&self.phase_fwd) {
            *v *= ph;
        }
    }

    /// Inverse axial transform of `nz` samples over the frequency grid, in place.
    pub fn fz_inverse_inplace(&self, buf: &mut [Complex64]) {
        for (v, ph) in buf.iter_mut().zip(&self.phase_inv) {
            *v *= ph;
        }
        self.plan_z_inv.process(buf);
    }

    pub fn fz_forward(&self, f: &[Complex64]) -> Result<Vec<Complex64>> {
        self.check_len(f.len(), self.nz)?;
        let mut buf = f.to_vec();
        self.fz_forward_inplace(&mut buf);
        Ok(buf)
    }

    pub fn fz_inverse(&self, f: &[Complex64]) -> Result<Vec<Complex64>> {
        self.check_len(f.len(), self.nz)?;
        let mut buf = f.to_vec();
        self.fz_inverse_inplace(&mut buf);
        Ok(buf)
    }

    /// Azimuthal series coefficients in DFT bin order, in place.
    pub fn phi_series_inplace(&self, buf: &mut [Complex64]) {
        self.plan_phi_fwd.process(buf);
        let s = 1.0 / self.nphi as f64;
        for v in buf.iter_mut() {
            *v *= s;
        }
    }

    pub fn phi_synthesis_inplace(&self, buf: &mut [Complex64]) {
        self.plan_phi_inv.process(buf);
    }

    pub fn phi_series(&self, f: &[Complex64]) -> Result<Vec<Complex64>> {
        self.check_len(f.len(), self.nphi)?;
        let mut buf = f.to_vec();
        self.phi_series_inplace(&mut buf);
        Ok(buf)
    }

    pub fn phi_synthesis(&self, f: &[Complex64]) -> Result<Vec<Complex64>> {
        self.check_len(f.len(), self.nphi)?;
        let mut buf = f.to_vec();
        self.phi_synthesis_inplace(&mut buf);
        Ok(buf)
    }

    /// Physical `(r, phi, z)` samples to modal `(n, m, r)` coefficients.
    pub fn to_modal(&self, field: &PhysicalField) -> Result<ModalField> {
        let omega = field.omega.ok_or_else(|| {
            CoreError::validation("field.omega", "modal form requires a frequency")
        })?;
        let (nrad, nphi, nz) = field.values.dim();
        self.check_len(nphi, self.nphi)?;
        self.check_len(nz, self.nz)?;

        let mut out = ModalField::zeros(&field.spec, field.region, omega);
        let mut slab = vec![Complex64::default(); nphi * nz];
        let mut lane = vec![Complex64::default(); nphi];
        for ir in 0..nrad {
            let plane = field.values.index_axis(Axis(0), ir);
            for (j, row) in plane.outer_iter().enumerate() {
                let dst = &mut slab[j * nz..(j + 1) * nz];
                for (d, s) in dst.iter_mut().zip(row.iter()) {
                    *d = *s;
                }
                self.fz_forward_inplace(dst);
            }
            for m in 0..nz {
                for j in 0..nphi {
                    lane[j] = slab[j * nz + m];
                }
                self.phi_series_inplace(&mut lane);
                for n in 0..nphi {
                    out.values[(n, m, ir)] = lane[n];
                }
            }
        }
        Ok(out)
    }

    /// Modal `(n, m, r)` coefficients back to physical `(r, phi, z)` samples.
    pub fn to_physical(&self, field: &ModalField) -> Result<PhysicalField> {
        let (nphi, nz, nrad) = field.values.dim();
        self.check_len(nphi, self.nphi)?;
        self.check_len(nz, self.nz)?;

        let mut out = PhysicalField::zeros(&field.spec, field.region, Some(field.omega));
        let mut slab = vec![Complex64::default(); nphi * nz];
        let mut lane = vec![Complex64::default(); nphi];
        for ir in 0..nrad {
            for m in 0..nz {
                for n in 0..nphi {
                    lane[n] = field.values[(n, m, ir)];
                }
                self.phi_synthesis_inplace(&mut lane);
                for j in 0..nphi {
                    slab[j * nz + m] = lane[j];
                }
            }
            let mut plane = out.values.index_axis_mut(Axis(0), ir);
            for (j, mut row) in plane.outer_iter_mut().enumerate() {
                let src = &mut slab[j * nz..(j + 1) * nz];
                self.fz_inverse_inplace(src);
                for (d, s) in row.iter_mut().zip(src.iter()) {
                    *d = *s;
                }
            }
        }
        Ok(out)
    }
}

/// Radially weighted squared norm of a physical field:
/// `sum_i w_i r_i * dphi * dz * sum_{j,l} |f(r_i, phi_j, z_l)|^2`.
pub fn physical_norm_sq(field: &PhysicalField, grids: &Grids) -> f64 {
    let (radii, weights): (&[f64], &[f64]) = match field.region {
        Region::X => (&grids.rp, &grids.wrp),
        Region::Y => (&grids.r, &grids.wr),
    };
    let mut total = 0.0;
    for (ir, plane) in field.values.outer_iter().enumerate() {
        let s: f64 = plane.iter().map(|v| v.norm_sqr()).sum();
        total += weights[ir] * radii[ir] * s;
    }
    total * grids.dphi * grids.dz
}

/// Squared norm of a modal field under the matching pairing:
/// `sum_n dOmega * sum_{i,m} w_i r_i |f_n(r_i, Omega_m)|^2`.
///
/// Equals [`physical_norm_sq`] of the synthesized field exactly (discrete
/// Parseval under the crate conventions).
pub fn modal_norm_sq(field: &ModalField, grids: &Grids) -> f64 {
    let (radii, weights): (&[f64], &[f64]) = match field.region {
        Region::X => (&grids.rp, &grids.wrp),
        Region::Y => (&grids.r, &grids.wr),
    };
    let nrad = radii.len();
    let mut per_r = vec![0.0f64; nrad];
    for plane in field.values.outer_iter() {
        // plane: (m, ir)
        for row in plane.outer_iter() {
            for (ir, v) in row.iter().enumerate() {
                per_r[ir] += v.norm_sqr();
            }
        }
    }
    let mut total = 0.0;
    for ir in 0..nrad {
        total += weights[ir] * radii[ir] * per_r[ir];
    }
    total * grids.domega
}

/// Relative difference of two modal fields in the weighted norm,
/// `||f - g|| / scale`.
pub fn modal_diff_norm(f: &ModalField, g: &ModalField, grids: &Grids) -> f64 {
    debug_assert!(f.same_layout(g));
    let (radii, weights): (&[f64], &[f64]) = match f.region {
        Region::X => (&grids.rp, &grids.wrp),
        Region::Y => (&grids.r, &grids.wr),
    };
    let mut total = 0.0;
    for (fp, gp) in f.values.outer_iter().zip(g.values.outer_iter()) {
        for (fr, gr) in fp.outer_iter().zip(gp.outer_iter()) {
            for (ir, (a, b)) in fr.iter().zip(gr.iter()).enumerate() {
                total += weights[ir] * radii[ir] * (a - b).norm_sqr();
            }
        }
    }
    (total * grids.domega).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grids::{make_grids, Geometry, GridSpec};
    use crate::testsupport::{adaptive_simpson, rng_complex_vec, seeded_rng};
    use ndarray::Array3;
    use rand::Rng;

    fn default_setup() -> (Grids, Transformer) {
        let g = make_grids(&Geometry::default(), &GridSpec::default()).unwrap();
        let t = Transformer::new(&g);
        (g, t)
    }

    #[test]
    fn fz_of_zero_is_zero() {
        let (_, t) = default_setup();
        let f = vec![Complex64::default(); 64];
        let out = t.fz_forward(&f).unwrap();
        assert!(out.iter().all(|v| v.norm() == 0.0));
        let back = t.fz_inverse(&out).unwrap();
        assert!(back.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn fz_gaussian_matches_quadrature_oracle() {
        // A box wide enough that the Gaussian tails sit below the target
        // tolerance; the default z_half = 2 truncates exp(-z^2) at ~8e-3.
        let geom = Geometry {
            z_half: 6.0,
            ..Geometry::default()
        };
        let g = make_grids(&geom, &GridSpec::default()).unwrap();
        let t = Transformer::new(&g);
        let f: Vec<Complex64> = g
            .z
            .iter()
            .map(|&z| Complex64::new((-z * z).exp(), 0.0))
            .collect();
        let out = t.fz_forward(&f).unwrap();
        // independent oracle: adaptive quadrature of the defining integral
        let oracle = adaptive_simpson(|z: f64| (-z * z).exp(), -6.0, 6.0, 1e-12);
        assert!((out[0].re - oracle).abs() < 1e-6, "{} vs {}", out[0].re, oracle);
        assert!(out[0].im.abs() < 1e-12);
        assert!((oracle - std::f64::consts::PI.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn fz_round_trip_and_plancherel() {
        let (g, t) = default_setup();
        let mut rng = seeded_rng(7);
        for _ in 0..20 {
            let f = rng_complex_vec(&mut rng, 64);
            let big = t.fz_forward(&f).unwrap();
            let back = t.fz_inverse(&big).unwrap();
            let num: f64 = f
                .iter()
                .zip(&back)
                .map(|(a, b)| (a - b).norm_sqr())
                .sum::<f64>()
                .sqrt();
            let den: f64 = f.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
            assert!(num / den < 1e-12);

            let lhs: f64 = g.dz * f.iter().map(|a| a.norm_sqr()).sum::<f64>();
            let rhs: f64 = g.domega / (2.0 * std::f64::consts::PI)
                * big.iter().map(|a| a.norm_sqr()).sum::<f64>();
            assert!((lhs - rhs).abs() / lhs < 1e-12);
        }
    }

    #[test]
    fn fz_impulse_recovery() {
        let (_, t) = default_setup();
        let mut f = vec![Complex64::default(); 64];
        f[17] = Complex64::new(1.0, 0.0);
        let back = t.fz_inverse(&t.fz_forward(&f).unwrap()).unwrap();
        for (j, v) in back.iter().enumerate() {
            let want = if j == 17 { 1.0 } else { 0.0 };
            assert!((v.re - want).abs() < 1e-13 && v.im.abs() < 1e-13);
        }
    }

    #[test]
    fn phi_single_harmonic() {
        let (g, t) = default_setup();
        let f: Vec<Complex64> = g
            .phi
            .iter()
            .map(|&p| Complex64::from_polar(1.0, 3.0 * p))
            .collect();
        let coef = t.phi_series(&f).unwrap();
        for (n, c) in coef.iter().enumerate() {
            let want = if n == 3 { 1.0 } else { 0.0 };
            assert!((c - Complex64::new(want, 0.0)).norm() < 1e-13, "n={n}");
        }

        let ones = vec![Complex64::new(1.0, 0.0); 90];
        let coef = t.phi_series(&ones).unwrap();
        assert!((coef[0] - Complex64::new(1.0, 0.0)).norm() < 1e-13);
        assert!(coef[1..].iter().all(|c| c.norm() < 1e-13));
    }

    #[test]
    fn phi_round_trip_and_linearity() {
        let (_, t) = default_setup();
        let mut rng = seeded_rng(11);
        let f = rng_complex_vec(&mut rng, 90);
        let gvec = rng_complex_vec(&mut rng, 90);
        let back = t.phi_synthesis(&t.phi_series(&f).unwrap()).unwrap();
        let rel: f64 = f
            .iter()
            .zip(&back)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt()
            / f.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        assert!(rel < 1e-12);

        let alpha = Complex64::new(0.3, -1.2);
        let beta = Complex64::new(-0.7, 0.4);
        let combo: Vec<Complex64> = f
            .iter()
            .zip(&gvec)
            .map(|(a, b)| alpha * a + beta * b)
            .collect();
        let lhs = t.phi_series(&combo).unwrap();
        let fa = t.phi_series(&f).unwrap();
        let gb = t.phi_series(&gvec).unwrap();
        for n in 0..90 {
            assert!((lhs[n] - (alpha * fa[n] + beta * gb[n])).norm() < 1e-12);
        }
    }

    #[test]
    fn phi_conjugate_symmetry_for_real_samples() {
        let (_, t) = default_setup();
        let mut rng = seeded_rng(12);
        let f: Vec<Complex64> = (0..90)
            .map(|_| Complex64::new(rng.random::<f64>() - 0.5, 0.0))
            .collect();
        let coef = t.phi_series(&f).unwrap();
        for n in 1..90 {
            let minus = 90 - n; // wrapped -n
            assert!((coef[minus] - coef[n].conj()).norm() < 1e-13);
        }
    }

    #[test]
    fn modal_round_trip_on_random_field() {
        let (g, t) = default_setup();
        let mut rng = seeded_rng(23);
        let data = rng_complex_vec(&mut rng, 33 * 90 * 64);
        let arr = Array3::from_shape_vec((33, 90, 64), data).unwrap();
        let f = PhysicalField::from_values(arr, &g.spec, Region::X, Some(3.0)).unwrap();
        let modal = t.to_modal(&f).unwrap();
        let back = t.to_physical(&modal).unwrap();
        let num: f64 = f
            .values
            .iter()
            .zip(back.values.iter())
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt();
        let den: f64 = f.values.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        assert!(num / den < 1e-12);

        // discrete Parseval under the weighted pairing
        let pn = physical_norm_sq(&f, &g);
        let mn = modal_norm_sq(&modal, &g);
        assert!((pn - mn).abs() / pn < 1e-12, "{pn} vs {mn}");
    }
}
