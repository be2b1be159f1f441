//! Geometry, discrete grids, quadrature weights and the weighted norms
//! used by every solver stage.
//!
//! The computational domain is a cylinder of radius `b`. Scatterers live in
//! the inner cylinder `X = {r <= a}`, data are recorded in the annular layer
//! `Y = {r0 <= r <= b}`, and the axial interval `[-z_half, z_half)` is
//! treated periodically by the discrete transforms.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Cylinder geometry (dimensionless lengths).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    /// Radius of the scatterer region `X`.
    pub a: f64,
    /// Inner radius of the observation layer `Y`.
    pub r0: f64,
    /// Outer radius of `Y` and of the waveguide.
    pub b: f64,
    /// Half-extent of the truncated axial interval.
    pub z_half: f64,
}

impl Default for Geometry {
    fn default() -> Self {
        Geometry {
            a: 1.0,
            r0: 3.0,
            b: 4.0,
            z_half: 2.0,
        }
    }
}

impl Geometry {
    pub fn validate(&self) -> Result<()> {
        if !(self.a > 0.0) {
            return Err(CoreError::validation("geometry.a", "must be positive"));
        }
        if !(self.r0 > self.a) {
            return Err(CoreError::validation("geometry.r0", "must exceed a"));
        }
        if !(self.b > self.r0) {
            return Err(CoreError::validation("geometry.b", "must exceed r0"));
        }
        if !(self.z_half > 0.0) {
            return Err(CoreError::validation("geometry.z_half", "must be positive"));
        }
        Ok(())
    }
}

/// Grid sizes: `nr` radial samples on `[r0, b]`, `nrp` on `[0, a]`,
/// `nphi` azimuthal samples on `[0, 2pi)`, `nz` axial samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSpec {
    pub nr: usize,
    pub nrp: usize,
    pub nphi: usize,
    pub nz: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            nr: 32,
            nrp: 33,
            nphi: 90,
            nz: 64,
        }
    }
}

fn largest_prime_factor(mut n: usize) -> usize {
    let mut largest = 1;
    let mut p = 2;
    while p * p <= n {
        while n % p == 0 {
            largest = p;
            n /= p;
        }
        p += 1;
    }
    if n > 1 {
        largest = n;
    }
    largest
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("grid.nr", self.nr),
            ("grid.nrp", self.nrp),
            ("grid.nphi", self.nphi),
            ("grid.nz", self.nz),
        ] {
            if v < 2 {
                return Err(CoreError::validation(name, "count must be at least 2"));
            }
        }
        for (name, v) in [("grid.nphi", self.nphi), ("grid.nz", self.nz)] {
            if largest_prime_factor(v) > 31 {
                return Err(CoreError::validation(
                    name,
                    "must factor into small primes (<= 31) for the FFT",
                ));
            }
        }
        Ok(())
    }

    /// Count of distinct azimuthal orders `|n|` after DFT wrapping.
    pub fn distinct_orders(&self) -> usize {
        self.nphi / 2 + 1
    }

    /// Count of distinct axial frequencies `|Omega|`.
    pub fn distinct_freqs(&self) -> usize {
        self.nz / 2 + 1
    }

    /// Signed azimuthal order for DFT bin `n_bin` (standard wrap).
    pub fn order_of_bin(&self, n_bin: usize) -> i64 {
        debug_assert!(n_bin < self.nphi);
        if n_bin <= (self.nphi - 1) / 2 {
            n_bin as i64
        } else {
            n_bin as i64 - self.nphi as i64
        }
    }

    /// Signed DFT index for axial bin `m_bin`.
    pub fn freq_index_of_bin(&self, m_bin: usize) -> i64 {
        debug_assert!(m_bin < self.nz);
        if m_bin <= (self.nz - 1) / 2 {
            m_bin as i64
        } else {
            m_bin as i64 - self.nz as i64
        }
    }
}

/// All sample points plus quadrature weights for one `(Geometry, GridSpec)`.
#[derive(Debug, Clone)]
pub struct Grids {
    pub geom: Geometry,
    pub spec: GridSpec,
    /// `nr` points spanning `[r0, b]`, endpoints included.
    pub r: Vec<f64>,
    /// `nrp` points spanning `[0, a]`, endpoints included.
    pub rp: Vec<f64>,
    /// `nphi` points `2*pi*j/nphi`.
    pub phi: Vec<f64>,
    /// `nz` points `-z_half + j*dz`.
    pub z: Vec<f64>,
    /// Angular frequencies in DFT bin order, wrapped to `[-pi/dz, pi/dz)`.
    pub omega_z: Vec<f64>,
    /// Trapezoidal weights on `r` (sum = b - r0).
    pub wr: Vec<f64>,
    /// Trapezoidal weights on `rp` (sum = a).
    pub wrp: Vec<f64>,
    pub dz: f64,
    pub dphi: f64,
    pub domega: f64,
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let h = (hi - lo) / (n - 1) as f64;
    (0..n).map(|i| lo + h * i as f64).collect()
}

fn trapezoid_weights(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let h = (hi - lo) / (n - 1) as f64;
    (0..n)
        .map(|i| if i == 0 || i == n - 1 { 0.5 * h } else { h })
        .collect()
}

/// Build all grids for the given geometry and sizes.
pub fn make_grids(geom: &Geometry, spec: &GridSpec) -> Result<Grids> {
    geom.validate()?;
    spec.validate()?;

    let dz = 2.0 * geom.z_half / spec.nz as f64;
    let z = (0..spec.nz)
        .map(|j| -geom.z_half + dz * j as f64)
        .collect();
    let domega = 2.0 * std::f64::consts::PI / (spec.nz as f64 * dz);
    let omega_z = (0..spec.nz)
        .map(|m| spec.freq_index_of_bin(m) as f64 * domega)
        .collect();
    let dphi = 2.0 * std::f64::consts::PI / spec.nphi as f64;
    let phi = (0..spec.nphi).map(|j| dphi * j as f64).collect();

    Ok(Grids {
        geom: *geom,
        spec: *spec,
        r: linspace(geom.r0, geom.b, spec.nr),
        rp: linspace(0.0, geom.a, spec.nrp),
        phi,
        z,
        omega_z,
        wr: trapezoid_weights(geom.r0, geom.b, spec.nr),
        wrp: trapezoid_weights(0.0, geom.a, spec.nrp),
        dz,
        dphi,
        domega,
    })
}
