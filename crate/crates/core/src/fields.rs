//! Complex scalar fields sampled on the cylindrical grids, in physical
//! `(r, phi, z)` form and in modal `(n, Omega, r)` form.

use ndarray::Array3;
use num_complex::Complex64;

use crate::error::{CoreError, Result};
use crate::grids::GridSpec;

/// Which radial grid a field lives on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Region {
    /// Scatterer cylinder, radial grid `rp` on `[0, a]`.
    X,
    /// Observation layer, radial grid `r` on `[r0, b]`.
    Y,
}

impl Region {
    pub fn radial_len(&self, spec: &GridSpec) -> usize {
        match self {
            Region::X => spec.nrp,
            Region::Y => spec.nr,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Region::X => "X",
            Region::Y => "Y",
        }
    }
}

/// Complex field on the physical grid, indexed `(i_r, i_phi, i_z)`.
///
/// `omega` is `None` for frequency-independent fields (the scatterer
/// contrast), `Some` for wave fields.
#[derive(Debug, Clone)]
pub struct PhysicalField {
    pub values: Array3<Complex64>,
    pub spec: GridSpec,
    pub region: Region,
    pub omega: Option<f64>,
}

impl PhysicalField {
    pub fn zeros(spec: &GridSpec, region: Region, omega: Option<f64>) -> Self {
        let nr = region.radial_len(spec);
        PhysicalField {
            values: Array3::zeros((nr, spec.nphi, spec.nz)),
            spec: *spec,
            region,
            omega,
        }
    }

    pub fn from_values(
        values: Array3<Complex64>,
        spec: &GridSpec,
        region: Region,
        omega: Option<f64>,
    ) -> Result<Self> {
        let want = (region.radial_len(spec), spec.nphi, spec.nz);
        if values.dim() != want {
            return Err(CoreError::ShapeMismatch {
                expected: format!("{:?}", want),
                found: format!("{:?}", values.dim()),
            });
        }
        Ok(PhysicalField {
            values,
            spec: *spec,
            region,
            omega,
        })
    }

    pub fn same_layout(&self, other: &PhysicalField) -> bool {
        self.spec == other.spec && self.region == other.region
    }
}

/// Modal representation: coefficients indexed `(n_bin, m_bin, i_r)` where
/// `n_bin` runs over azimuthal DFT bins and `m_bin` over axial frequency
/// bins, both in standard DFT wrap order.
#[derive(Debug, Clone)]
pub struct ModalField {
    pub values: Array3<Complex64>,
    pub spec: GridSpec,
    pub region: Region,
    pub omega: f64,
}

impl ModalField {
    pub fn zeros(spec: &GridSpec, region: Region, omega: f64) -> Self {
        let nr = region.radial_len(spec);
        ModalField {
            values: Array3::zeros((spec.nphi, spec.nz, nr)),
            spec: *spec,
            region,
            omega,
        }
    }

    pub fn same_layout(&self, other: &ModalField) -> bool {
        self.spec == other.spec && self.region == other.region
    }
}
