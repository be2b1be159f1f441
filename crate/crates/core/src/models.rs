//! Built-in model scatterers, the contrast functional, and the calibrated
//! measurement-noise protocol.
//!
//! Both stock models place two ellipsoidal inclusions in the inner
//! cylinder. The first uses sharp Gaussian bumps clipped to ellipsoidal
//! supports; the second fills the same supports with constant values
//! `A0` and `2 A0`. The supports overlap: the second model layers the
//! stronger inclusion over the weaker one (matching its stated peak
//! contrast), while the first sums its terms (the Gaussians are far
//! narrower than the supports, so the overlap contribution is ~1e-52).

use ndarray::Array3;
use num_complex::Complex64;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::fields::{PhysicalField, Region};
use crate::grids::{Geometry, GridSpec, Grids};
use crate::transforms::physical_norm_sq;

/// One additive/layered term of a scatterer: a (possibly flat) Gaussian
/// profile restricted to an ellipsoidal support.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct XiTerm {
    pub amplitude: f64,
    pub center: [f64; 3],
    /// Quadratic-form coefficients inside the exponential.
    pub decay_coeffs: [f64; 3],
    /// Exponential rate; zero makes the term an indicator function.
    pub decay_rate: f64,
    /// Quadratic-form coefficients of the support ellipsoid.
    pub support_coeffs: [f64; 3],
    /// Support threshold: inside iff the support form is `<=` this.
    pub support_level: f64,
}

impl XiTerm {
    fn eval(&self, x: f64, y: f64, z: f64) -> Option<f64> {
        let d = [x - self.center[0], y - self.center[1], z - self.center[2]];
        let support: f64 = (0..3).map(|i| self.support_coeffs[i] * d[i] * d[i]).sum();
        if support > self.support_level {
            return None;
        }
        let q: f64 = (0..3).map(|i| self.decay_coeffs[i] * d[i] * d[i]).sum();
        Some(self.amplitude * (-self.decay_rate * q).exp())
    }
}

/// How overlapping terms combine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CombineRule {
    /// Pointwise sum of all supported terms.
    Sum,
    /// Later terms replace earlier ones where supported.
    Layered,
}

/// Scatterer selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "id", rename_all = "kebab-case")]
pub enum ModelSpec {
    /// Two Gaussian inclusions, amplitudes `a0` and `2 a0`.
    Model1 { a0: f64 },
    /// Two constant-valued ellipsoids, amplitudes `a0` and `2 a0` (layered).
    Model2 { a0: f64 },
    /// User-supplied terms.
    Custom {
        terms: Vec<XiTerm>,
        combine: CombineRule,
    },
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec::Model1 { a0: 0.545 }
    }
}

fn stock_terms(a0: f64, decay_rate: f64) -> Vec<XiTerm> {
    vec![
        XiTerm {
            amplitude: a0,
            center: [0.4, 0.0, -0.1],
            decay_coeffs: [5.0, 5.0, 0.125],
            decay_rate,
            support_coeffs: [1.0, 1.0, 0.125],
            support_level: 1.69,
        },
        XiTerm {
            amplitude: 2.0 * a0,
            center: [-0.4, 0.4, 0.2],
            decay_coeffs: [5.0, 5.0, 0.125],
            decay_rate,
            support_coeffs: [1.0, 1.0, 0.125],
            support_level: 0.25,
        },
    ]
}

impl ModelSpec {
    pub fn model2_default() -> Self {
        ModelSpec::Model2 { a0: 0.2 }
    }

    pub fn terms(&self) -> (Vec<XiTerm>, CombineRule) {
        match self {
            ModelSpec::Model1 { a0 } => (stock_terms(*a0, 30.0), CombineRule::Sum),
            ModelSpec::Model2 { a0 } => (stock_terms(*a0, 0.0), CombineRule::Layered),
            ModelSpec::Custom { terms, combine } => (terms.clone(), *combine),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ModelSpec::Model1 { a0 } | ModelSpec::Model2 { a0 } => {
                if !(*a0 > 0.0) {
                    return Err(CoreError::validation("model.a0", "must be positive"));
                }
            }
            ModelSpec::Custom { terms, .. } => {
                for (i, t) in terms.iter().enumerate() {
                    if !t.amplitude.is_finite() || !(t.support_level > 0.0) {
                        return Err(CoreError::validation(
                            format!("model.terms[{i}]"),
                            "amplitude must be finite and support_level positive",
                        ));
                    }
                }
            }
        }
        Ok(())
    }
}

/// The scatterer contrast at a Cartesian point.
pub fn eval_xi(model: &ModelSpec, x: f64, y: f64, z: f64) -> f64 {
    let (terms, combine) = model.terms();
    match combine {
        CombineRule::Sum => terms.iter().filter_map(|t| t.eval(x, y, z)).sum(),
        CombineRule::Layered => terms
            .iter()
            .rev()
            .find_map(|t| t.eval(x, y, z))
            .unwrap_or(0.0),
    }
}

/// Sample the scatterer on the inner-cylinder grid (real field, no
/// frequency attached).
pub fn sample_xi(model: &ModelSpec, grids: &Grids) -> PhysicalField {
    let spec = grids.spec;
    let mut values = Array3::zeros((spec.nrp, spec.nphi, spec.nz));
    for (ir, &r) in grids.rp.iter().enumerate() {
        for (jp, &phi) in grids.phi.iter().enumerate() {
            let (x, y) = (r * phi.cos(), r * phi.sin());
            for (lz, &z) in grids.z.iter().enumerate() {
                values[(ir, jp, lz)] = Complex64::new(eval_xi(model, x, y, z), 0.0);
            }
        }
    }
    PhysicalField {
        values,
        spec,
        region: Region::X,
        omega: None,
    }
}

/// Fraction of the scatterer's absolute mass that lies outside the inner
/// cylinder `r <= a` and is therefore invisible to the solver grids.
pub fn clipped_mass_fraction(model: &ModelSpec, geom: &Geometry, spec: &GridSpec) -> f64 {
    let nr_ext = 3 * spec.nrp;
    let dr = geom.b / (nr_ext - 1) as f64;
    let dphi = 2.0 * std::f64::consts::PI / spec.nphi as f64;
    let dz = 2.0 * geom.z_half / spec.nz as f64;
    let mut inside = 0.0;
    let mut outside = 0.0;
    for ir in 0..nr_ext {
        let r = dr * ir as f64;
        for jp in 0..spec.nphi {
            let phi = dphi * jp as f64;
            let (x, y) = (r * phi.cos(), r * phi.sin());
            for lz in 0..spec.nz {
                let z = -geom.z_half + dz * lz as f64;
                let v = eval_xi(model, x, y, z).abs() * r;
                if r <= geom.a {
                    inside += v;
                } else {
                    outside += v;
                }
            }
        }
    }
    if inside + outside == 0.0 {
        0.0
    } else {
        outside / (inside + outside)
    }
}

/// Result of the contrast functional `max 1/sqrt(1 - xi) - 1` (with
/// `c0 = 1`).
#[derive(Debug, Clone, Copy)]
pub struct ContrastReport {
    /// Maximum over the points where the formula is defined.
    pub value: f64,
    /// Count of sampled points with `1 - xi <= 0`, where the formula
    /// breaks down.
    pub domain_violations: usize,
    pub max_xi: f64,
}

/// Evaluate the contrast of a sampled real field.
pub fn contrast(xi: &PhysicalField) -> ContrastReport {
    let mut value = 0.0f64;
    let mut violations = 0usize;
    let mut max_xi = f64::NEG_INFINITY;
    for v in xi.values.iter() {
        let x = v.re;
        max_xi = max_xi.max(x);
        if 1.0 - x <= 0.0 {
            violations += 1;
        } else {
            value = value.max(1.0 / (1.0 - x).sqrt() - 1.0);
        }
    }
    ContrastReport {
        value,
        domain_violations: violations,
        max_xi,
    }
}

/// Analytic peak of a model (evaluated at the term centers, which carry
/// the extrema for the stock shapes). Returns `(peak, violates_domain)`.
pub fn model_peak(model: &ModelSpec) -> (f64, bool) {
    let (terms, _) = model.terms();
    let mut peak = 0.0f64;
    for t in &terms {
        peak = peak.max(eval_xi(model, t.center[0], t.center[1], t.center[2]));
    }
    (peak, 1.0 - peak <= 0.0)
}

/// Measurement-noise parameters: target relative level and RNG seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub delta: f64,
    pub seed: u64,
}

/// Add zero-mean Gaussian noise to a field and rescale the perturbation
/// so its radially weighted norm is exactly `delta * ||w||`.
///
/// Deterministic for a fixed seed. Returns the noisy field and the
/// realized relative perturbation.
pub fn add_noise(
    w: &PhysicalField,
    grids: &Grids,
    spec: &NoiseSpec,
) -> Result<(PhysicalField, f64)> {
    if spec.delta < 0.0 {
        return Err(CoreError::validation("noise.delta", "must be >= 0"));
    }
    if spec.delta == 0.0 {
        return Ok((w.clone(), 0.0));
    }
    let w_norm = physical_norm_sq(w, grids).sqrt();
    if w_norm == 0.0 {
        return Err(CoreError::validation(
            "noise.delta",
            "relative noise level is undefined for an identically zero field",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut eta = PhysicalField::zeros(&w.spec, w.region, w.omega);
    for v in eta.values.iter_mut() {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        *v = Complex64::new(re, im);
    }
    let eta_norm = physical_norm_sq(&eta, grids).sqrt();
    let scale = spec.delta * w_norm / eta_norm;
    let mut noisy = w.clone();
    for (out, e) in noisy.values.iter_mut().zip(eta.values.iter()) {
        *out += scale * e;
    }
    let mut diff = noisy.clone();
    for (d, orig) in diff.values.iter_mut().zip(w.values.iter()) {
        *d -= orig;
    }
    let measured = physical_norm_sq(&diff, grids).sqrt() / w_norm;
    Ok((noisy, measured))
}
