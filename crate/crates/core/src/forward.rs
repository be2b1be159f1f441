//! Synthetic-data generation: fixed-point (Born-type) iteration of the
//! modal Lippmann-Schwinger system.
//!
//! Working entirely in the modal representation, one iteration maps
//! `u -> u0 + 2 pi omega^2 K_X[xi u]`, where `K_X` applies the radial
//! kernel blocks mode by mode and the product `xi u` is formed in
//! physical space. On convergence the observation-layer data follow from
//! the same kernel with targets on the outer grid.

use ndarray::Axis;
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{CoreError, Result};
use crate::fields::{ModalField, PhysicalField, Region};
use crate::greens::{
    build_kernel_table_with, incident_field_with, KernelKind, ModalKernelTable, SourceSet,
};
#[cfg(test)]
use crate::greens::{build_kernel_table, incident_field};
use crate::grids::{make_grids, Geometry, Grids};
use crate::transforms::{modal_diff_norm, modal_norm_sq, Transformer};

/// Stopping parameters of the fixed-point iteration.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ForwardSettings {
    pub max_iter: usize,
    pub tol: f64,
    pub record_history: bool,
}

impl Default for ForwardSettings {
    fn default() -> Self {
        ForwardSettings {
            max_iter: 200,
            tol: 1e-13,
            record_history: true,
        }
    }
}

impl ForwardSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(CoreError::validation("forward.tol", "must be positive"));
        }
        if self.max_iter == 0 {
            return Err(CoreError::validation("forward.max_iter", "must be >= 1"));
        }
        Ok(())
    }
}

/// Converged state of the direct problem.
#[derive(Debug, Clone)]
pub struct ForwardResult {
    pub u_modal: ModalField,
    pub v_modal: ModalField,
    pub w_modal: ModalField,
    pub w_phys: PhysicalField,
    pub iterations: usize,
    pub delta_history: Vec<f64>,
    pub wall_seconds: f64,
}

/// Apply the mode-diagonal radial kernel:
/// `out_n(r_i) = 2 pi omega^2 sum_j mu_j G_n(r_i, r'_j, Omega_m) r'_j v_n(r'_j)`.
///
/// `target` picks the output radial grid: the inner grid for the
/// field update, the observation grid for data synthesis.
pub fn apply_modal_kernel(
    table: &ModalKernelTable,
    grids: &Grids,
    v: &ModalField,
    target: Region,
) -> Result<ModalField> {
    if v.region != Region::X {
        return Err(CoreError::ShapeMismatch {
            expected: "modal field on the inner grid".into(),
            found: "observation-grid field".into(),
        });
    }
    if v.spec != table.spec {
        return Err(CoreError::ShapeMismatch {
            expected: format!("{:?}", table.spec),
            found: format!("{:?}", v.spec),
        });
    }
    let spec = table.spec;
    let scale = 2.0 * std::f64::consts::PI * table.omega * table.omega;
    // fold quadrature weights and the radial factor into the source vector
    let wr: Vec<f64> = grids
        .wrp
        .iter()
        .zip(&grids.rp)
        .map(|(&w, &r)| w * r)
        .collect();

    let mut out = ModalField::zeros(&spec, target, v.omega);
    out.values
        .axis_iter_mut(Axis(0))
        .into_par_iter()
        .enumerate()
        .for_each(|(n_bin, mut plane)| {
            let mut weighted = vec![Complex64::default(); spec.nrp];
            for m_bin in 0..spec.nz {
                let vin = v.values.index_axis(Axis(0), n_bin);
                let vrow = vin.index_axis(Axis(0), m_bin);
                for j in 0..spec.nrp {
                    weighted[j] = vrow[j] * wr[j];
                }
                let kernel = match target {
                    Region::X => table.x_kernel(n_bin, m_bin),
                    Region::Y => table.y_kernel(n_bin, m_bin),
                };
                for (i, krow) in kernel.outer_iter().enumerate() {
                    let mut acc = Complex64::default();
                    for j in 0..spec.nrp {
                        acc += krow[j] * weighted[j];
                    }
                    plane[(m_bin, i)] = scale * acc;
                }
            }
        });
    Ok(out)
}

/// One fixed-point step: forms `v = xi u` pointwise in physical space and
/// returns `(u0 + K_X v, v)`.
pub fn born_iteration(
    u: &ModalField,
    xi: &PhysicalField,
    table: &ModalKernelTable,
    grids: &Grids,
    u0: &ModalField,
    transformer: &Transformer,
) -> Result<(ModalField, ModalField)> {
    let v = contrast_product(u, xi, transformer)?;
    let mut next = apply_modal_kernel(table, grids, &v, Region::X)?;
    for (n, u0v) in next.values.iter_mut().zip(u0.values.iter()) {
        *n += u0v;
    }
    Ok((next, v))
}

/// `v = xi u` computed through physical space.
pub fn contrast_product(
    u: &ModalField,
    xi: &PhysicalField,
    transformer: &Transformer,
) -> Result<ModalField> {
    let mut u_phys = transformer.to_physical(u)?;
    if u_phys.values.dim() != xi.values.dim() {
        return Err(CoreError::ShapeMismatch {
            expected: format!("{:?}", u_phys.values.dim()),
            found: format!("{:?}", xi.values.dim()),
        });
    }
    for (uv, xv) in u_phys.values.iter_mut().zip(xi.values.iter()) {
        *uv *= xv;
    }
    transformer.to_modal(&u_phys)
}

/// Run the direct problem against a prebuilt kernel table and incident
/// field.
pub fn run_forward_with(
    table: &ModalKernelTable,
    grids: &Grids,
    u0: &ModalField,
    xi: &PhysicalField,
    settings: &ForwardSettings,
) -> Result<ForwardResult> {
    settings.validate()?;
    let start = std::time::Instant::now();
    let transformer = Transformer::new(grids);
    let denom = modal_norm_sq(u0, grids).sqrt();

    let mut u = u0.clone();
    let mut history = Vec::new();
    let mut converged_at = None;
    for k in 1..=settings.max_iter {
        let (next, _) = born_iteration(&u, xi, table, grids, u0, &transformer)?;
        let delta = if denom > 0.0 {
            modal_diff_norm(&next, &u, grids) / denom
        } else {
            0.0
        };
        if settings.record_history {
            history.push(delta);
        }
        u = next;
        if delta <= settings.tol {
            converged_at = Some(k);
            break;
        }
    }
    let iterations = match converged_at {
        Some(k) => k,
        None => {
            let last = history.last().copied().unwrap_or(f64::NAN);
            return Err(CoreError::NoConvergence {
                iterations: settings.max_iter,
                last,
                history,
            });
        }
    };

    let v_modal = contrast_product(&u, xi, &transformer)?;
    let w_modal = apply_modal_kernel(table, grids, &v_modal, Region::Y)?;
    let w_phys = transformer.to_physical(&w_modal)?;

    Ok(ForwardResult {
        u_modal: u,
        v_modal,
        w_modal,
        w_phys,
        iterations,
        delta_history: history,
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Full direct problem: builds the kernel table and incident field, then
/// iterates to the stopping tolerance.
pub fn run_forward(
    xi: &PhysicalField,
    sources: &SourceSet,
    omega: f64,
    geom: &Geometry,
    kind: KernelKind,
    eps: f64,
    settings: &ForwardSettings,
) -> Result<ForwardResult> {
    let grids = make_grids(geom, &xi.spec)?;
    let table = build_kernel_table_with(kind, omega, geom, &xi.spec, eps)?;
    let (u0, _) = incident_field_with(kind, sources, omega, geom, &xi.spec, eps)?;
    run_forward_with(&table, &grids, &u0, xi, settings)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grids::GridSpec;
    use crate::models::{sample_xi, ModelSpec};
    use crate::testsupport::adaptive_simpson_complex;

    fn small_spec() -> GridSpec {
        GridSpec {
            nr: 8,
            nrp: 9,
            nphi: 8,
            nz: 8,
        }
    }

    #[test]
    fn zero_contrast_converges_immediately() {
        let geom = Geometry::default();
        let spec = small_spec();
        let xi = PhysicalField::zeros(&spec, Region::X, None);
        let result = run_forward(
            &xi,
            &SourceSet::default_eight(),
            2.0,
            &geom,
            KernelKind::FreeSpace,
            1e-6,
            &ForwardSettings::default(),
        )
        .unwrap();
        assert_eq!(result.iterations, 1);
        assert_eq!(result.delta_history, vec![0.0]);
        assert!(result.w_phys.values.iter().all(|v| v.norm() == 0.0));
        assert!(result.v_modal.values.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn kernel_application_is_mode_diagonal_and_linear_in_xi() {
        let geom = Geometry::default();
        let spec = small_spec();
        let grids = make_grids(&geom, &spec).unwrap();
        let table = build_kernel_table(2.0, &geom, &spec, 1e-6).unwrap();

        // zero in, zero out
        let zero = ModalField::zeros(&spec, Region::X, 2.0);
        let out = apply_modal_kernel(&table, &grids, &zero, Region::Y).unwrap();
        assert!(out.values.iter().all(|v| v.norm() == 0.0));

        // a single populated (n, m) slice stays in its slice
        let mut v = ModalField::zeros(&spec, Region::X, 2.0);
        for i in 0..spec.nrp {
            v.values[(3, 5, i)] = Complex64::new(1.0 + i as f64, -0.3);
        }
        let out = apply_modal_kernel(&table, &grids, &v, Region::X).unwrap();
        for n in 0..spec.nphi {
            for m in 0..spec.nz {
                let slice_norm: f64 = (0..spec.nrp)
                    .map(|i| out.values[(n, m, i)].norm_sqr())
                    .sum();
                if (n, m) == (3, 5) {
                    assert!(slice_norm > 0.0);
                } else {
                    assert_eq!(slice_norm, 0.0, "leak into ({n},{m})");
                }
            }
        }

        // bilinearity of the contrast product in xi
        let transformer = Transformer::new(&grids);
        let mut xi = PhysicalField::zeros(&spec, Region::X, None);
        for (i, x) in xi.values.iter_mut().enumerate() {
            *x = Complex64::new(0.1 + (i % 7) as f64 * 0.01, 0.0);
        }
        let mut xi_half = xi.clone();
        for x in xi_half.values.iter_mut() {
            *x *= 0.5;
        }
        let v1 = contrast_product(&v, &xi, &transformer).unwrap();
        let v2 = contrast_product(&v, &xi_half, &transformer).unwrap();
        for (a, b) in v1.values.iter().zip(v2.values.iter()) {
            assert!((0.5 * a - b).norm() <= 1e-14 * a.norm().max(1e-300));
        }
    }

    #[test]
    fn kernel_application_matches_continuous_quadrature() {
        // constant v on the n=0, m=0 slice vs adaptive quadrature of the
        // continuous radial integral of the same (windowed) kernel; the
        // trapezoid grid carries O(h^2) error
        let geom = Geometry::default();
        let spec = GridSpec::default();
        let grids = make_grids(&geom, &spec).unwrap();
        let omega = 2.0;
        let table = build_kernel_table(omega, &geom, &spec, 0.0).unwrap();
        let mut v = ModalField::zeros(&spec, Region::X, omega);
        for i in 0..spec.nrp {
            v.values[(0, 0, i)] = Complex64::new(1.0, 0.0);
        }
        let out = apply_modal_kernel(&table, &grids, &v, Region::Y).unwrap();

        let scale = 2.0 * std::f64::consts::PI * omega * omega;
        for (i, &r) in grids.r.iter().enumerate().step_by(9) {
            let oracle = scale
                * adaptive_simpson_complex(
                    |rp| {
                        crate::greens::windowed_kernel_lane(
                            crate::greens::KernelKind::FreeSpace,
                            0,
                            omega,
                            &geom,
                            0.0,
                            spec.nphi,
                            spec.nz,
                            r,
                            rp,
                        )
                        .unwrap()[0]
                            * rp
                    },
                    0.0,
                    geom.a,
                    1e-10,
                );
            let got = out.values[(0, 0, i)];
            assert!(
                (got - oracle).norm() <= 1e-3 * oracle.norm(),
                "r={r}: {got} vs {oracle}"
            );
        }
    }

    #[test]
    fn weak_contrast_is_born_dominated() {
        let geom = Geometry::default();
        let spec = GridSpec {
            nr: 12,
            nrp: 13,
            nphi: 16,
            nz: 16,
        };
        let grids = make_grids(&geom, &spec).unwrap();
        let xi = sample_xi(&ModelSpec::Model1 { a0: 1e-4 }, &grids);
        let table = build_kernel_table(3.0, &geom, &spec, 1e-6).unwrap();
        let (u0, _) = incident_field(&SourceSet::default_eight(), 3.0, &geom, &spec, 1e-6).unwrap();
        let transformer = Transformer::new(&grids);

        let converged =
            run_forward_with(&table, &grids, &u0, &xi, &ForwardSettings::default()).unwrap();

        // single step from u0: the first-order scattering data
        let (_, v1) = born_iteration(&u0, &xi, &table, &grids, &u0, &transformer).unwrap();
        let w1 = apply_modal_kernel(&table, &grids, &v1, Region::Y).unwrap();

        let num = modal_diff_norm(&converged.w_modal, &w1, &grids);
        let den = modal_norm_sq(&converged.w_modal, &grids).sqrt();
        assert!(num / den <= 1e-3, "Born remainder {}", num / den);
    }

    #[test]
    fn converged_state_is_a_fixed_point() {
        let geom = Geometry::default();
        let spec = GridSpec {
            nr: 12,
            nrp: 13,
            nphi: 16,
            nz: 16,
        };
        let grids = make_grids(&geom, &spec).unwrap();
        let xi = sample_xi(&ModelSpec::default(), &grids);
        let settings = ForwardSettings::default();
        let table = build_kernel_table(2.0, &geom, &spec, 1e-6).unwrap();
        let (u0, _) = incident_field(&SourceSet::default_eight(), 2.0, &geom, &spec, 1e-6).unwrap();
        let result = run_forward_with(&table, &grids, &u0, &xi, &settings).unwrap();
        assert!(result.iterations < settings.max_iter);

        let transformer = Transformer::new(&grids);
        let (reapplied, _) = born_iteration(
            &result.u_modal,
            &xi,
            &table,
            &grids,
            &u0,
            &transformer,
        )
        .unwrap();
        let change = modal_diff_norm(&reapplied, &result.u_modal, &grids)
            / modal_norm_sq(&u0, &grids).sqrt();
        assert!(change <= 10.0 * settings.tol, "fixed-point residual {change}");

        // recorded history must be consistent with the stop rule
        let last = *result.delta_history.last().unwrap();
        assert!(last <= settings.tol);
        assert_eq!(result.delta_history.len(), result.iterations);
    }
}
