//! Cylinder functions `J_n`, `Y_n`, `I_n`, `K_n` and their first
//! derivatives for integer order, on real and (near-real) complex
//! arguments.
//!
//! The evaluation scheme avoids polynomial fits entirely:
//!
//! * `J` — Miller's backward recurrence normalized with
//!   `J_0 + 2 sum J_{2k} = 1`, which yields every order at once.
//! * `Y_0` — ascending series for `|z| <= 4`, otherwise the Neumann
//!   expansion `Y_0 = (2/pi)(ln(z/2)+gamma) J_0 + (4/pi) sum_{k>=1}
//!   (-1)^{k+1} J_{2k}/k`; higher orders by stable forward recurrence.
//! * `I` — Miller recurrence normalized with `e^z = I_0 + 2 sum I_k`,
//!   produced in the exponentially scaled form `e^{-z} I_n`.
//! * `K_0` — ascending series for `|z| < 2`, otherwise Gauss-Legendre
//!   quadrature of `e^z K_0(z) = 2 int_0^inf e^{-2 z s^2} (1+s^2)^{-1/2} ds`
//!   after the substitution `u = s sqrt(2z)`; `K_1` closes through the
//!   Wronskian `I_0 K_1 + I_1 K_0 = 1/z`, higher orders by forward
//!   recurrence.
//!
//! All recurrences are entire in the argument, so the same code path
//! serves the damped (complex wavenumber) kernels.

use std::sync::OnceLock;

use num_complex::Complex64;

use crate::error::{CoreError, Result};

const EULER_GAMMA: f64 = 0.577215664901532860606512090082402431;
const FRAC_2_PI: f64 = std::f64::consts::FRAC_2_PI;

/// Value and first derivative of a cylinder function at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CylinderFunValue {
    pub value: f64,
    pub derivative: f64,
}

/// `J_n` and `J_n'` for all orders `0..=nmax`.
#[derive(Debug, Clone)]
pub struct JSweep {
    pub j: Vec<Complex64>,
    pub jp: Vec<Complex64>,
}

/// `J, J', Y, Y'` for all orders `0..=nmax`.
#[derive(Debug, Clone)]
pub struct JySweep {
    pub j: Vec<Complex64>,
    pub jp: Vec<Complex64>,
    pub y: Vec<Complex64>,
    pub yp: Vec<Complex64>,
}

/// Exponentially scaled modified pair for all orders `0..=nmax`:
/// `i = e^{-z} I_n(z)`, `ip = e^{-z} I_n'(z)`, `k = e^{z} K_n(z)`,
/// `kp = e^{z} K_n'(z)`.
#[derive(Debug, Clone)]
pub struct IkSweepScaled {
    pub i: Vec<Complex64>,
    pub ip: Vec<Complex64>,
    pub k: Vec<Complex64>,
    pub kp: Vec<Complex64>,
}

fn is_finite_c(v: Complex64) -> bool {
    v.re.is_finite() && v.im.is_finite()
}

/// Overflow-safe complex reciprocal. The naive `1/z` computes `|z|^2`,
/// which leaves the f64 range once `|z|` passes ~1e154; the unnormalized
/// Miller sums get far larger than that.
fn c_recip(z: Complex64) -> Complex64 {
    let s = z.re.abs().max(z.im.abs());
    let zs = Complex64::new(z.re / s, z.im / s);
    let d = zs.norm_sqr() * s;
    Complex64::new(zs.re / d, -zs.im / d)
}

fn check_finite(vs: &[Complex64], what: &str) -> Result<()> {
    if vs.iter().all(|v| is_finite_c(*v)) {
        Ok(())
    } else {
        Err(CoreError::Overflow(format!(
            "{what} left the f64 range during recurrence"
        )))
    }
}

/// Miller backward recurrence: `J_0(z) .. J_{n_top}(z)`.
fn j_orders(n_top: usize, z: Complex64) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); n_top + 1];
    if z.norm() == 0.0 {
        out[0] = Complex64::new(1.0, 0.0);
        return out;
    }
    let az = z.norm();
    let base = (n_top as f64).max(az).ceil();
    let start = base as usize + 40 + (10.0 * base.sqrt()) as usize;

    let two_over_z = Complex64::new(2.0, 0.0) / z;
    let mut next = Complex64::new(0.0, 0.0); // J_{k+1} (unnormalized)
    let mut cur = Complex64::new(1.0, 0.0); // J_k at k = start
    let mut sum = Complex64::new(0.0, 0.0);
    let mut k = start;
    if k <= n_top {
        out[k] = cur;
    }
    if k % 2 == 0 {
        sum += 2.0 * cur;
    }
    while k > 0 {
        let prev = two_over_z * (k as f64) * cur - next;
        next = cur;
        cur = prev;
        k -= 1;
        if k <= n_top {
            out[k] = cur;
        }
        if k == 0 {
            sum += cur;
        } else if k % 2 == 0 {
            sum += 2.0 * cur;
        }
        // periodic rescale against overflow of the unnormalized pass
        if cur.re.abs().max(cur.im.abs()) > 1e250 {
            let s = 1e-250;
            cur *= s;
            next *= s;
            sum *= s;
            let lo = k.min(n_top + 1);
            for v in &mut out[lo..] {
                *v *= s;
            }
        }
    }
    let norm = c_recip(sum);
    for v in &mut out {
        *v *= norm;
    }
    out
}

fn derivatives_from_triplet(
    vals: &[Complex64],
    minus_one_rule: impl Fn(usize) -> Complex64,
    sign: f64,
) -> Vec<Complex64> {
    // C_n' = (C_{n-1} - C_{n+1})/2 for J/Y; (C_{n-1} + C_{n+1})/2 for I;
    // -(C_{n-1} + C_{n+1})/2 for K. `vals` must extend one past the orders
    // of interest; `minus_one_rule(0)` supplies the C_{-1} entry.
    let nmax = vals.len() - 2;
    (0..=nmax)
        .map(|n| {
            let lower = if n == 0 { minus_one_rule(0) } else { vals[n - 1] };
            0.5 * (lower + sign * vals[n + 1])
        })
        .collect()
}

/// `J_0(x) .. J_{n_top}(x)` for real non-negative argument.
pub fn j_orders_real(n_top: usize, x: f64) -> Vec<f64> {
    debug_assert!(x >= 0.0);
    j_orders(n_top, Complex64::new(x, 0.0))
        .into_iter()
        .map(|v| v.re)
        .collect()
}

/// `J_n(z)` and derivatives for `n = 0..=nmax`.
pub fn j_sweep(nmax: usize, z: Complex64) -> Result<JSweep> {
    let all = j_orders(nmax + 1, z);
    check_finite(&all, "J recurrence")?;
    // J_{-1} = -J_1
    let jp = derivatives_from_triplet(&all, |_| -all[1], -1.0);
    let j = all[..=nmax].to_vec();
    Ok(JSweep { j, jp })
}

/// Ascending series for `Y_0` and `Y_0'`, reliable for `|z| <= ~4`.
fn y0_ascending(z: Complex64, j0: Complex64, j0p: Complex64) -> (Complex64, Complex64) {
    let lg = (0.5 * z).ln() + EULER_GAMMA;
    let t = 0.25 * z * z;
    let mut term = Complex64::new(1.0, 0.0); // t^k / (k!)^2
    let mut harmonic = 0.0;
    let mut s = Complex64::new(0.0, 0.0);
    let mut sp = Complex64::new(0.0, 0.0); // d/dz of the series
    let mut sign = 1.0;
    for k in 1..=80 {
        term *= t / ((k * k) as f64);
        harmonic += 1.0 / k as f64;
        let contrib = sign * harmonic * term;
        s += contrib;
        // d/dz [t^k] = k t^{k-1} z/2  =>  contrib' = contrib * k * 2/z... via t
        sp += contrib * (2.0 * k as f64) / z;
        sign = -sign;
        if contrib.norm() < 1e-18 * s.norm().max(1e-30) {
            break;
        }
    }
    let y0 = FRAC_2_PI * (lg * j0 + s);
    let y0p = FRAC_2_PI * (j0 / z + lg * j0p + sp);
    (y0, y0p)
}

/// Neumann expansion for `Y_0` and `Y_0'` from a table of `J` orders.
fn y0_neumann(z: Complex64, jall: &[Complex64]) -> (Complex64, Complex64) {
    let lg = (0.5 * z).ln() + EULER_GAMMA;
    let mut s = Complex64::new(0.0, 0.0);
    let mut sp = Complex64::new(0.0, 0.0);
    let mut sign = 1.0; // (-1)^{k+1} starting at k = 1
    let kmax = (jall.len() - 2) / 2;
    for k in 1..=kmax {
        let jd = 0.5 * (jall[2 * k - 1] - jall[2 * k + 1]);
        s += sign * jall[2 * k] / k as f64;
        sp += sign * jd / k as f64;
        sign = -sign;
    }
    let y0 = FRAC_2_PI * lg * jall[0] + 2.0 * FRAC_2_PI * s;
    let j0p = -jall[1];
    let y0p = FRAC_2_PI * (jall[0] / z + lg * j0p) + 2.0 * FRAC_2_PI * sp;
    (y0, y0p)
}

/// `J_n, J_n', Y_n, Y_n'` for `n = 0..=nmax` at `Re z > 0`.
pub fn jy_sweep(nmax: usize, z: Complex64) -> Result<JySweep> {
    if z.norm() == 0.0 || z.re <= 0.0 {
        return Err(CoreError::Domain(format!(
            "Y_n requires Re z > 0 (got {z})"
        )));
    }
    let az = z.norm();
    let k_neu = (0.5 * az).ceil() as usize + 40;
    let top = (nmax + 2).max(2 * k_neu + 1);
    let jall = j_orders(top, z);
    check_finite(&jall, "J recurrence")?;

    let jp = derivatives_from_triplet(&jall[..=nmax + 1], |_| -jall[1], -1.0);
    let j = jall[..=nmax].to_vec();

    let (y0, y0p) = if az <= 4.0 {
        y0_ascending(z, jall[0], -jall[1])
    } else {
        y0_neumann(z, &jall)
    };
    let mut y = vec![Complex64::new(0.0, 0.0); nmax + 2];
    y[0] = y0;
    if nmax + 1 >= 1 {
        y[1] = -y0p;
        for n in 1..=nmax {
            y[n + 1] = (2.0 * n as f64) / z * y[n] - y[n - 1];
        }
    }
    check_finite(&y, "Y recurrence")?;
    let yp = derivatives_from_triplet(&y, |_| -y[1], -1.0);
    let y = y[..=nmax].to_vec();
    Ok(JySweep { j, jp, y, yp })
}

/// Miller backward recurrence for the scaled `e^{-z} I_n(z)`, `n = 0..=n_top`.
fn i_orders_scaled(n_top: usize, z: Complex64) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); n_top + 1];
    if z.norm() == 0.0 {
        out[0] = Complex64::new(1.0, 0.0);
        return out;
    }
    let az = z.norm();
    let base = (n_top as f64).max(az).ceil();
    let start = base as usize + 40 + (10.0 * base.sqrt()) as usize;

    let two_over_z = Complex64::new(2.0, 0.0) / z;
    let mut next = Complex64::new(0.0, 0.0);
    let mut cur = Complex64::new(1.0, 0.0);
    let mut sum = Complex64::new(0.0, 0.0);
    let mut k = start;
    if k <= n_top {
        out[k] = cur;
    }
    sum += if k == 0 { cur } else { 2.0 * cur };
    while k > 0 {
        let prev = two_over_z * (k as f64) * cur + next;
        next = cur;
        cur = prev;
        k -= 1;
        if k <= n_top {
            out[k] = cur;
        }
        sum += if k == 0 { cur } else { 2.0 * cur };
        if cur.re.abs().max(cur.im.abs()) > 1e250 {
            let s = 1e-250;
            cur *= s;
            next *= s;
            sum *= s;
            let lo = k.min(n_top + 1);
            for v in &mut out[lo..] {
                *v *= s;
            }
        }
    }
    // sum equals e^{z} times the seed scale, so dividing by it yields
    // e^{-z} I_n directly.
    let norm = c_recip(sum);
    for v in &mut out {
        *v *= norm;
    }
    out
}

/// Gauss-Legendre nodes and weights on `[a, b]` by Newton iteration on
/// the Legendre polynomials.
pub fn gauss_legendre_nodes(a: f64, b: f64, n: usize) -> Vec<(f64, f64)> {
    gauss_legendre_0_to(b - a, n)
        .into_iter()
        .map(|(x, w)| (a + x, w))
        .collect()
}

fn gauss_legendre_0_to(b: f64, n: usize) -> Vec<(f64, f64)> {
    // Newton iteration on Legendre polynomials, mapped from (-1,1) to (0,b).
    let mut nodes = Vec::with_capacity(n);
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0f64, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let (mut p0, mut p1) = (1.0f64, x);
        for k in 2..=n {
            let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
            p0 = p1;
            p1 = p2;
        }
        let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes.push((0.5 * b * (x + 1.0), 0.5 * b * w));
    }
    nodes
}

fn k0_quadrature_nodes() -> &'static Vec<(f64, f64)> {
    static NODES: OnceLock<Vec<(f64, f64)>> = OnceLock::new();
    NODES.get_or_init(|| gauss_legendre_0_to(8.0, 100))
}

/// Scaled `e^{z} K_0(z)` by Gauss-Legendre quadrature, for `|z| >= 2`.
fn k0_scaled_quadrature(z: Complex64) -> Complex64 {
    let beta = (2.0 * z).sqrt();
    let mut acc = Complex64::new(0.0, 0.0);
    for &(u, w) in k0_quadrature_nodes() {
        let t = Complex64::new(u, 0.0) / beta;
        let root = (Complex64::new(1.0, 0.0) + t * t).sqrt();
        acc += w * (-u * u).exp() / root;
    }
    2.0 * acc / beta
}

/// Ascending series for `K_0(z)`, `|z| < 2`; returns the scaled `e^z K_0`.
fn k0_scaled_series(z: Complex64, i0_scaled: Complex64) -> Complex64 {
    let ez = z.exp();
    let i0 = i0_scaled * ez;
    let lg = (0.5 * z).ln() + EULER_GAMMA;
    let t = 0.25 * z * z;
    let mut term = Complex64::new(1.0, 0.0);
    let mut harmonic = 0.0;
    let mut s = Complex64::new(0.0, 0.0);
    for k in 1..=60 {
        term *= t / ((k * k) as f64);
        harmonic += 1.0 / k as f64;
        let contrib = harmonic * term;
        s += contrib;
        if contrib.norm() < 1e-18 * s.norm().max(1e-30) {
            break;
        }
    }
    (-lg * i0 + s) * ez
}

/// Scaled modified pair for `n = 0..=nmax` at `Re z > 0`.
pub fn ik_sweep_scaled(nmax: usize, z: Complex64) -> Result<IkSweepScaled> {
    if z.norm() == 0.0 || z.re <= 0.0 {
        return Err(CoreError::Domain(format!(
            "K_n requires Re z > 0 (got {z})"
        )));
    }
    let iall = i_orders_scaled(nmax + 1, z);
    check_finite(&iall, "I recurrence")?;
    let ip = derivatives_from_triplet(&iall, |_| iall[1], 1.0);
    let i = iall[..=nmax].to_vec();

    let k0 = if z.norm() < 2.0 {
        k0_scaled_series(z, iall[0])
    } else {
        k0_scaled_quadrature(z)
    };
    // Wronskian I_0 K_1 + I_1 K_0 = 1/z, unchanged by the e^{-z}/e^{+z} pair.
    let k1 = (Complex64::new(1.0, 0.0) / z - iall[1] * k0) / iall[0];
    let mut kv = vec![Complex64::new(0.0, 0.0); nmax + 2];
    kv[0] = k0;
    kv[1] = k1;
    for n in 1..=nmax {
        kv[n + 1] = kv[n - 1] + (2.0 * n as f64) / z * kv[n];
    }
    check_finite(&kv, "K recurrence")?;
    // K_n' = -(K_{n-1} + K_{n+1})/2 with K_{-1} = K_1
    let kp: Vec<Complex64> = (0..=nmax)
        .map(|n| {
            let lower = if n == 0 { kv[1] } else { kv[n - 1] };
            -0.5 * (lower + kv[n + 1])
        })
        .collect();
    let k = kv[..=nmax].to_vec();
    Ok(IkSweepScaled { i, ip, k, kp })
}

fn order_index(n: i32) -> (usize, f64) {
    // C_{-n} = (-1)^n C_n for J and Y.
    let idx = n.unsigned_abs() as usize;
    let sign = if n < 0 && n % 2 != 0 { -1.0 } else { 1.0 };
    (idx, sign)
}

/// `J_n(x)` with derivative; negative order via `J_{-n} = (-1)^n J_n`.
pub fn besselj(n: i32, x: f64) -> Result<CylinderFunValue> {
    if x < 0.0 {
        return Err(CoreError::Domain(format!("J_n needs x >= 0, got {x}")));
    }
    let (idx, sign) = order_index(n);
    let sweep = j_sweep(idx, Complex64::new(x, 0.0))?;
    Ok(CylinderFunValue {
        value: sign * sweep.j[idx].re,
        derivative: sign * sweep.jp[idx].re,
    })
}

/// `Y_n(x)` with derivative, `x > 0`.
pub fn bessely(n: i32, x: f64) -> Result<CylinderFunValue> {
    if x <= 0.0 {
        return Err(CoreError::Domain(format!("Y_n needs x > 0, got {x}")));
    }
    let (idx, sign) = order_index(n);
    let sweep = jy_sweep(idx, Complex64::new(x, 0.0))?;
    Ok(CylinderFunValue {
        value: sign * sweep.y[idx].re,
        derivative: sign * sweep.yp[idx].re,
    })
}

const UNSCALED_LIMIT: f64 = 700.0;

/// `I_n(x)` with derivative; `I_{-n} = I_n`. Fails explicitly once
/// `e^x` leaves the representable range; use [`besseli_scaled`] there.
pub fn besseli(n: i32, x: f64) -> Result<CylinderFunValue> {
    if x < 0.0 {
        return Err(CoreError::Domain(format!("I_n needs x >= 0, got {x}")));
    }
    if x > UNSCALED_LIMIT {
        return Err(CoreError::Overflow(format!(
            "I_n(x) overflows for x = {x} > {UNSCALED_LIMIT}; use the scaled variant"
        )));
    }
    let idx = n.unsigned_abs() as usize;
    let sweep = ik_sweep_scaled(idx, Complex64::new(x.max(f64::MIN_POSITIVE), 0.0));
    // x == 0 is regular for I; route through the recurrence's z=0 shortcut.
    if x == 0.0 {
        let value = if idx == 0 { 1.0 } else { 0.0 };
        let derivative = if idx == 1 { 0.5 } else { 0.0 };
        return Ok(CylinderFunValue { value, derivative });
    }
    let sweep = sweep?;
    let ex = x.exp();
    Ok(CylinderFunValue {
        value: sweep.i[idx].re * ex,
        derivative: sweep.ip[idx].re * ex,
    })
}

/// `K_n(x)` with derivative; `K_{-n} = K_n`, `x > 0`.
pub fn besselk(n: i32, x: f64) -> Result<CylinderFunValue> {
    if x <= 0.0 {
        return Err(CoreError::Domain(format!("K_n needs x > 0, got {x}")));
    }
    if x > UNSCALED_LIMIT {
        return Err(CoreError::Overflow(format!(
            "K_n(x) underflows for x = {x} > {UNSCALED_LIMIT}; use the scaled variant"
        )));
    }
    let idx = n.unsigned_abs() as usize;
    let sweep = ik_sweep_scaled(idx, Complex64::new(x, 0.0))?;
    let emx = (-x).exp();
    Ok(CylinderFunValue {
        value: sweep.k[idx].re * emx,
        derivative: sweep.kp[idx].re * emx,
    })
}

/// `e^{-x} I_n(x)` with the equally scaled derivative.
pub fn besseli_scaled(n: i32, x: f64) -> Result<CylinderFunValue> {
    if x < 0.0 {
        return Err(CoreError::Domain(format!("I_n needs x >= 0, got {x}")));
    }
    let idx = n.unsigned_abs() as usize;
    if x == 0.0 {
        let value = if idx == 0 { 1.0 } else { 0.0 };
        let derivative = if idx == 1 { 0.5 } else { 0.0 };
        return Ok(CylinderFunValue { value, derivative });
    }
    let sweep = ik_sweep_scaled(idx, Complex64::new(x, 0.0))?;
    Ok(CylinderFunValue {
        value: sweep.i[idx].re,
        derivative: sweep.ip[idx].re,
    })
}

/// `e^{x} K_n(x)` with the equally scaled derivative.
pub fn besselk_scaled(n: i32, x: f64) -> Result<CylinderFunValue> {
    if x <= 0.0 {
        return Err(CoreError::Domain(format!("K_n needs x > 0, got {x}")));
    }
    let idx = n.unsigned_abs() as usize;
    let sweep = ik_sweep_scaled(idx, Complex64::new(x, 0.0))?;
    Ok(CylinderFunValue {
        value: sweep.k[idx].re,
        derivative: sweep.kp[idx].re,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testsupport::adaptive_simpson;

    /// Plain power series for J_0, the test-side oracle.
    fn j0_series(x: f64) -> f64 {
        let t = -0.25 * x * x;
        let mut term = 1.0;
        let mut s = 1.0;
        for k in 1..=40 {
            term *= t / ((k * k) as f64);
            s += term;
        }
        s
    }

    /// Ascending-series oracle for Y_0, valid for small x.
    fn y0_series(x: f64) -> f64 {
        let t = 0.25 * x * x;
        let mut term = 1.0;
        let mut h = 0.0;
        let mut s = 0.0;
        let mut sign = 1.0;
        for k in 1..=40 {
            term *= t / ((k * k) as f64);
            h += 1.0 / k as f64;
            s += sign * h * term;
            sign = -sign;
        }
        FRAC_2_PI * (((0.5 * x).ln() + EULER_GAMMA) * j0_series(x) + s)
    }

    fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(lo) * f(mid) <= 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn j_at_zero() {
        let v = besselj(0, 0.0).unwrap();
        assert_eq!(v.value, 1.0);
        assert_eq!(v.derivative, 0.0);
        let v = besselj(1, 0.0).unwrap();
        assert_eq!(v.value, 0.0);
        assert!((v.derivative - 0.5).abs() < 1e-15);
    }

    #[test]
    fn j0_first_zero_from_series_oracle() {
        let zero = bisect(j0_series, 2.0, 3.0);
        assert!((zero - 2.404825557695773).abs() < 1e-12);
        let v = besselj(0, 2.404825557695773).unwrap();
        assert!(v.value.abs() < 1e-9, "J0 at its zero: {}", v.value);
    }

    #[test]
    fn y0_first_zero_and_small_argument_log() {
        let zero = bisect(y0_series, 0.5, 1.5);
        assert!((zero - 0.893576966279167).abs() < 1e-12);
        let v = bessely(0, 0.893576966279167).unwrap();
        assert!(v.value.abs() < 1e-9, "Y0 at its zero: {}", v.value);

        let x = 1e-4;
        let v = bessely(0, x).unwrap();
        let asymptote = FRAC_2_PI * ((0.5 * x).ln() + EULER_GAMMA);
        assert!((v.value - y0_series(x)).abs() < 1e-12);
        assert!((v.value - asymptote).abs() < 1e-6);
    }

    #[test]
    fn jy_wronskian_at_spot() {
        let (n, x) = (3, 1.7);
        let j = besselj(n, x).unwrap();
        let y = bessely(n, x).unwrap();
        let w = j.value * y.derivative - j.derivative * y.value;
        let exact = FRAC_2_PI / x;
        assert!((w - exact).abs() / exact.abs() < 1e-12);
    }

    #[test]
    fn ik_wronskian_at_spot() {
        let (n, x) = (2, 3.3);
        let i = besseli(n, x).unwrap();
        let k = besselk(n, x).unwrap();
        let w = i.value * k.derivative - i.derivative * k.value;
        let exact = -1.0 / x;
        assert!((w - exact).abs() / exact.abs() < 1e-12);
    }

    #[test]
    fn i_at_zero_and_k0_quadrature_oracle() {
        let v = besseli(0, 0.0).unwrap();
        assert_eq!(v.value, 1.0);
        assert_eq!(v.derivative, 0.0);

        // K_0(1) = int_0^inf exp(-cosh t) dt; integrand below 1e-22 past t=10
        let oracle = adaptive_simpson(|t: f64| (-t.cosh()).exp(), 0.0, 10.0, 1e-13);
        assert!((oracle - 0.421024438).abs() < 1e-8);
        let v = besselk(0, 1.0).unwrap();
        assert!((v.value - oracle).abs() < 1e-8);
    }

    #[test]
    fn y0_series_and_neumann_agree_on_overlap() {
        // The two independent evaluation routes must agree where both hold.
        for &x in &[2.5, 3.0, 3.5, 4.0, 4.5, 5.0] {
            let z = Complex64::new(x, 0.0);
            let jall = j_orders(140, z);
            let (ya, yap) = y0_ascending(z, jall[0], -jall[1]);
            let (yn, ynp) = y0_neumann(z, &jall);
            assert!((ya - yn).norm() < 1e-12, "Y0 mismatch at {x}");
            assert!((yap - ynp).norm() < 1e-12, "Y0' mismatch at {x}");
        }
    }

    #[test]
    fn wronskian_and_recurrence_sweep() {
        // log-spaced arguments, orders to 64
        let xs: Vec<f64> = (0..60)
            .map(|i| 10f64.powf(-3.0 + 5.0 * i as f64 / 59.0))
            .collect();
        for &x in &xs {
            let z = Complex64::new(x, 0.0);
            let jy = jy_sweep(64, z).unwrap();
            let ik = ik_sweep_scaled(64, z).unwrap();
            for n in 0..=64usize {
                let w = jy.j[n] * jy.yp[n] - jy.jp[n] * jy.y[n];
                let exact = FRAC_2_PI / x;
                assert!(
                    (w.re - exact).abs() / exact < 1e-10,
                    "J/Y Wronskian n={n} x={x}: {}",
                    w.re
                );
                let wik = ik.i[n] * ik.kp[n] - ik.ip[n] * ik.k[n];
                assert!(
                    (wik.re + 1.0 / x).abs() * x < 1e-10,
                    "I/K Wronskian n={n} x={x}: {}",
                    wik.re
                );
            }
            // three-term recurrences, checked against the local scale
            for n in 1..64usize {
                let lhs = jy.j[n - 1] + jy.j[n + 1];
                let rhs = 2.0 * n as f64 / x * jy.j[n];
                let scale = lhs.norm() + rhs.norm() + 1e-300;
                assert!((lhs - rhs).norm() / scale < 1e-9, "J rec n={n} x={x}");
                let lhs = jy.y[n - 1] + jy.y[n + 1];
                let rhs = 2.0 * n as f64 / x * jy.y[n];
                let scale = lhs.norm() + rhs.norm() + 1e-300;
                assert!((lhs - rhs).norm() / scale < 1e-9, "Y rec n={n} x={x}");
                let lhs = ik.i[n - 1] - ik.i[n + 1];
                let rhs = 2.0 * n as f64 / x * ik.i[n];
                let scale = ik.i[n - 1].norm() + ik.i[n + 1].norm() + rhs.norm() + 1e-300;
                assert!((lhs - rhs).norm() / scale < 1e-9, "I rec n={n} x={x}");
                let lhs = ik.k[n + 1] - ik.k[n - 1];
                let rhs = 2.0 * n as f64 / x * ik.k[n];
                let scale = ik.k[n + 1].norm() + ik.k[n - 1].norm() + rhs.norm() + 1e-300;
                assert!((lhs - rhs).norm() / scale < 1e-9, "K rec n={n} x={x}");
            }
        }
    }

    #[test]
    fn negative_order_mapping() {
        let x = 2.7;
        for n in 1..6i32 {
            let plus = besselj(n, x).unwrap();
            let minus = besselj(-n, x).unwrap();
            let s = if n % 2 == 0 { 1.0 } else { -1.0 };
            assert!((minus.value - s * plus.value).abs() < 1e-14);
            let iplus = besseli(n, x).unwrap();
            let iminus = besseli(-n, x).unwrap();
            assert_eq!(iplus.value, iminus.value);
            let kplus = besselk(n, x).unwrap();
            let kminus = besselk(-n, x).unwrap();
            assert_eq!(kplus.value, kminus.value);
        }
    }

    #[test]
    fn domain_and_overflow_errors() {
        assert!(besselj(0, -1.0).is_err());
        assert!(bessely(0, 0.0).is_err());
        assert!(besselk(2, -3.0).is_err());
        assert!(besseli(0, 800.0).is_err());
        assert!(besselk(0, 800.0).is_err());
        // scaled variants stay valid out there
        let i = besseli_scaled(0, 800.0).unwrap();
        let k = besselk_scaled(0, 800.0).unwrap();
        assert!(i.value.is_finite() && i.value > 0.0);
        assert!(k.value.is_finite() && k.value > 0.0);
        let w = i.value * k.derivative - i.derivative * k.value;
        assert!((w + 1.0 / 800.0).abs() * 800.0 < 1e-10);
    }

    #[test]
    fn complex_argument_consistency() {
        // tiny imaginary parts must perturb smoothly, matching a central
        // difference of the real path
        let x = 5.0;
        let h = 1e-6;
        let jy = jy_sweep(8, Complex64::new(x, h)).unwrap();
        let re0 = jy_sweep(8, Complex64::new(x, 0.0)).unwrap();
        for n in 0..=8usize {
            // first-order Taylor: J(x + ih) ~ J(x) + ih J'(x)
            let taylor = re0.j[n] + Complex64::new(0.0, h) * re0.jp[n];
            assert!((jy.j[n] - taylor).norm() < 1e-11, "n={n}");
            let taylor_y = re0.y[n] + Complex64::new(0.0, h) * re0.yp[n];
            assert!((jy.y[n] - taylor_y).norm() < 1e-11, "n={n}");
        }
    }

    #[test]
    fn scaled_pair_matches_unscaled_in_range() {
        for &x in &[0.3, 1.0, 5.0, 20.0, 120.0] {
            let i = besseli(0, x);
            let iscaled = besseli_scaled(0, x).unwrap();
            if x <= UNSCALED_LIMIT {
                let i = i.unwrap();
                assert!(((iscaled.value * x.exp()) - i.value).abs() <= 1e-10 * i.value.abs());
            }
            let k = besselk(3, x).unwrap();
            let kscaled = besselk_scaled(3, x).unwrap();
            assert!(((kscaled.value * (-x).exp()) - k.value).abs() <= 1e-10 * k.value.abs());
        }
    }
}

