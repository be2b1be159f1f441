//! Small self-contained helpers used by the unit and acceptance tests:
//! a seeded RNG, random complex data, and an adaptive Simpson quadrature
//! that serves as an independent oracle for integral identities. Nothing
//! here is part of the public API.
#![doc(hidden)]

use num_complex::Complex64;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rng_complex_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<Complex64> {
    (0..n)
        .map(|_| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
        .collect()
}

fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

fn adaptive_step(
    f: &impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: usize,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson(a, m, fa, flm, fm);
    let right = simpson(m, b, fm, frm, fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        left + right + delta / 15.0
    } else {
        adaptive_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
            + adaptive_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
}

/// Adaptive Simpson quadrature of `f` on `[a, b]` to absolute tolerance `tol`.
pub fn adaptive_simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    let fa = f(a);
    let fb = f(b);
    let fm = f(0.5 * (a + b));
    let whole = simpson(a, b, fa, fm, fb);
    adaptive_step(&f, a, b, fa, fm, fb, whole, tol, 48)
}

/// Complex-valued adaptive Simpson built from two real quadratures.
pub fn adaptive_simpson_complex(
    f: impl Fn(f64) -> Complex64 + Copy,
    a: f64,
    b: f64,
    tol: f64,
) -> Complex64 {
    let re = adaptive_simpson(move |x| f(x).re, a, b, tol);
    let im = adaptive_simpson(move |x| f(x).im, a, b, tol);
    Complex64::new(re, im)
}


/// Dense complex linear solve by Gaussian elimination with partial
/// pivoting; oracle-side code, independent of the SVD machinery.
pub fn gauss_solve(
    a: &nalgebra::DMatrix<Complex64>,
    b: &nalgebra::DVector<Complex64>,
) -> nalgebra::DVector<Complex64> {
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
    let mut x = nalgebra::DVector::zeros(n);
    for row in (0..n).rev() {
        let mut acc = rhs[row];
        for c in row + 1..n {
            acc -= m[(row, c)] * x[c];
        }
        x[row] = acc / m[(row, row)];
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simpson_handles_smooth_and_peaked_integrands() {
        let v = adaptive_simpson(|x: f64| x.sin(), 0.0, std::f64::consts::PI, 1e-12);
        assert!((v - 2.0).abs() < 1e-10);
        let g = adaptive_simpson(|x: f64| (-30.0 * x * x).exp(), -2.0, 2.0, 1e-13);
        let exact = (std::f64::consts::PI / 30.0).sqrt();
        assert!((g - exact).abs() < 1e-10);
    }
}
