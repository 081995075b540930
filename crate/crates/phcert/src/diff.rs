//! Central finite differences used as the fallback when a field carries no
//! analytic derivative evaluators.
//!
//! Step rule: `h_i = max(1, |x_i|) * eps^(1/3)` with `eps` the f64 machine
//! precision. Hessians are symmetrized as `(H + H^T)/2`.

use crate::{MatF, VecF};

/// Per-coordinate step for first derivatives.
pub fn step(xi: f64) -> f64 {
    xi.abs().max(1.0) * f64::EPSILON.cbrt()
}

/// Central-difference gradient of a scalar function.
pub fn gradient<F: Fn(&VecF) -> f64>(f: F, x: &VecF) -> VecF {
    let n = x.len();
    let mut g = VecF::zeros(n);
    for i in 0..n {
        let h = step(x[i]);
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[i] += h;
        xm[i] -= h;
        g[i] = (f(&xp) - f(&xm)) / (2.0 * h);
    }
    g
}

/// Central-difference Jacobian of a vector function; row i holds ∂f_i/∂x_j.
pub fn jacobian<F: Fn(&VecF) -> VecF>(f: F, x: &VecF) -> MatF {
    let n = x.len();
    let f0 = f(x);
    let m = f0.len();
    let mut jac = MatF::zeros(m, n);
    for j in 0..n {
        let h = step(x[j]);
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[j] += h;
        xm[j] -= h;
        let col = (f(&xp) - f(&xm)) / (2.0 * h);
        jac.set_column(j, &col);
    }
    jac
}

/// Central-difference Hessian of a scalar function, symmetrized.
pub fn hessian<F: Fn(&VecF) -> f64>(f: F, x: &VecF) -> MatF {
    let n = x.len();
    let mut h_mat = MatF::zeros(n, n);
    let f0 = f(x);
    for i in 0..n {
        let hi = step(x[i]);
        for j in i..n {
            let hj = step(x[j]);
            let v = if i == j {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[i] += hi;
                xm[i] -= hi;
                (f(&xp) - 2.0 * f0 + f(&xm)) / (hi * hi)
            } else {
                let mut xpp = x.clone();
                let mut xpm = x.clone();
                let mut xmp = x.clone();
                let mut xmm = x.clone();
                xpp[i] += hi;
                xpp[j] += hj;
                xpm[i] += hi;
                xpm[j] -= hj;
                xmp[i] -= hi;
                xmp[j] += hj;
                xmm[i] -= hi;
                xmm[j] -= hj;
                (f(&xpp) - f(&xpm) - f(&xmp) + f(&xmm)) / (4.0 * hi * hj)
            };
            h_mat[(i, j)] = v;
            h_mat[(j, i)] = v;
        }
    }
    h_mat
}

/// Central-difference partial ∂F/∂x_i of a matrix-valued function.
pub fn matrix_partial<F: Fn(&VecF) -> MatF>(f: F, x: &VecF, i: usize) -> MatF {
    let h = step(x[i]);
    let mut xp = x.clone();
    let mut xm = x.clone();
    xp[i] += h;
    xm[i] -= h;
    (f(&xp) - f(&xm)) / (2.0 * h)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gradient_of_quadratic_is_exact() {
        let f = |q: &VecF| 2.0 * q[0] * q[0];
        let g = gradient(f, &VecF::from_vec(vec![1.0]));
        assert!((g[0] - 4.0).abs() < 1e-7);
    }

    #[test]
    fn hessian_of_sine_at_zero() {
        let f = |q: &VecF| q[0].sin();
        let h = hessian(f, &VecF::from_vec(vec![0.0]));
        assert!(h[(0, 0)].abs() < 1e-7);
    }

    #[test]
    fn jacobian_of_linear_map() {
        let a = MatF::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let a2 = a.clone();
        let jac = jacobian(move |x: &VecF| &a2 * x, &VecF::from_vec(vec![0.3, -0.7]));
        assert!(spectral_close(&jac, &a, 1e-9));
    }

    fn spectral_close(a: &MatF, b: &MatF, tol: f64) -> bool {
        crate::linalg::spectral_norm(&(a - b)) <= tol
    }
}
