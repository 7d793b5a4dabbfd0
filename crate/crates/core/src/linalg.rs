//! Tiny symmetric-matrix helpers for dimensions 1 to 3.

use crate::grid::MAX_DIM;

pub type SymMat = [[f64; MAX_DIM]; MAX_DIM];

pub fn trace(m: &SymMat, n: usize) -> f64 {
    (0..n).map(|i| m[i][i]).sum()
}

pub fn det(m: &SymMat, n: usize) -> f64 {
    match n {
        1 => m[0][0],
        2 => m[0][0] * m[1][1] - m[0][1] * m[1][0],
        3 => {
            m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
                - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
                + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
        }
        _ => unreachable!("dimension {n}"),
    }
}

/// Inverse via closed forms / adjugate; `None` when the determinant vanishes.
pub fn inverse(m: &SymMat, n: usize) -> Option<SymMat> {
    let d = det(m, n);
    if d == 0.0 || !d.is_finite() {
        return None;
    }
    let mut out = [[0.0; MAX_DIM]; MAX_DIM];
    match n {
        1 => out[0][0] = 1.0 / d,
        2 => {
            out[0][0] = m[1][1] / d;
            out[1][1] = m[0][0] / d;
            out[0][1] = -m[0][1] / d;
            out[1][0] = -m[1][0] / d;
        }
        3 => {
            let c = |r: usize, s: usize| {
                let (r1, r2) = match r {
                    0 => (1, 2),
                    1 => (0, 2),
                    _ => (0, 1),
                };
                let (s1, s2) = match s {
                    0 => (1, 2),
                    1 => (0, 2),
                    _ => (0, 1),
                };
                let minor = m[r1][s1] * m[r2][s2] - m[r1][s2] * m[r2][s1];
                if (r + s) % 2 == 0 {
                    minor
                } else {
                    -minor
                }
            };
            for r in 0..3 {
                for s in 0..3 {
                    out[r][s] = c(s, r) / d;
                }
            }
        }
        _ => unreachable!(),
    }
    Some(out)
}

/// Quadratic form `v^T M v`.
pub fn quad_form(m: &SymMat, v: &[f64], n: usize) -> f64 {
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            acc += v[i] * m[i][j] * v[j];
        }
    }
    acc
}

/// `M v` restricted to the leading `n` entries.
pub fn mat_vec(m: &SymMat, v: &[f64; MAX_DIM], n: usize) -> [f64; MAX_DIM] {
    let mut out = [0.0; MAX_DIM];
    for i in 0..n {
        for j in 0..n {
            out[i] += m[i][j] * v[j];
        }
    }
    out
}

/// Smallest eigenvalue of a symmetric matrix (analytic for n <= 3).
pub fn min_eigenvalue(m: &SymMat, n: usize) -> f64 {
    match n {
        1 => m[0][0],
        2 => {
            let mean = 0.5 * (m[0][0] + m[1][1]);
            let diff = 0.5 * (m[0][0] - m[1][1]);
            mean - (diff * diff + m[0][1] * m[0][1]).sqrt()
        }
        3 => {
            // Trigonometric solution of the characteristic cubic.
            let p1 = m[0][1] * m[0][1] + m[0][2] * m[0][2] + m[1][2] * m[1][2];
            if p1 == 0.0 {
                return m[0][0].min(m[1][1]).min(m[2][2]);
            }
            let q = trace(m, 3) / 3.0;
            let p2 =
                (m[0][0] - q).powi(2) + (m[1][1] - q).powi(2) + (m[2][2] - q).powi(2) + 2.0 * p1;
            let p = (p2 / 6.0).sqrt();
            let mut b = [[0.0; MAX_DIM]; MAX_DIM];
            for i in 0..3 {
                for j in 0..3 {
                    b[i][j] = (m[i][j] - if i == j { q } else { 0.0 }) / p;
                }
            }
            let r = (det(&b, 3) / 2.0).clamp(-1.0, 1.0);
            let phi = r.acos() / 3.0;
            // Smallest root of the shifted cubic.
            q + 2.0 * p * (phi + 2.0 * std::f64::consts::FRAC_PI_3).cos()
        }
        _ => unreachable!(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m2(a: f64, b: f64, c: f64) -> SymMat {
        let mut m = [[0.0; MAX_DIM]; MAX_DIM];
        m[0][0] = a;
        m[0][1] = b;
        m[1][0] = b;
        m[1][1] = c;
        m
    }

    #[test]
    fn inverse_2d() {
        let m = m2(2.0, 0.5, 1.0);
        let inv = inverse(&m, 2).unwrap();
        // M * M^-1 = I
        for i in 0..2 {
            for j in 0..2 {
                let v: f64 = (0..2).map(|k| m[i][k] * inv[k][j]).sum();
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((v - expect).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn inverse_3d() {
        let mut m = [[0.0; MAX_DIM]; MAX_DIM];
        let data = [[4.0, 1.0, 0.5], [1.0, 3.0, 0.2], [0.5, 0.2, 2.0]];
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] = data[i][j];
            }
        }
        let inv = inverse(&m, 3).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let v: f64 = (0..3).map(|k| m[i][k] * inv[k][j]).sum();
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((v - expect).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn singular_returns_none() {
        assert!(inverse(&m2(1.0, 1.0, 1.0), 2).is_none());
    }

    #[test]
    fn eigenvalues() {
        assert_eq!(min_eigenvalue(&m2(3.0, 0.0, 7.0), 2), 3.0);
        let m = m2(2.0, 1.0, 2.0); // eigenvalues 1 and 3
        assert!((min_eigenvalue(&m, 2) - 1.0).abs() < 1e-14);

        let mut d3 = [[0.0; MAX_DIM]; MAX_DIM];
        d3[0][0] = 5.0;
        d3[1][1] = 0.25;
        d3[2][2] = 9.0;
        assert!((min_eigenvalue(&d3, 3) - 0.25).abs() < 1e-12);
        // Rotation-free check: A = Q D Q^T with a simple Givens rotation.
        let (c, s) = (0.6, 0.8);
        let mut a = [[0.0; MAX_DIM]; MAX_DIM];
        // D = diag(1, 4, 10) rotated in the (0,1) plane.
        a[0][0] = c * c * 1.0 + s * s * 4.0;
        a[0][1] = c * s * (4.0 - 1.0);
        a[1][0] = a[0][1];
        a[1][1] = s * s * 1.0 + c * c * 4.0;
        a[2][2] = 10.0;
        assert!((min_eigenvalue(&a, 3) - 1.0).abs() < 1e-12);
    }
}
