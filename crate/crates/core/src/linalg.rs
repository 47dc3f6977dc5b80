//! 2×2 complex matrices and small dense solves.

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};

use crate::ring::C64;

pub type Mat2 = Matrix2<C64>;
pub type Vec2 = Vector2<C64>;

pub fn mat2(a: C64, b: C64, c: C64, d: C64) -> Mat2 {
    Mat2::new(a, b, c, d)
}

/// Eigenvalues ordered by decreasing modulus, with unit eigenvectors.
pub fn eig2(m: &Mat2) -> ([C64; 2], [Vec2; 2]) {
    let tr = m[(0, 0)] + m[(1, 1)];
    let det = m.determinant();
    let disc = (tr * tr - det * 4.0).sqrt();
    // numerically stable pair: the larger root from the aligned sign, the other by Vieta
    let q = if (tr + disc).norm() >= (tr - disc).norm() { (tr + disc) / 2.0 } else { (tr - disc) / 2.0 };
    let other = if q.norm() > 0.0 { det / q } else { tr - q };
    let (l1, l2) = if q.norm() >= other.norm() { (q, other) } else { (other, q) };
    let v1 = eigvec(m, l1);
    let v2 = eigvec(m, l2);
    ([l1, l2], [v1, v2])
}

fn eigvec(m: &Mat2, l: C64) -> Vec2 {
    let a = m[(0, 0)] - l;
    let b = m[(0, 1)];
    let c = m[(1, 0)];
    let d = m[(1, 1)] - l;
    // rows (a, b) and (c, d) are both orthogonal-ish to the kernel; use the larger one
    let v = if a.norm() + b.norm() >= c.norm() + d.norm() {
        if a.norm() + b.norm() == 0.0 {
            Vec2::new(C64::new(1.0, 0.0), C64::new(0.0, 0.0))
        } else {
            Vec2::new(b, -a)
        }
    } else {
        Vec2::new(d, -c)
    };
    normalize(v)
}

pub fn normalize(v: Vec2) -> Vec2 {
    let n = (v[0].norm_sqr() + v[1].norm_sqr()).sqrt();
    let mut v = v / C64::new(n, 0.0);
    // fix the phase so the largest component is real positive
    let k = if v[0].norm() >= v[1].norm() { 0 } else { 1 };
    let ph = v[k] / C64::new(v[k].norm(), 0.0);
    v /= ph;
    v
}

pub fn norm2(v: &Vec2) -> f64 {
    (v[0].norm_sqr() + v[1].norm_sqr()).sqrt()
}

/// Solves `a x = b` by LU; `None` when the matrix is numerically singular.
pub fn solve(a: &DMatrix<C64>, b: &DVector<C64>) -> Option<DVector<C64>> {
    let scale = a.iter().map(|z| z.norm()).fold(0.0, f64::max);
    if scale == 0.0 {
        return None;
    }
    let lu = a.clone().lu();
    let u = lu.u();
    let min_piv = (0..u.nrows()).map(|i| u[(i, i)].norm()).fold(f64::INFINITY, f64::min);
    if min_piv <= 1e-14 * scale {
        return None;
    }
    lu.solve(b)
}

pub fn solve2(a: &Mat2, b: &Vec2) -> Option<Vec2> {
    let det = a.determinant();
    let scale = a.iter().map(|z| z.norm()).fold(0.0, f64::max);
    if det.norm() <= 1e-14 * scale * scale || scale == 0.0 {
        return None;
    }
    let x0 = (b[0] * a[(1, 1)] - a[(0, 1)] * b[1]) / det;
    let x1 = (a[(0, 0)] * b[1] - a[(1, 0)] * b[0]) / det;
    Some(Vec2::new(x0, x1))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn r(x: f64) -> C64 {
        C64::new(x, 0.0)
    }

    #[test]
    fn henon_jacobian_eigen() {
        let m = mat2(r(1.0), r(0.5), r(1.0), r(0.0));
        let ([u, s], [eu, es]) = eig2(&m);
        let root3 = 3f64.sqrt();
        assert!((u - r((1.0 + root3) / 2.0)).norm() < 1e-14);
        assert!((s - r((1.0 - root3) / 2.0)).norm() < 1e-14);
        assert!(norm2(&(m * eu - eu * u)) < 1e-14);
        assert!(norm2(&(m * es - es * s)) < 1e-14);
    }

    #[test]
    fn diagonal_eigen() {
        let m = mat2(r(0.5), r(0.0), r(0.0), r(2.0));
        let ([u, s], [eu, es]) = eig2(&m);
        assert_eq!(u, r(2.0));
        assert_eq!(s, r(0.5));
        assert!((eu[1] - r(1.0)).norm() < 1e-15);
        assert!((es[0] - r(1.0)).norm() < 1e-15);
    }
}
