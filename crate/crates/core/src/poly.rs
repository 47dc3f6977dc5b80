//! Dense complex polynomials (ascending coefficients): arithmetic, roots and
//! root clustering.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::ring::C64;

const ZERO: C64 = C64::new(0.0, 0.0);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolyError {
    #[error("polynomial is identically zero")]
    Zero,
    #[error("eigenvalue solver failed for degree {0}")]
    NoConvergence(usize),
    #[error("ambiguous root cluster near {center}: cluster size {cluster} but vanishing order {order}")]
    Ambiguous { center: C64, cluster: usize, order: usize },
}

pub fn eval(p: &[C64], z: C64) -> C64 {
    p.iter().rev().fold(ZERO, |acc, c| acc * z + c)
}

pub fn derive(p: &[C64]) -> Vec<C64> {
    if p.len() <= 1 {
        return vec![ZERO];
    }
    p.iter().enumerate().skip(1).map(|(k, c)| c * k as f64).collect()
}

pub fn add(a: &[C64], b: &[C64]) -> Vec<C64> {
    let n = a.len().max(b.len());
    (0..n)
        .map(|k| a.get(k).copied().unwrap_or(ZERO) + b.get(k).copied().unwrap_or(ZERO))
        .collect()
}

pub fn sub(a: &[C64], b: &[C64]) -> Vec<C64> {
    let nb: Vec<C64> = b.iter().map(|c| -c).collect();
    add(a, &nb)
}

pub fn mul(a: &[C64], b: &[C64]) -> Vec<C64> {
    if a.is_empty() || b.is_empty() {
        return vec![];
    }
    let mut out = vec![ZERO; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

/// Exact composition `outer(inner(z))`.
pub fn compose(outer: &[C64], inner: &[C64]) -> Vec<C64> {
    let Some((last, rest)) = outer.split_last() else {
        return vec![ZERO];
    };
    let mut acc = vec![*last];
    for c in rest.iter().rev() {
        acc = mul(&acc, inner);
        acc[0] += c;
    }
    acc
}

/// Coefficients of `p(z0 + w)` in powers of `w`.
pub fn taylor_shift(p: &[C64], z0: C64) -> Vec<C64> {
    let mut b = p.to_vec();
    let n = b.len();
    for i in 0..n {
        for k in (i..n - 1).rev() {
            let t = b[k + 1] * z0;
            b[k] += t;
        }
    }
    b
}

/// Drops trailing coefficients below `rel_tol · max|c|`.
pub fn trim(p: &[C64], rel_tol: f64) -> Vec<C64> {
    let scale = p.iter().map(|c| c.norm()).fold(0.0, f64::max);
    let mut v = p.to_vec();
    while v.len() > 1 && v.last().map(|c| c.norm() <= rel_tol * scale).unwrap_or(false) {
        v.pop();
    }
    v
}

/// All roots with multiplicity, via companion-matrix eigenvalues followed by
/// Newton polishing on the original coefficients.
pub fn roots(p: &[C64]) -> Result<Vec<C64>, PolyError> {
    let p = trim(p, 1e-14);
    let n = p.len() - 1;
    if n == 0 {
        return if p[0] == ZERO { Err(PolyError::Zero) } else { Ok(vec![]) };
    }
    // exact zero roots are split off; the companion Schur iteration stalls on nilpotent matrices
    let zeros = p.iter().take_while(|c| **c == ZERO).count();
    if zeros > 0 {
        let mut out = vec![ZERO; zeros];
        if zeros < n {
            out.extend(roots(&p[zeros..])?);
        }
        return Ok(out);
    }
    // when every root is small, solve for p(ρw) with O(1) roots: the Schur
    // deflation test is absolute and otherwise deflates too early
    let lead = p[n];
    let rho = (0..n).map(|k| (p[k] / lead).norm().powf(1.0 / (n - k) as f64)).fold(0.0, f64::max).min(1.0);
    let scaled: Vec<C64> = (0..=n).map(|k| p[k] / lead * rho.powi(k as i32 - n as i32)).collect();
    let w = match companion_eigenvalues(&scaled, ZERO) {
        Some(e) => e,
        None => {
            let shift = C64::new(0.1, 0.05);
            companion_eigenvalues(&taylor_shift(&scaled, shift), shift).ok_or(PolyError::NoConvergence(n))?
        }
    };
    let eig: Vec<C64> = w.iter().map(|z| z * rho).collect();
    let dp = derive(&p);
    Ok(eig
        .iter()
        .map(|&z0| {
            let mut z = z0;
            for _ in 0..3 {
                let f = eval(&p, z);
                let d = eval(&dp, z);
                if d.norm() == 0.0 {
                    break;
                }
                let step = f / d;
                let cand = z - step;
                if eval(&p, cand).norm() < f.norm() {
                    z = cand;
                } else {
                    break;
                }
            }
            z
        })
        .collect())
}

fn companion_eigenvalues(p: &[C64], shift: C64) -> Option<Vec<C64>> {
    let n = p.len() - 1;
    let lead = p[n];
    let mut m = DMatrix::<C64>::zeros(n, n);
    for i in 1..n {
        m[(i, i - 1)] = C64::new(1.0, 0.0);
    }
    for i in 0..n {
        m[(i, n - 1)] = -p[i] / lead;
    }
    let eig = m.try_schur(1e-15, 10_000)?.eigenvalues()?;
    Some(eig.iter().map(|z| z + shift).collect())
}

/// Groups roots lying within `radius` of each other (single linkage) and returns
/// centroids with cluster sizes, ordered by modulus then argument.
pub fn cluster(roots: &[C64], radius: f64) -> Vec<(C64, usize)> {
    let n = roots.len();
    let mut label: Vec<usize> = (0..n).collect();
    fn find(l: &mut [usize], i: usize) -> usize {
        let mut r = i;
        while l[r] != r {
            r = l[r];
        }
        l[i] = r;
        r
    }
    for i in 0..n {
        for j in i + 1..n {
            if (roots[i] - roots[j]).norm() <= radius {
                let (a, b) = (find(&mut label, i), find(&mut label, j));
                if a != b {
                    label[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut groups: std::collections::BTreeMap<usize, Vec<C64>> = Default::default();
    for i in 0..n {
        let r = find(&mut label, i);
        groups.entry(r).or_default().push(roots[i]);
    }
    let mut out: Vec<(C64, usize)> = groups
        .into_values()
        .map(|g| (g.iter().sum::<C64>() / g.len() as f64, g.len()))
        .collect();
    out.sort_by(|a, b| {
        a.0.norm()
            .partial_cmp(&b.0.norm())
            .unwrap()
            .then(a.0.arg().partial_cmp(&b.0.arg()).unwrap())
    });
    out
}

/// Order of vanishing of `p` at `z0`: index of the first Taylor coefficient above
/// `rel_tol` times the largest coefficient seen so far in the expansion scale.
pub fn vanishing_order(p: &[C64], z0: C64, rel_tol: f64) -> usize {
    let b = taylor_shift(p, z0);
    let scale = b.iter().map(|c| c.norm()).fold(0.0, f64::max);
    b.iter().position(|c| c.norm() > rel_tol * scale).unwrap_or(b.len())
}

/// Sharpens the centroid of a k-root cluster by Newton on `p^{(k−1)}`, where a
/// k-fold root is simple.
pub fn refine_cluster(p: &[C64], z: C64, k: usize) -> C64 {
    if k < 2 {
        return z;
    }
    let mut d = p.to_vec();
    for _ in 0..k - 1 {
        d = derive(&d);
    }
    let dd = derive(&d);
    let mut z = z;
    for _ in 0..20 {
        let (f, g) = (eval(&d, z), eval(&dd, z));
        if g.norm() == 0.0 {
            break;
        }
        let step = f / g;
        z -= step;
        if step.norm() <= 1e-15 * (1.0 + z.norm()) {
            break;
        }
    }
    z
}

/// Distinct roots with multiplicities. Cluster sizes are cross-checked against
/// the vanishing order at the centroid; a mismatch is reported, not rounded.
pub fn roots_with_multiplicity(p: &[C64], cluster_radius: f64, rel_tol: f64) -> Result<Vec<(C64, usize)>, PolyError> {
    let r = roots(p)?;
    let groups = cluster(&r, cluster_radius);
    let p = trim(p, 1e-14);
    let mut out = Vec::with_capacity(groups.len());
    for (c, k) in groups {
        let c = refine_cluster(&p, c, k);
        let order = vanishing_order(&p, c, rel_tol);
        if order != k {
            return Err(PolyError::Ambiguous { center: c, cluster: k, order });
        }
        out.push((c, k));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn r(x: f64) -> C64 {
        C64::new(x, 0.0)
    }

    #[test]
    fn shifted_and_degenerate_roots() {
        // p(z) = z^3 - 2z + 1 shifted by a: compare values pointwise
        let p = [r(1.0), r(-2.0), r(0.0), r(1.0)];
        let a = C64::new(0.3, -0.2);
        let q = taylor_shift(&p, a);
        for z in [r(0.0), C64::new(0.4, 0.7), r(-1.5)] {
            assert!((eval(&q, z) - eval(&p, z + a)).norm() < 1e-14);
        }
        let z = roots(&[r(0.0), r(0.0), r(0.0), r(0.5)]).unwrap();
        assert_eq!(z, vec![ZERO; 3]);
        let mut z = roots(&[r(0.0), r(-1.0), r(0.0), r(1.0)]).unwrap();
        z.sort_by(|a, b| a.re.partial_cmp(&b.re).unwrap());
        assert!((z[0] + 1.0).norm() < 1e-12 && z[1].norm() == 0.0 && (z[2] - 1.0).norm() < 1e-12);
    }

    #[test]
    fn cubic_roots() {
        // (z - 1)(z + 2)(z - i)
        let p = mul(&mul(&[r(-1.0), r(1.0)], &[r(2.0), r(1.0)]), &[-C64::i(), r(1.0)]);
        let mut z = roots(&p).unwrap();
        z.sort_by(|a, b| a.re.partial_cmp(&b.re).unwrap());
        assert!((z[0] - r(-2.0)).norm() < 1e-12);
        assert!((z[1] - C64::i()).norm() < 1e-12);
        assert!((z[2] - r(1.0)).norm() < 1e-12);
    }

    #[test]
    fn multiple_root_is_clustered() {
        // z^3 (z - 0.5)
        let p = [r(0.0), r(0.0), r(0.0), r(-0.5), r(1.0)];
        let m = roots_with_multiplicity(&p, 1e-3, 1e-8).unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m[0].1, 3);
        assert!(m[0].0.norm() < 1e-4);
        assert_eq!(m[1].1, 1);
    }

    #[test]
    fn compose_and_shift() {
        let outer = [r(1.0), r(0.0), r(1.0)];
        let inner = [r(2.0), r(3.0)];
        assert_eq!(compose(&outer, &inner), vec![r(5.0), r(12.0), r(9.0)]);
        let s = taylor_shift(&outer, r(2.0));
        assert_eq!(s, vec![r(5.0), r(4.0), r(1.0)]);
    }
}
