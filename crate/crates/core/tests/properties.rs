use proptest::prelude::*;

use tangency_core::bidisk::*;
use tangency_core::germ::*;
use tangency_core::henon::*;
use tangency_core::poly;
use tangency_core::saddle::*;
use tangency_core::series::*;
use tangency_core::{PlaneMap, Ring, C64};

fn cplx(r: f64) -> impl Strategy<Value = C64> {
    (-r..r, -r..r).prop_map(|(a, b)| C64::new(a, b))
}

fn series1(deg: usize, r: f64) -> impl Strategy<Value = TruncatedSeries1> {
    prop::collection::vec(cplx(r), deg + 1).prop_map(TruncatedSeries1::polynomial)
}

fn series2(deg: usize, r: f64) -> impl Strategy<Value = TruncatedSeries2> {
    prop::collection::vec((0..=deg, 0..=deg, cplx(r)), 1..8).prop_map(move |t| {
        let terms: Vec<_> = t.into_iter().filter(|(i, j, _)| i + j <= deg).collect();
        TruncatedSeries2::from_terms(deg, &terms)
    })
}

fn close1(a: &TruncatedSeries1, b: &TruncatedSeries1, tol: f64) -> bool {
    a.degree() == b.degree() && a.coeffs().iter().zip(b.coeffs()).all(|(x, y)| (x - y).norm() <= tol)
}

fn close2(a: &TruncatedSeries2, b: &TruncatedSeries2, tol: f64) -> bool {
    let d = a.degree();
    d == b.degree() && (0..=d).all(|i| (0..=d - i).all(|j| (a.coeff(i, j) - b.coeff(i, j)).norm() <= tol))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn series1_ring_axioms(a in series1(6, 1.0), b in series1(6, 1.0), c in series1(6, 1.0)) {
        prop_assert!(close1(&(a.clone() * b.clone()), &(b.clone() * a.clone()), 1e-14));
        prop_assert!(close1(&((a.clone() * b.clone()) * c.clone()), &(a.clone() * (b.clone() * c.clone())), 1e-12));
        prop_assert!(close1(&(a.clone() * (b.clone() + c.clone())), &(a.clone() * b.clone() + a.clone() * c.clone()), 1e-12));
        prop_assert!(close1(&(a.clone() - a.clone()), &a.zero_like(), 0.0));
        prop_assert!(close1(&(a.clone() * a.constant_like(C64::new(1.0, 0.0))), &a, 0.0));
    }

    #[test]
    fn series2_ring_axioms(a in series2(5, 1.0), b in series2(5, 1.0), c in series2(5, 1.0)) {
        prop_assert!(close2(&(a.clone() * b.clone()), &(b.clone() * a.clone()), 1e-14));
        prop_assert!(close2(&((a.clone() * b.clone()) * c.clone()), &(a.clone() * (b.clone() * c.clone())), 1e-12));
        prop_assert!(close2(&(a.clone() * (b.clone() + c.clone())), &(a.clone() * b.clone() + a.clone() * c.clone()), 1e-12));
    }

    #[test]
    fn product_matches_pointwise_on_exact_part(a in series1(3, 1.0), b in series1(3, 1.0), t in cplx(0.5)) {
        // degree 3 inputs extended to 6 so the product is exact
        let p = a.extend(6) * b.extend(6);
        prop_assert!((p.eval(t) - a.eval(t) * b.eval(t)).norm() <= 1e-12);
    }

    #[test]
    fn reversion_round_trip(lead in cplx(2.0).prop_filter("invertible", |c| c.norm() > 0.2), rest in prop::collection::vec(cplx(1.0), 6)) {
        let mut coeffs = vec![C64::new(0.0, 0.0), lead];
        coeffs.extend(rest);
        let f = TruncatedSeries1::polynomial(coeffs).with_radius(0.05);
        let g = f.reversion().unwrap();
        let id = f.compose(&g).unwrap();
        prop_assert!(close1(&id, &TruncatedSeries1::variable(id.degree()), 1e-9 * (1.0 + g.magnitude())));
        let id = g.compose(&f).unwrap();
        prop_assert!(close1(&id, &TruncatedSeries1::variable(id.degree()), 1e-9 * (1.0 + g.magnitude())));
    }

    #[test]
    fn series_json_round_trip(a in series1(5, 3.0), b in series2(4, 3.0)) {
        let one = AnySeries::One(a);
        prop_assert_eq!(AnySeries::from_json_str(&one.to_json_string()).unwrap(), one);
        let two = AnySeries::Two(b);
        prop_assert_eq!(AnySeries::from_json_str(&two.to_json_string()).unwrap(), two);
    }

    #[test]
    fn henon_jacobian_is_constant(
        a1 in cplx(1.0).prop_filter("a ≠ 0", |a| a.norm() > 0.05),
        a2 in cplx(1.0).prop_filter("a ≠ 0", |a| a.norm() > 0.05),
        p in prop::collection::vec(cplx(1.0), 4),
        z in cplx(2.0), w in cplx(2.0),
    ) {
        let f = PolynomialAutomorphism::new(vec![
            HenonFactor::new(vec![p[0], p[1], C64::new(1.0, 0.0)], a1).unwrap(),
            HenonFactor::new(vec![p[2], p[3], C64::new(0.0, 0.0), C64::new(1.0, 0.0)], a2).unwrap(),
        ]).unwrap();
        let det = f.derivative([z, w]).determinant();
        prop_assert!((det - f.jacobian()).norm() <= 1e-9 * (1.0 + det.norm()));
        let (q, d2) = f.iterate_with_derivative([z * 0.1, w * 0.1], 2);
        let jac2 = f.jacobian() * f.jacobian();
        prop_assert!((d2.determinant() - jac2).norm() <= 1e-8 * (1.0 + d2.norm()), "{:?}", q);
        let back = f.inverse(f.apply([z, w])).unwrap();
        prop_assert!((back[0] - z).norm() + (back[1] - w).norm() <= 1e-8 * (1.0 + z.norm() + w.norm()).powi(4));
    }

    #[test]
    fn fixed_saddle_multipliers_multiply_to_jacobian(a in 0.05f64..0.9, c in -2.0f64..-0.1) {
        // fixed points of f_{a,c}: z² + (a − 1)z + c = 0
        let f = PolynomialAutomorphism::quadratic_real(a, c);
        let disc = ((a - 1.0).powi(2) - 4.0 * c).sqrt();
        for z in [(1.0 - a + disc) / 2.0, (1.0 - a - disc) / 2.0] {
            let p = find_periodic(&f, 1, [C64::new(z, 0.0), C64::new(z, 0.0)], 1e-12).unwrap();
            let prod = p.multipliers[0] * p.multipliers[1];
            prop_assert!((prod - f.jacobian()).norm() <= 1e-10);
            // closed form μ² − 2zμ − a = 0
            for mu in p.multipliers {
                prop_assert!((mu * mu - mu * (2.0 * z) - a).norm() <= 1e-9);
            }
        }
    }

    #[test]
    fn root_multiplicities_sum_to_degree(
        centers in prop::collection::vec(cplx(1.0), 1..4),
        mults in prop::collection::vec(1usize..4, 3),
    ) {
        // well-separated centers only, so clusters are unambiguous
        let mut kept: Vec<C64> = Vec::new();
        for c in centers {
            if kept.iter().all(|k| (k - c).norm() > 0.3) {
                kept.push(c);
            }
        }
        let mut p = vec![C64::new(1.0, 0.0)];
        let mut deg = 0;
        for (c, &m) in kept.iter().zip(&mults) {
            for _ in 0..m {
                p = poly::mul(&p, &[-c, C64::new(1.0, 0.0)]);
                deg += 1;
            }
        }
        let r = poly::roots_with_multiplicity(&p, 1e-3, 1e-6).unwrap();
        prop_assert_eq!(r.iter().map(|x| x.1).sum::<usize>(), deg);
        prop_assert_eq!(r.len(), kept.len());
    }

    #[test]
    fn multiplicity_at_least_order_and_algorithms_agree(
        h in 1usize..4,
        k in 1usize..4,
        mixed in prop_oneof![Just(0.0), 1.0f64..1.5, -1.5f64..-1.0],
        extra in -1.0f64..1.0,
    ) {
        // φ = t^{h+1} + λ^k + mixed·λt + extra·λ^k t; |mixed| stays away from 2, where
        // t² + mixed·λt + λ² degenerates and extra tangencies enter the counting window
        let germ = UnfoldingGerm::from_terms(h + k + 3, &[(0, h + 1, 1.0), (k, 0, 1.0), (1, 1, mixed), (k, 1, extra)]).unwrap();
        let r = classify_unfolding(&germ, &ClassifyOptions::default()).unwrap();
        prop_assert_eq!(r.h, h);
        prop_assert!(r.m >= r.h);
        prop_assert_eq!(r.diagnostics.m_resultant, r.diagnostics.m_counting);
    }

    #[test]
    fn transversality_matches_simple_intersection(
        z0 in cplx(0.3),
        p1 in prop::collection::vec(cplx(0.15), 3),
        kick in cplx(0.2).prop_filter("visible", |k| k.norm() > 0.05),
    ) {
        // V: z ↦ (p1(z), 0.4 z); W: x = x0 + γ1 (y − y0) through V(z0)
        let mut c1 = vec![C64::new(0.0, 0.0)];
        c1.extend(p1);
        let v = HorizontalManifold::new(TruncatedSeries1::polynomial(c1), TruncatedSeries1::from_real(&[0.0, 0.4]), 1.0).unwrap();
        let [x0, y0] = v.point(z0);
        let dp1 = poly::eval(&poly::derive(v.p1.coeffs()), z0);
        let dp2 = C64::new(0.4, 0.0);
        prop_assume!(dp1.norm() > 0.02);
        for (g1, tangent) in [(dp1 / dp2, true), (dp1 / dp2 + kick, false)] {
            let g = TruncatedSeries1::polynomial(vec![x0 - g1 * y0, g1]);
            prop_assume!(g.sup_bound() < 0.9);
            let w = GraphInBidisk::vertical(g, 1).unwrap();
            let det = dp1 - g1 * dp2;
            let pts = intersect_graphs(&v, &w).unwrap();
            let here = pts.iter().find(|p| (p.z - z0).norm() < 1e-4).unwrap();
            prop_assert_eq!(here.multiplicity > 1, tangent, "det {}", det.norm());
            prop_assert_eq!(det.norm() < 1e-10, tangent);
        }
    }

    #[test]
    fn riemann_hurwitz_holds(seed in any::<u64>()) {
        let r = rh_check(20, 5, seed);
        prop_assert_eq!(r.satisfied, r.trials);
        prop_assert!(r.failures.is_empty());
    }

    #[test]
    fn reported_resonances_are_resonant(u in cplx(4.0).prop_filter("expanding", |u| u.norm() > 1.1), a in 1usize..5, b in 1usize..5) {
        let s = (-u.ln() * (a as f64 / b as f64)).exp();
        let found = detect_resonance(u, s, 12, 1e-9);
        prop_assert!(found.contains(&(a, b)) || a + b > 12);
        for (p, q) in found {
            prop_assert!((u.powu(p as u32) * s.powu(q as u32) - 1.0).norm() <= 1e-9);
        }
    }
}
