use nalgebra::{DMatrix, DVector, Point2, Vector2};
use proptest::prelude::*;

use plate_dpg::dpg::{hct_pairing_edge, hct_pairing_volume, hct_triple_norm, ElementRules, ProblemConfig, TraceDofs};
use plate_dpg::hct::HctElement;
use plate_dpg::linalg::{dense_cholesky, solve_spd, SolverMethod, SparseSymMatrix};
use plate_dpg::manufactured::ExactSolution;
use plate_dpg::mesh::TriangleGeometry;

fn triangle() -> impl Strategy<Value = TriangleGeometry> {
    prop::array::uniform6(0.0f64..1.0)
        .prop_map(|c| {
            let tri = TriangleGeometry::new(Point2::new(c[0], c[1]), Point2::new(c[2], c[3]), Point2::new(c[4], c[5]));
            if tri.signed_area() < 0.0 {
                TriangleGeometry::new(tri.vertices[0], tri.vertices[2], tri.vertices[1])
            } else {
                tri
            }
        })
        .prop_filter("shape regular", |tri| tri.area() > 0.02 && tri.area() / tri.diameter().powi(2) > 0.1)
}

fn trace() -> impl Strategy<Value = TraceDofs> {
    prop::array::uniform4(prop::array::uniform9(-1.0f64..1.0))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn pairing_is_skew_and_edge_matches_volume(tri in triangle(), a in trace(), b in trace(), t in 0.0f64..1.0) {
        let hct = HctElement::new(tri).unwrap();
        let rules = ElementRules::new(&ProblemConfig::new(t)).unwrap();
        let ab = hct_pairing_edge(&hct, &a, &b, t, &rules.edge).unwrap();
        let ba = hct_pairing_edge(&hct, &b, &a, t, &rules.edge).unwrap();
        let vol = hct_pairing_volume(&hct, &a, &b, t, &rules.volume);
        let scale = hct_triple_norm(&hct, &a, t, &rules.volume) * hct_triple_norm(&hct, &b, t, &rules.volume);
        prop_assert!((ab + ba).abs() <= 1e-10 * scale);
        prop_assert!((ab - vol).abs() <= 1e-10 * scale);
    }

    #[test]
    fn hct_reproduces_quadratics(tri in triangle(), c in prop::array::uniform6(-1.0f64..1.0), s in 0.0f64..1.0, r in 0.0f64..1.0) {
        let el = HctElement::new(tri).unwrap();
        let q = |p: &Point2<f64>| (
            c[0] + c[1] * p.x + c[2] * p.y + c[3] * p.x * p.x + c[4] * p.x * p.y + c[5] * p.y * p.y,
            Vector2::new(c[1] + 2.0 * c[3] * p.x + c[4] * p.y, c[2] + c[4] * p.x + 2.0 * c[5] * p.y),
        );
        let dofs = el.interpolation_dofs(q);
        let v = el.geometry.vertices;
        let (a, b) = (s, r * (1.0 - s));
        let p = Point2::from(v[0].coords * (1.0 - a - b) + v[1].coords * a + v[2].coords * b);
        let jet = el.eval(&dofs, &p).unwrap();
        prop_assert!((jet.value - q(&p).0).abs() <= 1e-10);
        prop_assert!((jet.grad - q(&p).1).amax() <= 1e-9);
    }

    #[test]
    fn sparse_and_dense_spd_solves_agree(entries in prop::collection::vec(-1.0f64..1.0, 36), rhs in prop::collection::vec(-1.0f64..1.0, 6)) {
        let m = DMatrix::from_vec(6, 6, entries);
        let a = &m * m.transpose() + DMatrix::identity(6, 6);
        let sparse = SparseSymMatrix::from_dense(&a);
        let expected = dense_cholesky(&a).unwrap().solve(&DVector::from_vec(rhs.clone()));
        for method in [SolverMethod::Direct, SolverMethod::Cg] {
            let x = solve_spd(&sparse, &rhs, method, 1e-14).unwrap();
            prop_assert!((DVector::from_vec(x) - &expected).amax() <= 1e-9 * expected.amax().max(1.0));
        }
    }

    #[test]
    fn exact_solution_vanishes_on_boundary(s in 0.0f64..1.0, t in 0.0f64..1e-1) {
        let exact = ExactSolution::new(t);
        for p in [Point2::new(s, 0.0), Point2::new(s, 1.0), Point2::new(0.0, s), Point2::new(1.0, s)] {
            prop_assert!(exact.u(&p).abs() <= 1e-14);
        }
    }
}
