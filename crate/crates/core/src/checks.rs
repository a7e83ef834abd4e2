//! Structural property suite: Gram positivity, trace pairing identities,
//! HCT element checks and solver oracles. Used by `plate-dpg verify` and the
//! acceptance tests.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector, Point2, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::broken_poly::{BrokenTestBasis, ScalarJet};
use crate::dpg::{
    edge_pairing_density, element_b_trace, gram_matrix, hct_pairing_edge, hct_pairing_volume, hct_triple_norm,
    ElementRules, ElementSystem, ProblemConfig, TraceDofs, TripleJet, TRACE_COLUMNS,
};
use crate::driver::{build_dof_map, DofMap, GlobalSystem, SolveOptions, FIELD_M11, FIELD_U};
use crate::hct::{hct_edge_trace, HctElement, HctScalarField, HctSpace, HCT_DOFS};
use crate::linalg::{dense_cholesky, SolverMethod};
use crate::manufactured::{verify_manufactured, ExactSolution, ManufacturedReport};
use crate::mesh::{Mesh, TriangleGeometry};
use crate::Result;

pub const ORACLE_MIN_AREA: f64 = 0.1;

pub const GRAM_THICKNESSES: [f64; 4] = [0.0, 1e-8, 1e-4, 1.0];

/// Random triangle in the unit square with all angles above 15°.
pub fn random_triangle(rng: &mut ChaCha8Rng) -> TriangleGeometry {
    random_triangle_with_area(rng, 1e-3)
}

/// As [`random_triangle`], with area at least `min_area`.
pub fn random_triangle_with_area(rng: &mut ChaCha8Rng, min_area: f64) -> TriangleGeometry {
    loop {
        let p: [Point2<f64>; 3] = std::array::from_fn(|_| Point2::new(rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)));
        let mut tri = TriangleGeometry::new(p[0], p[1], p[2]);
        if tri.signed_area() < 0.0 {
            tri = TriangleGeometry::new(p[0], p[2], p[1]);
        }
        let min_angle = (0..3)
            .map(|k| {
                let a = tri.vertices[(k + 1) % 3] - tri.vertices[k];
                let b = tri.vertices[(k + 2) % 3] - tri.vertices[k];
                (a.dot(&b) / (a.norm() * b.norm())).clamp(-1.0, 1.0).acos()
            })
            .fold(f64::INFINITY, f64::min);
        if min_angle > 15f64.to_radians() && tri.area() > min_area {
            return tri;
        }
    }
}

fn random_trace(rng: &mut ChaCha8Rng) -> TraceDofs {
    std::array::from_fn(|_| std::array::from_fn(|_| rng.random_range(-1.0..1.0)))
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GramCheck {
    pub tested: usize,
    pub failures: usize,
    pub max_asymmetry: f64,
}

/// Cholesky of the Gram matrix on random elements for every thickness.
pub fn gram_check(n_elements: usize, thicknesses: &[f64], seed: u64) -> Result<GramCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let basis = BrokenTestBasis::new(3)?;
    let rules = ElementRules::new(&ProblemConfig::new(0.0))?;
    let mut out = GramCheck::default();
    for _ in 0..n_elements {
        let tri = random_triangle(&mut rng);
        for &t in thicknesses {
            let g = gram_matrix(&tri, t, &basis, &rules.volume)?;
            out.tested += 1;
            out.max_asymmetry = out.max_asymmetry.max((&g - g.transpose()).norm() / g.norm());
            if dense_cholesky(&g).is_err() {
                out.failures += 1;
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PairingCheck {
    /// `|⟨tr a, b⟩ + ⟨tr b, a⟩| / (‖a‖ ‖b‖)`.
    pub skew: f64,
    /// Edge against volume evaluation, relative to `‖a‖ ‖b‖`.
    pub edge_vs_volume: f64,
    /// `|⟨q̂, v⟩| / (‖q̂‖ ‖v‖)` for discrete test functions `v`.
    pub bound_ratio: f64,
}

/// Skew-symmetry, edge/volume agreement and boundedness of the trace pairing
/// on random elements.
pub fn pairing_check(n_elements: usize, seed: u64) -> Result<PairingCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let basis = BrokenTestBasis::new(3)?;
    let rules = ElementRules::new(&ProblemConfig::new(0.0))?;
    let mut out = PairingCheck::default();
    for i in 0..n_elements {
        let hct = HctElement::new(random_triangle(&mut rng))?;
        let t = GRAM_THICKNESSES[i % GRAM_THICKNESSES.len()];
        let a = random_trace(&mut rng);
        let b = random_trace(&mut rng);
        let ab = hct_pairing_edge(&hct, &a, &b, t, &rules.edge)?;
        let ba = hct_pairing_edge(&hct, &b, &a, t, &rules.edge)?;
        let vol = hct_pairing_volume(&hct, &a, &b, t, &rules.volume);
        let na = hct_triple_norm(&hct, &a, t, &rules.volume);
        let scale = na * hct_triple_norm(&hct, &b, t, &rules.volume);
        out.skew = out.skew.max((ab + ba).abs() / scale);
        out.edge_vs_volume = out.edge_vs_volume.max((ab - vol).abs() / scale);

        let config = ProblemConfig::new(t);
        let bt = element_b_trace(&hct, &config, &basis, &rules.edge)?;
        let g = gram_matrix(&hct.geometry, t, &basis, &rules.volume)?;
        let x = DVector::from_iterator(TRACE_COLUMNS, a.iter().flatten().copied());
        let v = DVector::from_fn(g.nrows(), |_, _| rng.random_range(-1.0..1.0));
        let pairing = -v.dot(&(&bt * &x));
        let vnorm = v.dot(&(&g * &v)).sqrt();
        out.bound_ratio = out.bound_ratio.max(pairing.abs() / (na * vnorm));
    }
    Ok(out)
}

fn random_constrained_field(rng: &mut ChaCha8Rng, dofs: &DofMap, field: usize, nv: usize) -> Vec<f64> {
    (0..3 * nv)
        .map(|i| if dofs.constrained[dofs.trace_dof(i / 3, field, i % 3)] { 0.0 } else { rng.random_range(-1.0..1.0) })
        .collect()
}

/// Sum over all elements of `⟨tr a, b⟩_{∂T,t}` for a random trace `a` and a
/// random conforming test triple `b`, both satisfying the simply-supported
/// constraints, relative to `Σ_T ‖a‖_{V(T)} ‖b‖_{V(T)}`. Returns the largest
/// value over `n_pairs` pairs.
pub fn jump_orthogonality_check(level: usize, n_pairs: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mesh = Mesh::unit_square(level);
    let space = HctSpace::new(&mesh)?;
    let rules = ElementRules::new(&ProblemConfig::new(0.0))?;
    let dofs = build_dof_map(&mesh, &ProblemConfig::new(0.1))?;
    let nv = mesh.num_vertices();
    let mut worst = 0.0f64;
    for pair in 0..n_pairs {
        let t = GRAM_THICKNESSES[pair % GRAM_THICKNESSES.len()];
        // a = (u, M), b = (z, Θ) with the same boundary pattern; τ of b is unconstrained
        let a: Vec<Vec<f64>> = (0..4).map(|f| random_constrained_field(&mut rng, &dofs, FIELD_U + f, nv)).collect();
        let b: Vec<Vec<f64>> = (0..4).map(|f| random_constrained_field(&mut rng, &dofs, FIELD_U + f, nv)).collect();
        let tau: Vec<Vec<f64>> = (0..2).map(|_| (0..3 * nv).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let (mut sum, mut scale) = (0.0, 0.0);
        for (e, hct) in space.elements.iter().enumerate() {
            let local = |g: &Vec<f64>| -> [f64; HCT_DOFS] { std::array::from_fn(|i| g[space.global_dof(e, i)]) };
            let la: TraceDofs = std::array::from_fn(|f| local(&a[f]));
            let lb: TraceDofs = std::array::from_fn(|f| local(&b[f]));
            let lt: [[f64; HCT_DOFS]; 2] = std::array::from_fn(|k| local(&tau[k]));
            let jet_b = |sub: usize, p: &Point2<f64>| {
                let z = hct.eval_in(sub, &lb[0], p);
                TripleJet {
                    z,
                    theta: std::array::from_fn(|k| hct.eval_in(sub, &lb[FIELD_M11 + k], p)),
                    tau: std::array::from_fn(|k| hct.eval_in(sub, &lt[k], p)),
                }
            };
            let jet_a = |sub: usize, p: &Point2<f64>| {
                TripleJet::trace_triple(hct.eval_in(sub, &la[0], p), std::array::from_fn(|k| hct.eval_in(sub, &la[1 + k], p)))
            };
            let tri = &hct.geometry;
            for k in 0..3 {
                let n = tri.outward_normal(k)?;
                let (pa, pb) = tri.edge_endpoints(k);
                let len = tri.edge_length(k);
                for (s, w) in rules.edge.points.iter().zip(&rules.edge.weights) {
                    let p = Point2::from(pa.coords * (1.0 - s[0]) + pb.coords * s[0]);
                    sum += w * len * edge_pairing_density(&jet_a(k, &p), &jet_b(k, &p), &n, t);
                }
            }
            let (mut na, mut nb) = (0.0, 0.0);
            for (sub, geo) in hct.subtriangles.iter().enumerate() {
                for (p, w) in rules.volume.mapped(geo) {
                    na += w * jet_a(sub, &p).features(t).iter().map(|v| v * v).sum::<f64>();
                    nb += w * jet_b(sub, &p).features(t).iter().map(|v| v * v).sum::<f64>();
                }
            }
            scale += (na * nb).sqrt();
        }
        worst = worst.max(sum.abs() / scale);
    }
    Ok(worst)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct HctCheck {
    /// `max |D - I|` of the dof functionals applied to the basis.
    pub duality: f64,
    /// Largest value or gradient jump across interior edges of a random global field.
    pub c1_jump: f64,
    /// Largest value/gradient error interpolating random quadratics.
    pub quadratic_error: f64,
    /// Smallest value error interpolating a generic cubic (must stay large).
    pub cubic_error: f64,
}

pub fn hct_check(n_elements: usize, seed: u64) -> Result<HctCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = HctCheck { cubic_error: f64::INFINITY, ..Default::default() };
    for _ in 0..n_elements {
        let el = HctElement::new(random_triangle(&mut rng))?;
        let d = el.dof_matrix();
        for (i, row) in d.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                let expected = if i == j { 1.0 } else { 0.0 };
                out.duality = out.duality.max((v - expected).abs());
            }
        }
        let c: [f64; 6] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        let q = |p: &Point2<f64>| {
            let (x, y) = (p.x, p.y);
            (
                c[0] + c[1] * x + c[2] * y + c[3] * x * x + c[4] * x * y + c[5] * y * y,
                Vector2::new(c[1] + 2.0 * c[3] * x + c[4] * y, c[2] + c[4] * x + 2.0 * c[5] * y),
            )
        };
        let cubic = |p: &Point2<f64>| {
            (p.x.powi(3) + p.x * p.y * p.y, Vector2::new(3.0 * p.x * p.x + p.y * p.y, 2.0 * p.x * p.y))
        };
        let qd = el.interpolation_dofs(q);
        let cd = el.interpolation_dofs(cubic);
        let mut cubic_worst = 0.0f64;
        for _ in 0..10 {
            let a: f64 = rng.random_range(0.0..1.0);
            let b: f64 = rng.random_range(0.0..1.0 - a);
            let v = el.geometry.vertices;
            let p = Point2::from(v[0].coords * (1.0 - a - b) + v[1].coords * a + v[2].coords * b);
            let jet: ScalarJet = el.eval(&qd, &p).expect("point inside");
            let (val, grad) = q(&p);
            out.quadratic_error = out.quadratic_error.max((jet.value - val).abs()).max((jet.grad - grad).amax());
            cubic_worst = cubic_worst.max((el.eval(&cd, &p).expect("point inside").value - cubic(&p).0).abs());
        }
        out.cubic_error = out.cubic_error.min(cubic_worst);
    }

    let mesh = Mesh::unit_square(2);
    let space = HctSpace::new(&mesh)?;
    let field = HctScalarField::new(&space, (0..space.num_dofs()).map(|_| rng.random_range(-1.0..1.0)).collect());
    for (e, edge) in mesh.edges.iter().enumerate() {
        let (t1, Some(t2)) = edge.triangles else { continue };
        let a = hct_edge_trace(&field, e, t1)?;
        let b = hct_edge_trace(&field, e, t2)?;
        for s in [0.0, 0.2, 0.5, 0.77, 1.0] {
            out.c1_jump = out.c1_jump.max((a.value_at(s) - b.value_at(s)).abs()).max((a.grad_at(s) - b.grad_at(s)).amax());
        }
    }
    Ok(out)
}

/// Largest relative difference between `Bᵀ G⁻¹ B`, `Bᵀ G⁻¹ l` from the
/// Cholesky path and from an explicit inverse of the diagonally scaled Gram matrix.
///
/// The Gram condition number grows like `h⁻⁴` (about 1e10 at area 5e-3, against 1e7 at area 0.2), and
/// any two evaluations then differ at the level `cond · ε`. Elements are
/// drawn with area at least [`ORACLE_MIN_AREA`] so the comparison measures the
/// algebra and not the conditioning.
pub fn normal_oracle_check(n_elements: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let basis = BrokenTestBasis::new(3)?;
    let mut worst = 0.0f64;
    let ts = [1.0, 0.3, 1e-1, 1e-2];
    for i in 0..n_elements {
        let t = ts[i % ts.len()];
        let config = ProblemConfig::new(t);
        let rules = ElementRules::new(&config)?;
        let hct = HctElement::new(random_triangle_with_area(&mut rng, ORACLE_MIN_AREA))?;
        let sys = ElementSystem::assemble(i, &hct, &config, &basis, &rules, &|p| 1.0 + p.x * p.y)?;
        let fac = sys.factor()?;
        let (a, b) = (fac.normal_matrix(), fac.normal_rhs());
        let n = sys.g.nrows();
        let d = DVector::from_fn(n, |i, _| 1.0 / sys.g[(i, i)].sqrt());
        let scaled = DMatrix::from_fn(n, n, |i, j| d[i] * sys.g[(i, j)] * d[j]);
        let inv = scaled.try_inverse().expect("Gram matrix is invertible");
        let ginv = DMatrix::from_fn(n, n, |i, j| d[i] * inv[(i, j)] * d[j]);
        let a_ref = sys.b.transpose() * &ginv * &sys.b;
        let b_ref = sys.b.transpose() * &ginv * &sys.l;
        worst = worst.max((&a - &a_ref).norm() / a_ref.norm()).max((&b - &b_ref).norm() / b_ref.norm());
    }
    Ok(worst)
}

/// Relative difference of direct and CG solutions of the manufactured problem.
pub fn direct_vs_cg_check(level: usize, t: f64) -> Result<f64> {
    let mesh = Mesh::unit_square(level);
    let config = ProblemConfig::new(t);
    let exact = ExactSolution::new(t);
    let sys = GlobalSystem::build(&mesh, &config, &move |p| exact.load(p))?;
    let d = sys.solve(&SolveOptions { method: Some(SolverMethod::Direct), cg_tol: 0.0 })?;
    let c = sys.solve(&SolveOptions { method: Some(SolverMethod::Cg), cg_tol: 1e-13 })?;
    let diff = d.iter().zip(&c).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    Ok(diff / d.iter().map(|a| a * a).sum::<f64>().sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropertyReport {
    pub gram: GramCheck,
    pub pairing: PairingCheck,
    pub jump: f64,
    pub hct: HctCheck,
    pub normal_oracle: f64,
    pub direct_vs_cg: f64,
}

impl PropertyReport {
    /// `(name, value, limit, passed)` for every check.
    pub fn items(&self) -> Vec<(&'static str, f64, f64, bool)> {
        let le = |name, v: f64, lim: f64| (name, v, lim, v <= lim);
        vec![
            ("gram cholesky failures", self.gram.failures as f64, 0.0, self.gram.failures == 0 && self.gram.tested > 0),
            le("gram asymmetry", self.gram.max_asymmetry, 1e-12),
            le("pairing skew-symmetry", self.pairing.skew, 1e-10),
            le("pairing edge vs volume", self.pairing.edge_vs_volume, 1e-10),
            le("pairing bound ratio", self.pairing.bound_ratio, 1.0 + 1e-9),
            le("jump orthogonality", self.jump, 1e-9),
            le("hct nodal duality", self.hct.duality, 1e-11),
            le("hct c1 jump", self.hct.c1_jump, 1e-10),
            le("hct quadratic reproduction", self.hct.quadratic_error, 1e-10),
            ("hct cubic non-reproduction", self.hct.cubic_error, 1e-6, self.hct.cubic_error > 1e-6),
            le("normal equations vs dense inverse", self.normal_oracle, 1e-10),
            le("direct vs cg", self.direct_vs_cg, 1e-8),
        ]
    }

    pub fn passed(&self) -> bool {
        self.items().iter().all(|i| i.3)
    }

    /// Structural checks only (Gram, pairing, jumps, HCT).
    pub fn structural_passed(&self) -> bool {
        self.items()[..10].iter().all(|i| i.3)
    }

    /// Solver oracles only.
    pub fn oracles_passed(&self) -> bool {
        self.items()[10..].iter().all(|i| i.3)
    }
}

pub fn property_suite(seed: u64) -> Result<PropertyReport> {
    Ok(PropertyReport {
        gram: gram_check(50, &GRAM_THICKNESSES, seed)?,
        pairing: pairing_check(40, seed + 1)?,
        jump: jump_orthogonality_check(2, 10, seed + 2)?,
        hct: hct_check(20, seed + 3)?,
        normal_oracle: normal_oracle_check(20, seed + 4)?,
        direct_vs_cg: direct_vs_cg_check(2, 1e-2)?,
    })
}

pub const VERIFY_THICKNESSES: [f64; 3] = [0.0, 1e-2, 1e-4];

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyReport {
    pub manufactured: Vec<ManufacturedReport>,
    pub properties: PropertyReport,
}

impl VerifyReport {
    pub fn manufactured_passed(&self) -> bool {
        self.manufactured.iter().all(|r| r.passed(1e-6, 1e-14))
    }

    pub fn passed(&self) -> bool {
        self.manufactured_passed() && self.properties.passed()
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        for r in &self.manufactured {
            let _ = writeln!(
                s,
                "{} manufactured t={:.0e}: p1 {:.2e} p2 {:.2e} p3 {:.2e} consistency {:.2e} boundary |u| {:.1e} |Mn| {:.1e}",
                if r.passed(1e-6, 1e-14) { "PASS" } else { "FAIL" },
                r.t,
                r.p1,
                r.p2,
                r.p3,
                r.consistency,
                r.boundary_u,
                r.boundary_mn
            );
        }
        for (name, v, lim, ok) in self.properties.items() {
            let _ = writeln!(s, "{} {name}: {v:.3e} (limit {lim:.1e})", if ok { "PASS" } else { "FAIL" });
        }
        s
    }
}

pub fn verify_all(seed: u64) -> Result<VerifyReport> {
    let manufactured = VERIFY_THICKNESSES.iter().map(|&t| verify_manufactured(t, 100, seed)).collect();
    Ok(VerifyReport { manufactured, properties: property_suite(seed)? })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_triangles_are_shape_regular() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let tri = random_triangle(&mut rng);
            assert!(tri.signed_area() > 1e-3);
        }
    }

    #[test]
    fn small_property_suite() {
        assert_eq!(gram_check(3, &GRAM_THICKNESSES, 2).unwrap().failures, 0);
        let p = pairing_check(4, 3).unwrap();
        assert!(p.skew <= 1e-10 && p.edge_vs_volume <= 1e-10 && p.bound_ratio <= 1.0 + 1e-9, "{p:?}");
        assert!(jump_orthogonality_check(1, 2, 4).unwrap() <= 1e-9);
        let h = hct_check(3, 5).unwrap();
        assert!(h.duality <= 1e-11 && h.c1_jump <= 1e-10 && h.quadratic_error <= 1e-10 && h.cubic_error > 1e-6, "{h:?}");
        assert!(normal_oracle_check(2, 6).unwrap() <= 1e-10);
    }
}
