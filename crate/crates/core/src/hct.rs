//! Reduced Hsieh–Clough–Tocher macro-element.
//!
//! The parent triangle is split at its barycenter into three subtriangles;
//! subtriangle `k` is `(p_{k+1}, p_{k+2}, c)` and carries exterior edge `k`.
//! A basis function is cubic on each subtriangle, C¹ across the internal
//! edges, and has a normal derivative that is affine along each exterior edge.
//! The nine degrees of freedom are value, `∂x` and `∂y` at the three vertices.
//!
//! The local basis is computed numerically: the null space of the smoothness
//! and reduction constraints is found by SVD, then rotated to be nodal.

use nalgebra::{DMatrix, Matrix4, Matrix3, Point2, Vector2, Vector3, Vector4};

use crate::broken_poly::ScalarJet;
use crate::mesh::{Mesh, TriangleGeometry};
use crate::{Error, Result};

/// Number of local degrees of freedom.
pub const HCT_DOFS: usize = 9;

/// Exponents of the cubic monomials in local scaled coordinates.
const EXPONENTS: [(i32, i32); 10] = [(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2), (3, 0), (2, 1), (1, 2), (0, 3)];

fn ipow(x: f64, n: i32) -> f64 {
    if n <= 0 {
        1.0
    } else {
        x.powi(n)
    }
}

fn monomials(xi: f64, eta: f64) -> [f64; 10] {
    EXPONENTS.map(|(a, b)| ipow(xi, a) * ipow(eta, b))
}

fn monomial_gradients(xi: f64, eta: f64) -> [[f64; 2]; 10] {
    EXPONENTS.map(|(a, b)| {
        [
            f64::from(a) * ipow(xi, a - 1) * ipow(eta, b),
            f64::from(b) * ipow(xi, a) * ipow(eta, b - 1),
        ]
    })
}

fn monomial_hessians(xi: f64, eta: f64) -> [[f64; 3]; 10] {
    EXPONENTS.map(|(a, b)| {
        let (fa, fb) = (f64::from(a), f64::from(b));
        [
            fa * (fa - 1.0) * ipow(xi, a - 2) * ipow(eta, b),
            fa * fb * ipow(xi, a - 1) * ipow(eta, b - 1),
            fb * (fb - 1.0) * ipow(xi, a) * ipow(eta, b - 2),
        ]
    })
}

/// Polynomial traces along an edge parameterized by `s ∈ [0, 1]`.
///
/// `value[k]` is the coefficient of `s^k`; the gradient components are
/// quadratics in `s`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EdgeTrace {
    pub value: [f64; 4],
    pub grad: [[f64; 3]; 2],
}

impl EdgeTrace {
    pub fn value_at(&self, s: f64) -> f64 {
        self.value[0] + s * (self.value[1] + s * (self.value[2] + s * self.value[3]))
    }

    pub fn grad_at(&self, s: f64) -> Vector2<f64> {
        let q = |c: &[f64; 3]| c[0] + s * (c[1] + s * c[2]);
        Vector2::new(q(&self.grad[0]), q(&self.grad[1]))
    }

    /// `d/ds` of the value trace.
    pub fn value_derivative_at(&self, s: f64) -> f64 {
        self.value[1] + s * (2.0 * self.value[2] + 3.0 * s * self.value[3])
    }

    pub fn add_scaled(&mut self, c: f64, other: &EdgeTrace) {
        for k in 0..4 {
            self.value[k] += c * other.value[k];
        }
        for d in 0..2 {
            for k in 0..3 {
                self.grad[d][k] += c * other.grad[d][k];
            }
        }
    }

    /// Fits traces from jets sampled at `s = 0, 1/3, 2/3, 1` (values) and
    /// `s = 0, 1/2, 1` (gradients).
    fn fit(values: [f64; 4], grads: [Vector2<f64>; 3]) -> Self {
        let vander4 = Matrix4::from_fn(|r, c| ipow(r as f64 / 3.0, c as i32));
        let vander3 = Matrix3::from_fn(|r, c| ipow(r as f64 / 2.0, c as i32));
        let v = vander4.lu().solve(&Vector4::from(values)).expect("Vandermonde is invertible");
        let lu3 = vander3.lu();
        let gx = lu3.solve(&Vector3::new(grads[0].x, grads[1].x, grads[2].x)).unwrap();
        let gy = lu3.solve(&Vector3::new(grads[0].y, grads[1].y, grads[2].y)).unwrap();
        Self { value: [v[0], v[1], v[2], v[3]], grad: [[gx[0], gx[1], gx[2]], [gy[0], gy[1], gy[2]]] }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HctElement {
    pub geometry: TriangleGeometry,
    pub split_point: Point2<f64>,
    pub subtriangles: [TriangleGeometry; 3],
    scale: f64,
    /// `coeffs[i][k]`: monomial coefficients of basis function `i` on subtriangle `k`.
    coeffs: [[[f64; 10]; 3]; HCT_DOFS],
}

impl HctElement {
    pub fn new(geometry: TriangleGeometry) -> Result<Self> {
        geometry.barycentric_gradients()?;
        let c = geometry.centroid();
        let p = geometry.vertices;
        let subtriangles = std::array::from_fn(|k| TriangleGeometry::new(p[(k + 1) % 3], p[(k + 2) % 3], c));
        let scale = geometry.diameter();
        let local = |x: &Point2<f64>| ((x.x - c.x) / scale, (x.y - c.y) / scale);
        let lerp = |a: &Point2<f64>, b: &Point2<f64>, s: f64| Point2::from(a.coords * (1.0 - s) + b.coords * s);

        let mut rows: Vec<[f64; 30]> = Vec::new();
        // C¹ across internal edge p_j -- c, shared by subtriangles j+1 and j+2
        for j in 0..3 {
            let (a, b) = ((j + 1) % 3, (j + 2) % 3);
            for s in [0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0] {
                let (xi, eta) = local(&lerp(&p[j], &c, s));
                let m = monomials(xi, eta);
                let g = monomial_gradients(xi, eta);
                let mut row = [0.0; 30];
                for q in 0..10 {
                    row[10 * a + q] = m[q];
                    row[10 * b + q] = -m[q];
                }
                rows.push(row);
                for d in 0..2 {
                    let mut row = [0.0; 30];
                    for q in 0..10 {
                        row[10 * a + q] = g[q][d];
                        row[10 * b + q] = -g[q][d];
                    }
                    rows.push(row);
                }
            }
        }
        // affine normal derivative along exterior edge k
        for k in 0..3 {
            let n = geometry.outward_normal(k)?;
            let (a, b) = geometry.edge_endpoints(k);
            let mut row = [0.0; 30];
            for (s, w) in [(0.0, 1.0), (0.5, -2.0), (1.0, 1.0)] {
                let (xi, eta) = local(&lerp(&a, &b, s));
                let g = monomial_gradients(xi, eta);
                for q in 0..10 {
                    row[10 * k + q] += w * (g[q][0] * n.x + g[q][1] * n.y);
                }
            }
            rows.push(row);
        }

        let constraints = DMatrix::from_fn(rows.len(), 30, |r, col| rows[r][col]);
        let svd = constraints.svd(false, true);
        let v_t = svd.v_t.expect("right singular vectors requested");
        let sigma_max = svd.singular_values.max();
        let null: Vec<usize> =
            (0..svd.singular_values.len()).filter(|&i| svd.singular_values[i] <= 1e-10 * sigma_max).collect();
        let active_min = (0..svd.singular_values.len())
            .filter(|i| !null.contains(i))
            .map(|i| svd.singular_values[i])
            .fold(f64::INFINITY, f64::min);
        // rows of v_t beyond the computed singular values are part of the null space too
        let mut null_vectors: Vec<usize> = null;
        null_vectors.extend(svd.singular_values.len()..v_t.nrows());
        if null_vectors.len() != HCT_DOFS || active_min < 1e-8 * sigma_max {
            return Err(Error::DegenerateGeometry(format!(
                "HCT constraint system has a {}-dimensional null space",
                null_vectors.len()
            )));
        }
        let null_space = DMatrix::from_fn(30, HCT_DOFS, |r, col| v_t[(null_vectors[col], r)]);

        let mut dof_rows = DMatrix::zeros(HCT_DOFS, 30);
        for v in 0..3 {
            let k = (v + 1) % 3;
            let (xi, eta) = local(&p[v]);
            let m = monomials(xi, eta);
            let g = monomial_gradients(xi, eta);
            for q in 0..10 {
                dof_rows[(3 * v, 10 * k + q)] = m[q];
                dof_rows[(3 * v + 1, 10 * k + q)] = g[q][0] / scale;
                dof_rows[(3 * v + 2, 10 * k + q)] = g[q][1] / scale;
            }
        }
        let dn = &dof_rows * &null_space;
        let dn_inv = dn
            .try_inverse()
            .ok_or_else(|| Error::DegenerateGeometry("HCT nodal system is singular".into()))?;
        let basis = null_space * dn_inv;
        let coeffs = std::array::from_fn(|i| std::array::from_fn(|k| std::array::from_fn(|q| basis[(10 * k + q, i)])));

        Ok(Self { geometry, split_point: c, subtriangles, scale, coeffs })
    }

    /// Subtriangle containing `p`.
    pub fn locate(&self, p: &Point2<f64>) -> Option<usize> {
        let lambda = self.geometry.barycentric(p);
        if lambda.iter().any(|&l| l < -1e-12) {
            return None;
        }
        let mut k = 0;
        for j in 1..3 {
            if lambda[j] < lambda[k] {
                k = j;
            }
        }
        Some(k)
    }

    /// Jets of the nine basis functions using the cubic of subtriangle `sub`.
    pub fn eval_basis_in(&self, sub: usize, p: &Point2<f64>) -> [ScalarJet; HCT_DOFS] {
        let h = self.scale;
        let (xi, eta) = ((p.x - self.split_point.x) / h, (p.y - self.split_point.y) / h);
        let m = monomials(xi, eta);
        let g = monomial_gradients(xi, eta);
        let hs = monomial_hessians(xi, eta);
        std::array::from_fn(|i| {
            let c = &self.coeffs[i][sub];
            let mut jet = ScalarJet::default();
            for q in 0..10 {
                jet.value += c[q] * m[q];
                jet.grad.x += c[q] * g[q][0] / h;
                jet.grad.y += c[q] * g[q][1] / h;
                for d in 0..3 {
                    jet.hess[d] += c[q] * hs[q][d] / (h * h);
                }
            }
            jet
        })
    }

    pub fn eval_basis(&self, p: &Point2<f64>) -> Option<[ScalarJet; HCT_DOFS]> {
        self.locate(p).map(|k| self.eval_basis_in(k, p))
    }

    /// Jet of the local combination `Σ dofs[i] φ_i`.
    pub fn eval(&self, dofs: &[f64; HCT_DOFS], p: &Point2<f64>) -> Option<ScalarJet> {
        self.eval_basis(p).map(|jets| combine(&jets, dofs))
    }

    pub fn eval_in(&self, sub: usize, dofs: &[f64; HCT_DOFS], p: &Point2<f64>) -> ScalarJet {
        combine(&self.eval_basis_in(sub, p), dofs)
    }

    /// `dof_j(φ_i)` for all basis functions; the identity up to roundoff.
    pub fn dof_matrix(&self) -> [[f64; HCT_DOFS]; HCT_DOFS] {
        let mut out = [[0.0; HCT_DOFS]; HCT_DOFS];
        for v in 0..3 {
            let jets = self.eval_basis_in((v + 1) % 3, &self.geometry.vertices[v]);
            for (i, jet) in jets.iter().enumerate() {
                out[i][3 * v] = jet.value;
                out[i][3 * v + 1] = jet.grad.x;
                out[i][3 * v + 2] = jet.grad.y;
            }
        }
        out
    }

    /// Local dofs interpolating a function given by value and gradient.
    pub fn interpolation_dofs(&self, f: impl Fn(&Point2<f64>) -> (f64, Vector2<f64>)) -> [f64; HCT_DOFS] {
        let mut out = [0.0; HCT_DOFS];
        for v in 0..3 {
            let (val, grad) = f(&self.geometry.vertices[v]);
            out[3 * v] = val;
            out[3 * v + 1] = grad.x;
            out[3 * v + 2] = grad.y;
        }
        out
    }

    /// Traces of the basis functions on local edge `k`, parameterized from
    /// `p_{k+1}` (s = 0) to `p_{k+2}` (s = 1).
    pub fn edge_traces(&self, k: usize) -> [EdgeTrace; HCT_DOFS] {
        let (a, b) = self.geometry.edge_endpoints(k);
        self.traces_between(k, &a, &b)
    }

    fn traces_between(&self, sub: usize, a: &Point2<f64>, b: &Point2<f64>) -> [EdgeTrace; HCT_DOFS] {
        let at = |s: f64| self.eval_basis_in(sub, &Point2::from(a.coords * (1.0 - s) + b.coords * s));
        let vals = [at(0.0), at(1.0 / 3.0), at(2.0 / 3.0), at(1.0)];
        let grads = [at(0.0), at(0.5), at(1.0)];
        std::array::from_fn(|i| {
            EdgeTrace::fit(
                std::array::from_fn(|r| vals[r][i].value),
                std::array::from_fn(|r| grads[r][i].grad),
            )
        })
    }
}

fn combine(jets: &[ScalarJet; HCT_DOFS], dofs: &[f64; HCT_DOFS]) -> ScalarJet {
    let mut out = ScalarJet::default();
    for (jet, &c) in jets.iter().zip(dofs) {
        out.add_scaled(c, jet);
    }
    out
}

/// Reduced HCT elements on every triangle of a mesh.
#[derive(Debug, Clone)]
pub struct HctSpace<'m> {
    pub mesh: &'m Mesh,
    pub elements: Vec<HctElement>,
}

impl<'m> HctSpace<'m> {
    pub fn new(mesh: &'m Mesh) -> Result<Self> {
        use rayon::prelude::*;
        let elements = (0..mesh.num_triangles())
            .into_par_iter()
            .map(|t| HctElement::new(mesh.geometry(t)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { mesh, elements })
    }

    /// Global dofs: `(value, ∂x, ∂y)` per vertex.
    pub fn num_dofs(&self) -> usize {
        3 * self.mesh.num_vertices()
    }

    /// Global dof index of local dof `i` of `triangle`.
    pub fn global_dof(&self, triangle: usize, i: usize) -> usize {
        3 * self.mesh.triangles[triangle][i / 3] + i % 3
    }
}

/// A global C¹ field in the reduced HCT space.
#[derive(Debug, Clone)]
pub struct HctScalarField<'a> {
    pub space: &'a HctSpace<'a>,
    pub dofs: Vec<f64>,
}

impl<'a> HctScalarField<'a> {
    pub fn new(space: &'a HctSpace<'a>, dofs: Vec<f64>) -> Self {
        assert_eq!(dofs.len(), space.num_dofs());
        Self { space, dofs }
    }

    pub fn interpolate(space: &'a HctSpace<'a>, f: impl Fn(&Point2<f64>) -> (f64, Vector2<f64>)) -> Self {
        let mut dofs = Vec::with_capacity(space.num_dofs());
        for v in &space.mesh.vertices {
            let (val, grad) = f(v);
            dofs.extend([val, grad.x, grad.y]);
        }
        Self { space, dofs }
    }

    pub fn local_dofs(&self, triangle: usize) -> [f64; HCT_DOFS] {
        std::array::from_fn(|i| self.dofs[self.space.global_dof(triangle, i)])
    }
}

/// Value, gradient and Hessian of `field` at `point` in `triangle`.
pub fn eval_hct(field: &HctScalarField<'_>, triangle: usize, point: &Point2<f64>) -> Result<ScalarJet> {
    field.space.elements[triangle]
        .eval(&field.local_dofs(triangle), point)
        .ok_or(Error::PointOutsideTriangle { triangle, x: point.x, y: point.y })
}

/// Traces of `field` along global `edge`, taken from triangle `side` and
/// parameterized from `edge.vertices[0]` to `edge.vertices[1]`.
pub fn hct_edge_trace(field: &HctScalarField<'_>, edge: usize, side: usize) -> Result<EdgeTrace> {
    let mesh = field.space.mesh;
    let k = mesh.local_edge_index(side, edge).ok_or_else(|| {
        Error::InvalidConfig(format!("edge {edge} is not an edge of triangle {side}"))
    })?;
    let [va, vb] = mesh.edges[edge].vertices;
    let element = &field.space.elements[side];
    let traces = element.traces_between(k, &mesh.vertices[va], &mesh.vertices[vb]);
    let dofs = field.local_dofs(side);
    let mut out = EdgeTrace::default();
    for (trace, &c) in traces.iter().zip(&dofs) {
        out.add_scaled(c, trace);
    }
    Ok(out)
}
