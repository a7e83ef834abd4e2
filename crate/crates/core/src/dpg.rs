//! Element-level pieces of the ultraweak DPG discretization.
//!
//! Test functions are triples `(z, Θ, τ)` from the broken polynomial space,
//! trial functions are piecewise-constant fields `(u, M, θ)` plus a trace
//! generated by four reduced HCT fields `(û, M̂₁₁, M̂₁₂, M̂₂₂)` with `θ̂ = ∇û`.
//! Symmetric tensors are stored as `[xx, xy, yy]`.

use std::f64::consts::SQRT_2;

use nalgebra::{DMatrix, DVector, Point2, Vector2};

use crate::broken_poly::{BrokenTestBasis, ScalarBasisValues, ScalarJet, TestComponent, DEFAULT_TEST_DEGREE};
use crate::hct::{HctElement, HCT_DOFS};
use crate::linalg::{dense_cholesky, DenseCholesky};
use crate::mesh::TriangleGeometry;
use crate::quadrature::{edge_rule, triangle_rule, EdgeRule, TriangleRule, DEFAULT_EDGE_DEGREE, DEFAULT_VOLUME_DEGREE};
use crate::{Error, Result};

pub type SymTensor = [f64; 3];

/// Frobenius product of symmetric tensors.
pub fn frobenius(a: &SymTensor, b: &SymTensor) -> f64 {
    a[0] * b[0] + 2.0 * a[1] * b[1] + a[2] * b[2]
}

/// Number of HCT scalar fields generating the trace.
pub const TRACE_FIELDS: usize = 4;
/// Trace columns per element.
pub const TRACE_COLUMNS: usize = TRACE_FIELDS * HCT_DOFS;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MaterialLaw {
    Identity,
    Isotropic { young_modulus: f64, poisson_ratio: f64 },
}

impl MaterialLaw {
    pub fn validate(&self) -> Result<()> {
        match *self {
            MaterialLaw::Identity => Ok(()),
            MaterialLaw::Isotropic { young_modulus, poisson_ratio } => {
                if !(young_modulus > 0.0) {
                    return Err(Error::InvalidConfig(format!("Young's modulus must be positive, got {young_modulus}")));
                }
                if !(poisson_ratio > -1.0 && poisson_ratio <= 0.5) {
                    return Err(Error::InvalidConfig(format!("Poisson ratio must lie in (-1, 1/2], got {poisson_ratio}")));
                }
                Ok(())
            }
        }
    }

    /// `D = E / (12 (1 - ν²))`; 1 for the identity law.
    pub fn bending_stiffness(&self) -> f64 {
        match *self {
            MaterialLaw::Identity => 1.0,
            MaterialLaw::Isotropic { young_modulus, poisson_ratio } => {
                young_modulus / (12.0 * (1.0 - poisson_ratio * poisson_ratio))
            }
        }
    }

    pub fn apply_c(&self, x: &SymTensor) -> SymTensor {
        match *self {
            MaterialLaw::Identity => *x,
            MaterialLaw::Isotropic { poisson_ratio: nu, .. } => {
                let d = self.bending_stiffness();
                let tr = x[0] + x[2];
                [d * (nu * tr + (1.0 - nu) * x[0]), d * (1.0 - nu) * x[1], d * (nu * tr + (1.0 - nu) * x[2])]
            }
        }
    }

    pub fn apply_c_inverse(&self, y: &SymTensor) -> SymTensor {
        match *self {
            MaterialLaw::Identity => *y,
            MaterialLaw::Isotropic { poisson_ratio: nu, .. } => {
                let c = 1.0 / (self.bending_stiffness() * (1.0 - nu));
                let shift = nu / (1.0 + nu) * (y[0] + y[2]);
                [c * (y[0] - shift), c * y[1], c * (y[2] - shift)]
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryCondition {
    SimplySupported,
    /// Clamped plate, supported for the Kirchhoff limit `t = 0` only.
    Clamped,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProblemConfig {
    pub t: f64,
    pub bc: BoundaryCondition,
    pub material: MaterialLaw,
    pub test_degree: usize,
    pub volume_quad_degree: usize,
    pub edge_quad_degree: usize,
}

impl ProblemConfig {
    pub fn new(t: f64) -> Self {
        Self {
            t,
            bc: BoundaryCondition::SimplySupported,
            material: MaterialLaw::Identity,
            test_degree: DEFAULT_TEST_DEGREE,
            volume_quad_degree: DEFAULT_VOLUME_DEGREE,
            edge_quad_degree: DEFAULT_EDGE_DEGREE,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t >= 0.0 && self.t <= 1.0) {
            return Err(Error::InvalidConfig(format!("thickness must lie in [0, 1], got {}", self.t)));
        }
        if self.bc == BoundaryCondition::Clamped && self.t != 0.0 {
            return Err(Error::InvalidConfig("clamped boundary conditions are only supported for t = 0".into()));
        }
        if !(1..=6).contains(&self.test_degree) {
            return Err(Error::InvalidConfig(format!("test degree must be in 1..=6, got {}", self.test_degree)));
        }
        self.material.validate()
    }

    /// Rotation fields are present only for `t > 0`.
    pub fn has_theta(&self) -> bool {
        self.t > 0.0
    }

    /// Field unknowns per element: `u`, `M₁₁`, `M₁₂`, `M₂₂` and, for `t > 0`, `θ₁`, `θ₂`.
    pub fn num_field_dofs(&self) -> usize {
        if self.has_theta() {
            6
        } else {
            4
        }
    }
}

/// Jets of a triple `(z, Θ, τ)` at a point.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TripleJet {
    pub z: ScalarJet,
    pub theta: [ScalarJet; 3],
    pub tau: [ScalarJet; 2],
}

pub const NUM_FEATURES: usize = 12;

impl TripleJet {
    /// Test basis function `i` of the layout `(z, Θ₁₁, Θ₁₂, Θ₂₂, τ₁, τ₂)`.
    pub fn test_basis(scalar_dim: usize, values: &ScalarBasisValues, i: usize) -> Self {
        let jet = values.jet(i % scalar_dim);
        let mut out = Self::default();
        match TestComponent::ALL[i / scalar_dim] {
            TestComponent::Z => out.z = jet,
            TestComponent::Theta11 => out.theta[0] = jet,
            TestComponent::Theta12 => out.theta[1] = jet,
            TestComponent::Theta22 => out.theta[2] = jet,
            TestComponent::Tau1 => out.tau[0] = jet,
            TestComponent::Tau2 => out.tau[1] = jet,
        }
        out
    }

    /// Trace triple `(u, M, ∇u)`; the Hessian of `∇u` is left at zero since no
    /// pairing uses it.
    pub fn trace_triple(u: ScalarJet, m: [ScalarJet; 3]) -> Self {
        let h = u.hess;
        let tau = [
            ScalarJet { value: u.grad.x, grad: Vector2::new(h[0], h[1]), hess: [0.0; 3] },
            ScalarJet { value: u.grad.y, grad: Vector2::new(h[1], h[2]), hess: [0.0; 3] },
        ];
        Self { z: u, theta: m, tau }
    }

    pub fn theta_value(&self) -> SymTensor {
        self.theta.map(|j| j.value)
    }

    pub fn div_theta(&self) -> Vector2<f64> {
        let [a, b, c] = &self.theta;
        Vector2::new(a.grad.x + b.grad.y, b.grad.x + c.grad.y)
    }

    fn grad_div_theta(&self) -> [[f64; 2]; 2] {
        let [a, b, c] = &self.theta;
        [
            [a.hess[0] + b.hess[1], a.hess[1] + b.hess[2]],
            [b.hess[0] + c.hess[1], b.hess[1] + c.hess[2]],
        ]
    }

    pub fn divdiv_theta(&self) -> f64 {
        let g = self.grad_div_theta();
        g[0][0] + g[1][1]
    }

    /// `∇z - t² div Θ`.
    pub fn w(&self, t: f64) -> Vector2<f64> {
        self.z.grad - t * t * self.div_theta()
    }

    /// `ε(∇z - t² div Θ)`.
    pub fn eps_w(&self, t: f64) -> SymTensor {
        let g = self.grad_div_theta();
        let t2 = t * t;
        let h = self.z.hess;
        [h[0] - t2 * g[0][0], h[1] - 0.5 * t2 * (g[0][1] + g[1][0]), h[2] - t2 * g[1][1]]
    }

    pub fn tau_value(&self) -> Vector2<f64> {
        Vector2::new(self.tau[0].value, self.tau[1].value)
    }

    pub fn div_tau(&self) -> f64 {
        self.tau[0].grad.x + self.tau[1].grad.y
    }

    /// `div(div Θ + t(τ - ∇z))`.
    pub fn s(&self, t: f64) -> f64 {
        self.divdiv_theta() + t * (self.div_tau() - self.z.laplacian())
    }

    /// `div Θ + t(τ - ∇z)`.
    pub fn flux(&self, t: f64) -> Vector2<f64> {
        self.div_theta() + t * (self.tau_value() - self.z.grad)
    }

    /// Vector whose squared length is the pointwise density of the `V(T,t)` norm.
    pub fn features(&self, t: f64) -> [f64; NUM_FEATURES] {
        let st = t.sqrt();
        let e = self.eps_w(t);
        [
            self.z.value,
            st * self.z.grad.x,
            st * self.z.grad.y,
            self.theta[0].value,
            SQRT_2 * self.theta[1].value,
            self.theta[2].value,
            st * self.tau[0].value,
            st * self.tau[1].value,
            e[0],
            SQRT_2 * e[1],
            e[2],
            self.s(t),
        ]
    }
}

fn sym_times(m: &SymTensor, n: &Vector2<f64>) -> Vector2<f64> {
    Vector2::new(m[0] * n.x + m[1] * n.y, m[1] * n.x + m[2] * n.y)
}

/// Density of `⟨tr a, b⟩_{∂T,t}` at an edge point with outward normal `n`,
/// from the edge representation. Only values and first derivatives are used.
pub fn edge_pairing_density(a: &TripleJet, b: &TripleJet, n: &Vector2<f64>, t: f64) -> f64 {
    a.z.value * n.dot(&b.flux(t)) - n.dot(&a.flux(t)) * b.z.value + sym_times(&a.theta_value(), n).dot(&b.w(t))
        - a.w(t).dot(&sym_times(&b.theta_value(), n))
}

/// Density of `⟨tr a, b⟩_{∂T,t}` from its volume definition.
pub fn volume_pairing_density(a: &TripleJet, b: &TripleJet, t: f64) -> f64 {
    a.z.value * b.s(t) - a.s(t) * b.z.value + frobenius(&a.theta_value(), &b.eps_w(t))
        - frobenius(&a.eps_w(t), &b.theta_value())
        - t * a.tau_value().dot(&b.z.grad)
        + t * a.z.grad.dot(&b.tau_value())
}

/// Quadrature rules used for element integrals.
#[derive(Debug, Clone, PartialEq)]
pub struct ElementRules {
    pub volume: TriangleRule,
    pub edge: EdgeRule,
}

impl ElementRules {
    pub fn new(config: &ProblemConfig) -> Result<Self> {
        Ok(Self { volume: triangle_rule(config.volume_quad_degree)?, edge: edge_rule(config.edge_quad_degree)? })
    }
}

fn test_size(basis: &BrokenTestBasis, t: f64) -> usize {
    basis.layout_for(t).len()
}

/// Gram matrix of the `V(T,t)` inner product on the local test basis.
pub fn gram_matrix(tri: &TriangleGeometry, t: f64, basis: &BrokenTestBasis, rule: &TriangleRule) -> Result<DMatrix<f64>> {
    let grads = tri.barycentric_gradients()?;
    let n = test_size(basis, t);
    let dim = basis.scalar_dim();
    let mut f = DMatrix::zeros(NUM_FEATURES * rule.len(), n);
    for (q, (p, w)) in rule.mapped(tri).enumerate() {
        let values = basis.eval_with_gradients(tri, &grads, &p);
        let sw = w.sqrt();
        for i in 0..n {
            let feat = TripleJet::test_basis(dim, &values, i).features(t);
            for (k, v) in feat.iter().enumerate() {
                f[(NUM_FEATURES * q + k, i)] = sw * v;
            }
        }
    }
    Ok(f.tr_mul(&f))
}

/// Field block: columns `(u, M₁₁, M₁₂, M₂₂, θ₁, θ₂)`, the `θ` columns only for `t > 0`.
pub fn element_b_field(
    tri: &TriangleGeometry,
    config: &ProblemConfig,
    basis: &BrokenTestBasis,
    rule: &TriangleRule,
) -> Result<DMatrix<f64>> {
    let grads = tri.barycentric_gradients()?;
    let t = config.t;
    let n = test_size(basis, t);
    let dim = basis.scalar_dim();
    let mut b = DMatrix::zeros(n, config.num_field_dofs());
    for (p, w) in rule.mapped(tri) {
        let values = basis.eval_with_gradients(tri, &grads, &p);
        for i in 0..n {
            let v = TripleJet::test_basis(dim, &values, i);
            let c_inv = config.material.apply_c_inverse(&v.theta_value());
            let e = v.eps_w(t);
            let y = [c_inv[0] + e[0], c_inv[1] + e[1], c_inv[2] + e[2]];
            b[(i, 0)] += w * v.s(t);
            b[(i, 1)] += w * y[0];
            b[(i, 2)] += w * 2.0 * y[1];
            b[(i, 3)] += w * y[2];
            if config.has_theta() {
                b[(i, 4)] += w * t * (v.tau[0].value - v.z.grad.x);
                b[(i, 5)] += w * t * (v.tau[1].value - v.z.grad.y);
            }
        }
    }
    Ok(b)
}

/// Trace triples generated by HCT basis function `phi` placed in trace field
/// `field` (`û`, `M̂₁₁`, `M̂₁₂`, `M̂₂₂`).
pub fn trace_basis_triple(field: usize, phi: &ScalarJet) -> TripleJet {
    let zero = ScalarJet::default();
    match field {
        0 => TripleJet::trace_triple(*phi, [zero; 3]),
        1 => TripleJet::trace_triple(zero, [*phi, zero, zero]),
        2 => TripleJet::trace_triple(zero, [zero, *phi, zero]),
        3 => TripleJet::trace_triple(zero, [zero, zero, *phi]),
        _ => panic!("trace field index {field} out of range"),
    }
}

/// Trace block `-⟨q̂, v⟩_{∂T,t}`: column `9 f + j` is local HCT dof `j` of trace field `f`.
pub fn element_b_trace(
    hct: &HctElement,
    config: &ProblemConfig,
    basis: &BrokenTestBasis,
    rule: &EdgeRule,
) -> Result<DMatrix<f64>> {
    let tri = &hct.geometry;
    let grads = tri.barycentric_gradients()?;
    let t = config.t;
    let n = test_size(basis, t);
    let dim = basis.scalar_dim();
    let mut b = DMatrix::zeros(n, TRACE_COLUMNS);
    for k in 0..3 {
        let normal = tri.outward_normal(k)?;
        let (pa, pb) = tri.edge_endpoints(k);
        let len = tri.edge_length(k);
        let traces = hct.edge_traces(k);
        for (s, w) in rule.points.iter().zip(&rule.weights) {
            let s = s[0];
            let w = w * len;
            let p = Point2::from(pa.coords * (1.0 - s) + pb.coords * s);
            let values = basis.eval_with_gradients(tri, &grads, &p);
            let tests: Vec<TripleJet> = (0..n).map(|i| TripleJet::test_basis(dim, &values, i)).collect();
            for (j, trace) in traces.iter().enumerate() {
                let phi = ScalarJet { value: trace.value_at(s), grad: trace.grad_at(s), hess: [0.0; 3] };
                for field in 0..TRACE_FIELDS {
                    let a = trace_basis_triple(field, &phi);
                    let col = HCT_DOFS * field + j;
                    for (i, v) in tests.iter().enumerate() {
                        b[(i, col)] -= w * edge_pairing_density(&a, v, &normal, t);
                    }
                }
            }
        }
    }
    Ok(b)
}

/// Load vector `-(f, z)`.
pub fn element_load(
    tri: &TriangleGeometry,
    t: f64,
    f: &dyn Fn(&Point2<f64>) -> f64,
    basis: &BrokenTestBasis,
    rule: &TriangleRule,
) -> Result<DVector<f64>> {
    let grads = tri.barycentric_gradients()?;
    let mut l = DVector::zeros(test_size(basis, t));
    for (p, w) in rule.mapped(tri) {
        let values = basis.eval_with_gradients(tri, &grads, &p);
        let fv = f(&p);
        for (i, z) in values.values.iter().enumerate() {
            l[i] -= w * fv * z;
        }
    }
    Ok(l)
}

/// Local DPG system of one element.
#[derive(Debug, Clone, PartialEq)]
pub struct ElementSystem {
    pub element: usize,
    pub g: DMatrix<f64>,
    /// Field columns followed by the trace columns.
    pub b: DMatrix<f64>,
    pub l: DVector<f64>,
    pub num_field: usize,
}

impl ElementSystem {
    pub fn assemble(
        element: usize,
        hct: &HctElement,
        config: &ProblemConfig,
        basis: &BrokenTestBasis,
        rules: &ElementRules,
        f: &dyn Fn(&Point2<f64>) -> f64,
    ) -> Result<Self> {
        let tri = &hct.geometry;
        let g = gram_matrix(tri, config.t, basis, &rules.volume)?;
        let bf = element_b_field(tri, config, basis, &rules.volume)?;
        let bt = element_b_trace(hct, config, basis, &rules.edge)?;
        let l = element_load(tri, config.t, f, basis, &rules.volume)?;
        let num_field = bf.ncols();
        let mut b = DMatrix::zeros(g.nrows(), num_field + TRACE_COLUMNS);
        b.columns_mut(0, num_field).copy_from(&bf);
        b.columns_mut(num_field, TRACE_COLUMNS).copy_from(&bt);
        Ok(Self { element, g, b, l, num_field })
    }

    pub fn num_trial(&self) -> usize {
        self.b.ncols()
    }

    /// Cholesky of the Jacobi-scaled `D G D` and the whitened blocks
    /// `L⁻¹ D B`, `L⁻¹ D l`, with `D = diag(G)^{-1/2}`.
    pub fn factor(&self) -> Result<FactoredSystem> {
        let n = self.g.nrows();
        let ill = |pivot| Error::IllConditionedElement { element: self.element, pivot };
        let mut d = DVector::zeros(n);
        for i in 0..n {
            let gii = self.g[(i, i)];
            if !(gii > 0.0) {
                return Err(ill(i));
            }
            d[i] = 1.0 / gii.sqrt();
        }
        let scaled = DMatrix::from_fn(n, n, |i, j| d[i] * self.g[(i, j)] * d[j]);
        let chol = dense_cholesky(&scaled).map_err(|e| match e {
            Error::NotPositiveDefinite { pivot, .. } => ill(pivot),
            other => other,
        })?;
        let mut w = self.b.clone();
        for (i, mut row) in w.row_iter_mut().enumerate() {
            row *= d[i];
        }
        chol.forward_in_place(&mut w);
        let wl = chol.forward_vec(&self.l.component_mul(&d));
        Ok(FactoredSystem { chol, w, wl })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FactoredSystem {
    /// Cholesky factor of the scaled Gram matrix `D G D`.
    pub chol: DenseCholesky,
    pub w: DMatrix<f64>,
    pub wl: DVector<f64>,
}

impl FactoredSystem {
    /// `Bᵀ G⁻¹ B`.
    pub fn normal_matrix(&self) -> DMatrix<f64> {
        self.w.tr_mul(&self.w)
    }

    /// `Bᵀ G⁻¹ l`.
    pub fn normal_rhs(&self) -> DVector<f64> {
        self.w.tr_mul(&self.wl)
    }

    /// `sqrt(rᵀ G⁻¹ r)` with `r = l - B x`.
    pub fn residual(&self, x: &DVector<f64>) -> f64 {
        (&self.wl - &self.w * x).norm()
    }
}

pub fn local_normal_contribution(sys: &ElementSystem) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let fac = sys.factor()?;
    Ok((fac.normal_matrix(), fac.normal_rhs()))
}

pub fn local_residual(sys: &ElementSystem, x_local: &DVector<f64>) -> Result<f64> {
    Ok(sys.factor()?.residual(x_local))
}

/// Piecewise-constant fields per element and the global trace dof vector.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteSolution {
    pub t: f64,
    pub u: Vec<f64>,
    pub m: Vec<SymTensor>,
    /// Empty at `t = 0`.
    pub theta: Vec<Vector2<f64>>,
    pub trace: Vec<f64>,
}

impl DiscreteSolution {
    pub fn zeros(t: f64, num_elements: usize, num_trace: usize) -> Self {
        Self {
            t,
            u: vec![0.0; num_elements],
            m: vec![[0.0; 3]; num_elements],
            theta: if t > 0.0 { vec![Vector2::zeros(); num_elements] } else { Vec::new() },
            trace: vec![0.0; num_trace],
        }
    }

    pub fn num_elements(&self) -> usize {
        self.u.len()
    }
}

/// Local HCT coefficients of the four trace generators `(u, M₁₁, M₁₂, M₂₂)`.
pub type TraceDofs = [[f64; HCT_DOFS]; TRACE_FIELDS];

/// Triple `(u, M, ∇u)` generated by HCT fields, evaluated in subtriangle `sub`.
pub fn hct_triple(hct: &HctElement, sub: usize, dofs: &TraceDofs, p: &Point2<f64>) -> TripleJet {
    let u = hct.eval_in(sub, &dofs[0], p);
    let m = [hct.eval_in(sub, &dofs[1], p), hct.eval_in(sub, &dofs[2], p), hct.eval_in(sub, &dofs[3], p)];
    TripleJet::trace_triple(u, m)
}

/// `⟨tr a, b⟩_{∂T,t}` for HCT-generated triples, by edge integrals.
pub fn hct_pairing_edge(hct: &HctElement, a: &TraceDofs, b: &TraceDofs, t: f64, rule: &EdgeRule) -> Result<f64> {
    let tri = &hct.geometry;
    let mut sum = 0.0;
    for k in 0..3 {
        let normal = tri.outward_normal(k)?;
        let (pa, pb) = tri.edge_endpoints(k);
        let len = tri.edge_length(k);
        for (s, w) in rule.points.iter().zip(&rule.weights) {
            let p = Point2::from(pa.coords * (1.0 - s[0]) + pb.coords * s[0]);
            let ja = hct_triple(hct, k, a, &p);
            let jb = hct_triple(hct, k, b, &p);
            sum += w * len * edge_pairing_density(&ja, &jb, &normal, t);
        }
    }
    Ok(sum)
}

/// `⟨tr a, b⟩_{∂T,t}` for HCT-generated triples, by volume integrals over the subtriangles.
pub fn hct_pairing_volume(hct: &HctElement, a: &TraceDofs, b: &TraceDofs, t: f64, rule: &TriangleRule) -> f64 {
    let mut sum = 0.0;
    for (sub, geo) in hct.subtriangles.iter().enumerate() {
        for (p, w) in rule.mapped(geo) {
            sum += w * volume_pairing_density(&hct_triple(hct, sub, a, &p), &hct_triple(hct, sub, b, &p), t);
        }
    }
    sum
}

/// `‖(u, M, ∇u)‖_{V(T,t)}` for an HCT-generated triple.
pub fn hct_triple_norm(hct: &HctElement, a: &TraceDofs, t: f64, rule: &TriangleRule) -> f64 {
    let mut sum = 0.0;
    for (sub, geo) in hct.subtriangles.iter().enumerate() {
        for (p, w) in rule.mapped(geo) {
            sum += w * hct_triple(hct, sub, a, &p).features(t).iter().map(|v| v * v).sum::<f64>();
        }
    }
    sum.sqrt()
}
