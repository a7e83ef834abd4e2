//! Element-local polynomial test space for the triple `(z, Θ, τ)`.
//!
//! The scalar basis is the Bernstein–Bézier basis of degree `p` on the
//! physical triangle. A test function is one scalar basis function placed in
//! one of the components `z`, `Θ₁₁`, `Θ₁₂`, `Θ₂₂`, `τ₁`, `τ₂` (in that order,
//! `dim` functions each). At `t = 0` the `τ` components are dropped.

use nalgebra::{DMatrix, DVector, Point2, Vector2};

use crate::mesh::TriangleGeometry;
use crate::{Error, Result};

pub const DEFAULT_TEST_DEGREE: usize = 3;

/// Value, gradient and Hessian `(∂xx, ∂xy, ∂yy)` of a scalar function.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ScalarJet {
    pub value: f64,
    pub grad: Vector2<f64>,
    pub hess: [f64; 3],
}

impl ScalarJet {
    pub fn laplacian(&self) -> f64 {
        self.hess[0] + self.hess[2]
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self { value: s * self.value, grad: s * self.grad, hess: self.hess.map(|h| s * h) }
    }

    pub fn add_scaled(&mut self, s: f64, other: &ScalarJet) {
        self.value += s * other.value;
        self.grad += s * other.grad;
        for k in 0..3 {
            self.hess[k] += s * other.hess[k];
        }
    }
}

/// Component a test basis function lives in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TestComponent {
    Z,
    Theta11,
    Theta12,
    Theta22,
    Tau1,
    Tau2,
}

impl TestComponent {
    pub const ALL: [TestComponent; 6] = [
        TestComponent::Z,
        TestComponent::Theta11,
        TestComponent::Theta12,
        TestComponent::Theta22,
        TestComponent::Tau1,
        TestComponent::Tau2,
    ];
}

/// Ordering of the local test dofs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TestLayout {
    pub scalar_dim: usize,
    pub with_tau: bool,
}

impl TestLayout {
    pub fn num_components(&self) -> usize {
        if self.with_tau {
            6
        } else {
            4
        }
    }

    pub fn len(&self) -> usize {
        self.num_components() * self.scalar_dim
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn offset(&self, c: TestComponent) -> usize {
        let slot = TestComponent::ALL.iter().position(|&x| x == c).unwrap();
        slot * self.scalar_dim
    }

    /// Component and scalar basis index of local test dof `i`.
    pub fn component(&self, i: usize) -> (TestComponent, usize) {
        (TestComponent::ALL[i / self.scalar_dim], i % self.scalar_dim)
    }
}

/// Values and physical derivatives of all scalar basis functions at a point.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarBasisValues {
    pub values: Vec<f64>,
    pub gradients: Vec<Vector2<f64>>,
    pub hessians: Vec<[f64; 3]>,
}

impl ScalarBasisValues {
    pub fn jet(&self, i: usize) -> ScalarJet {
        ScalarJet { value: self.values[i], grad: self.gradients[i], hess: self.hessians[i] }
    }

    /// Jet of the polynomial with the given coefficients.
    pub fn combine(&self, coeffs: &[f64]) -> ScalarJet {
        let mut jet = ScalarJet::default();
        for (i, &c) in coeffs.iter().enumerate() {
            jet.add_scaled(c, &self.jet(i));
        }
        jet
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BrokenTestBasis {
    pub degree: usize,
    multi_indices: Vec<[usize; 3]>,
    multinomials: Vec<f64>,
}

/// d-th derivative of x^n for d ≤ 2.
fn pow_derivative(x: f64, n: usize, d: usize) -> f64 {
    match d {
        0 => x.powi(n as i32),
        1 if n >= 1 => n as f64 * x.powi(n as i32 - 1),
        2 if n >= 2 => (n * (n - 1)) as f64 * x.powi(n as i32 - 2),
        _ => 0.0,
    }
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

impl BrokenTestBasis {
    pub fn new(degree: usize) -> Result<Self> {
        if !(1..=6).contains(&degree) {
            return Err(Error::InvalidConfig(format!("test degree {degree} not in 1..=6")));
        }
        let mut multi_indices = Vec::new();
        for i in (0..=degree).rev() {
            for j in (0..=degree - i).rev() {
                multi_indices.push([i, j, degree - i - j]);
            }
        }
        let multinomials = multi_indices
            .iter()
            .map(|a| factorial(degree) / (factorial(a[0]) * factorial(a[1]) * factorial(a[2])))
            .collect();
        Ok(Self { degree, multi_indices, multinomials })
    }

    pub fn scalar_dim(&self) -> usize {
        self.multi_indices.len()
    }

    pub fn layout(&self, with_tau: bool) -> TestLayout {
        TestLayout { scalar_dim: self.scalar_dim(), with_tau }
    }

    /// Layout used at thickness `t`: `τ` is dropped at `t = 0`.
    pub fn layout_for(&self, t: f64) -> TestLayout {
        self.layout(t > 0.0)
    }

    pub fn eval_scalar_basis(&self, tri: &TriangleGeometry, point: &Point2<f64>) -> Result<ScalarBasisValues> {
        let grads = tri.barycentric_gradients()?;
        Ok(self.eval_with_gradients(tri, &grads, point))
    }

    /// Evaluation with precomputed barycentric gradients.
    pub fn eval_with_gradients(
        &self,
        tri: &TriangleGeometry,
        lambda_grads: &[Vector2<f64>; 3],
        point: &Point2<f64>,
    ) -> ScalarBasisValues {
        let lambda = tri.barycentric(point);
        let n = self.scalar_dim();
        let mut out = ScalarBasisValues {
            values: Vec::with_capacity(n),
            gradients: Vec::with_capacity(n),
            hessians: Vec::with_capacity(n),
        };
        for (alpha, &c) in self.multi_indices.iter().zip(&self.multinomials) {
            let p: [[f64; 3]; 3] =
                std::array::from_fn(|a| std::array::from_fn(|d| pow_derivative(lambda[a], alpha[a], d)));
            let value = c * p[0][0] * p[1][0] * p[2][0];
            // derivatives with respect to barycentric coordinates
            let mut d1 = [0.0; 3];
            let mut d2 = [[0.0; 3]; 3];
            for a in 0..3 {
                for b in 0..3 {
                    let mut prod = c;
                    for m in 0..3 {
                        let order = usize::from(m == a) + usize::from(m == b);
                        prod *= p[m][order];
                    }
                    d2[a][b] = prod;
                }
                let mut prod = c;
                for m in 0..3 {
                    prod *= p[m][usize::from(m == a)];
                }
                d1[a] = prod;
            }
            let mut grad = Vector2::zeros();
            let mut hess = [0.0; 3];
            for a in 0..3 {
                grad += d1[a] * lambda_grads[a];
                for b in 0..3 {
                    let ga = lambda_grads[a];
                    let gb = lambda_grads[b];
                    hess[0] += d2[a][b] * ga.x * gb.x;
                    hess[1] += d2[a][b] * ga.x * gb.y;
                    hess[2] += d2[a][b] * ga.y * gb.y;
                }
            }
            out.values.push(value);
            out.gradients.push(grad);
            out.hessians.push(hess);
        }
        out
    }

    /// Principal lattice points `(i v₀ + j v₁ + k v₂) / p`.
    pub fn domain_points(&self, tri: &TriangleGeometry) -> Vec<Point2<f64>> {
        let p = self.degree as f64;
        self.multi_indices
            .iter()
            .map(|a| {
                let [v0, v1, v2] = tri.vertices;
                Point2::from((a[0] as f64 * v0.coords + a[1] as f64 * v1.coords + a[2] as f64 * v2.coords) / p)
            })
            .collect()
    }

    /// Coefficients of the basis interpolant of `f` at the lattice points.
    pub fn interpolate(&self, tri: &TriangleGeometry, f: impl Fn(&Point2<f64>) -> f64) -> Result<Vec<f64>> {
        let grads = tri.barycentric_gradients()?;
        let pts = self.domain_points(tri);
        let n = self.scalar_dim();
        let mut vander = DMatrix::zeros(n, n);
        for (r, x) in pts.iter().enumerate() {
            let vals = self.eval_with_gradients(tri, &grads, x);
            for c in 0..n {
                vander[(r, c)] = vals.values[c];
            }
        }
        let rhs = DVector::from_iterator(n, pts.iter().map(&f));
        let sol = vander
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::DegenerateGeometry("singular interpolation matrix".into()))?;
        Ok(sol.iter().copied().collect())
    }
}
