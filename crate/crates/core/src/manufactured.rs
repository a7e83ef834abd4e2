//! Smooth manufactured solution on the unit square.
//!
//! With `g(s) = s³(1-s)³` and `φ(x, y) = -g(x) g(y) / 3` the rotation is
//! `ψ = ∇φ`, the moment `M = -∇²φ`, the load `f = Δ²φ`, the deflection
//! `u = φ - t² Δφ` and `θ = ∇u = ψ + t² div M`. Both `u` and `M n` vanish on
//! the boundary; `∇u` vanishes there only at `t = 0`.

use nalgebra::{Point2, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dpg::{frobenius, DiscreteSolution, SymTensor};
use crate::mesh::Mesh;
use crate::quadrature::TriangleRule;

/// `g` and its derivatives up to order five.
fn g(s: f64) -> [f64; 6] {
    let q = s * (1.0 - s);
    let l = 1.0 - 2.0 * s;
    [
        q * q * q,
        3.0 * q * q * l,
        6.0 * q * (1.0 - 5.0 * s + 5.0 * s * s),
        6.0 * l * (1.0 - 10.0 * s + 10.0 * s * s),
        -72.0 + 360.0 * s - 360.0 * s * s,
        360.0 - 720.0 * s,
    ]
}

/// All exact quantities at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExactFields {
    pub u: f64,
    pub grad_u: Vector2<f64>,
    pub m: SymTensor,
    pub div_m: Vector2<f64>,
    pub f: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExactSolution {
    pub t: f64,
}

impl ExactSolution {
    pub fn new(t: f64) -> Self {
        Self { t }
    }

    pub fn phi(&self, p: &Point2<f64>) -> f64 {
        -g(p.x)[0] * g(p.y)[0] / 3.0
    }

    pub fn psi(&self, p: &Point2<f64>) -> Vector2<f64> {
        let (gx, gy) = (g(p.x), g(p.y));
        Vector2::new(-gx[1] * gy[0] / 3.0, -gx[0] * gy[1] / 3.0)
    }

    /// `-∇²φ`; independent of `t`.
    pub fn moment(&self, p: &Point2<f64>) -> SymTensor {
        let (gx, gy) = (g(p.x), g(p.y));
        [gx[2] * gy[0] / 3.0, gx[1] * gy[1] / 3.0, gx[0] * gy[2] / 3.0]
    }

    pub fn laplacian_phi(&self, p: &Point2<f64>) -> f64 {
        let (gx, gy) = (g(p.x), g(p.y));
        -(gx[2] * gy[0] + gx[0] * gy[2]) / 3.0
    }

    pub fn grad_laplacian_phi(&self, p: &Point2<f64>) -> Vector2<f64> {
        let (gx, gy) = (g(p.x), g(p.y));
        Vector2::new(-(gx[3] * gy[0] + gx[1] * gy[2]) / 3.0, -(gx[2] * gy[1] + gx[0] * gy[3]) / 3.0)
    }

    /// `div M = -∇Δφ`.
    pub fn div_moment(&self, p: &Point2<f64>) -> Vector2<f64> {
        -self.grad_laplacian_phi(p)
    }

    /// `f = Δ²φ`; independent of `t`.
    pub fn load(&self, p: &Point2<f64>) -> f64 {
        let (gx, gy) = (g(p.x), g(p.y));
        -(gx[4] * gy[0] + 2.0 * gx[2] * gy[2] + gx[0] * gy[4]) / 3.0
    }

    pub fn u(&self, p: &Point2<f64>) -> f64 {
        self.phi(p) - self.t * self.t * self.laplacian_phi(p)
    }

    /// `θ = ∇u`.
    pub fn grad_u(&self, p: &Point2<f64>) -> Vector2<f64> {
        self.psi(p) - self.t * self.t * self.grad_laplacian_phi(p)
    }

    pub fn fields(&self, p: &Point2<f64>) -> ExactFields {
        ExactFields { u: self.u(p), grad_u: self.grad_u(p), m: self.moment(p), div_m: self.div_moment(p), f: self.load(p) }
    }
}

pub const FD_STEP: f64 = 1e-5;

fn fd_grad(f: &dyn Fn(&Point2<f64>) -> f64, p: &Point2<f64>, h: f64) -> Vector2<f64> {
    let ex = Vector2::new(h, 0.0);
    let ey = Vector2::new(0.0, h);
    Vector2::new((f(&(p + ex)) - f(&(p - ex))) / (2.0 * h), (f(&(p + ey)) - f(&(p - ey))) / (2.0 * h))
}

/// Second differences `(∂xx, ∂xy, ∂yy)`.
fn fd_hessian(f: &dyn Fn(&Point2<f64>) -> f64, p: &Point2<f64>, h: f64) -> [f64; 3] {
    let at = |dx: f64, dy: f64| f(&Point2::new(p.x + dx, p.y + dy));
    let c = at(0.0, 0.0);
    [
        (at(h, 0.0) - 2.0 * c + at(-h, 0.0)) / (h * h),
        (at(h, h) - at(h, -h) - at(-h, h) + at(-h, -h)) / (4.0 * h * h),
        (at(0.0, h) - 2.0 * c + at(0.0, -h)) / (h * h),
    ]
}

/// Maximum residuals of the closed forms under finite differences.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ManufacturedReport {
    pub t: f64,
    /// `-div(div M + t(θ - ∇u)) - f`.
    pub p1: f64,
    /// `M + ε(∇u - t² div M)`.
    pub p2: f64,
    /// `θ - ∇u`.
    pub p3: f64,
    /// `∇φ` vs `ψ`, `-∇²φ` vs `M`, `Δ²φ` vs `f`, `∇Δφ` vs `-div M`.
    pub consistency: f64,
    /// `u(t₁) - u(t₂) = (t₂² - t₁²) Δφ` against `t = 0`.
    pub t_dependence: f64,
    pub boundary_u: f64,
    pub boundary_mn: f64,
}

impl ManufacturedReport {
    pub fn max_pde_residual(&self) -> f64 {
        self.p1.max(self.p2).max(self.p3).max(self.consistency)
    }

    pub fn passed(&self, pde_tol: f64, boundary_tol: f64) -> bool {
        self.max_pde_residual() <= pde_tol
            && self.t_dependence <= 1e-13
            && self.boundary_u <= boundary_tol
            && self.boundary_mn <= boundary_tol
    }
}

/// Checks the exact solution at `n_samples` random interior points and 40
/// boundary points.
pub fn verify_manufactured(t: f64, n_samples: usize, seed: u64) -> ManufacturedReport {
    let ex = ExactSolution::new(t);
    let ex0 = ExactSolution::new(0.0);
    let h = FD_STEP;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rep = ManufacturedReport { t, ..Default::default() };
    let m_comp = |k: usize| move |q: &Point2<f64>| ex.moment(q)[k];
    let u_fn = |q: &Point2<f64>| ex.u(q);
    for _ in 0..n_samples {
        let p = Point2::new(rng.random_range(0.01..0.99), rng.random_range(0.01..0.99));
        let fields = ex.fields(&p);

        // (p1): divdiv M by second differences, the shear part by differences of θ and u
        let h11 = fd_hessian(&m_comp(0), &p, h);
        let h12 = fd_hessian(&m_comp(1), &p, h);
        let h22 = fd_hessian(&m_comp(2), &p, h);
        let divdiv_m = h11[0] + 2.0 * h12[1] + h22[2];
        let theta_x = |q: &Point2<f64>| ex.grad_u(q).x;
        let theta_y = |q: &Point2<f64>| ex.grad_u(q).y;
        let div_theta = fd_grad(&theta_x, &p, h).x + fd_grad(&theta_y, &p, h).y;
        let hu = fd_hessian(&u_fn, &p, h);
        let p1 = -(divdiv_m + t * (div_theta - (hu[0] + hu[2]))) - fields.f;
        rep.p1 = rep.p1.max(p1.abs());

        // (p2): ε(∇u - t² div M) with ∇u and div M by differences
        let div_m_fd = |q: &Point2<f64>| {
            let a = fd_grad(&m_comp(0), q, h);
            let b = fd_grad(&m_comp(1), q, h);
            let c = fd_grad(&m_comp(2), q, h);
            Vector2::new(a.x + b.y, b.x + c.y)
        };
        let dm_x = |q: &Point2<f64>| div_m_fd(q).x;
        let dm_y = |q: &Point2<f64>| div_m_fd(q).y;
        let gx = fd_grad(&dm_x, &p, h);
        let gy = fd_grad(&dm_y, &p, h);
        let t2 = t * t;
        let eps = [hu[0] - t2 * gx.x, hu[1] - 0.5 * t2 * (gx.y + gy.x), hu[2] - t2 * gy.y];
        let p2 = (0..3).map(|k| (fields.m[k] + eps[k]).abs()).fold(0.0, f64::max);
        rep.p2 = rep.p2.max(p2);

        let p3 = (fields.grad_u - fd_grad(&u_fn, &p, h)).amax();
        rep.p3 = rep.p3.max(p3);

        let phi = |q: &Point2<f64>| ex.phi(q);
        let lap = |q: &Point2<f64>| ex.laplacian_phi(q);
        let hphi = fd_hessian(&phi, &p, h);
        let hlap = fd_hessian(&lap, &p, h);
        let c = [
            (fd_grad(&phi, &p, h) - ex.psi(&p)).amax(),
            (0..3).map(|k| (hphi[k] + fields.m[k]).abs()).fold(0.0, f64::max),
            (hlap[0] + hlap[2] - fields.f).abs(),
            (fd_grad(&lap, &p, h) + fields.div_m).amax(),
            (ex.laplacian_phi(&p) - (hphi[0] + hphi[2])).abs(),
        ];
        rep.consistency = rep.consistency.max(c.iter().fold(0.0, |a, &b| a.max(b)));

        let du = (ex.u(&p) - ex0.u(&p)) + t2 * ex.laplacian_phi(&p);
        rep.t_dependence = rep.t_dependence.max(du.abs());
    }
    for (q, n) in boundary_samples(10) {
        let fields = ex.fields(&q);
        rep.boundary_u = rep.boundary_u.max(fields.u.abs());
        let m = fields.m;
        let mn = Vector2::new(m[0] * n.x + m[1] * n.y, m[1] * n.x + m[2] * n.y);
        rep.boundary_mn = rep.boundary_mn.max(mn.amax());
    }
    rep
}

/// `per_side` equispaced points on each side, with outward normals.
pub fn boundary_samples(per_side: usize) -> Vec<(Point2<f64>, Vector2<f64>)> {
    let mut out = Vec::with_capacity(4 * per_side);
    for i in 0..per_side {
        let s = (i as f64 + 0.5) / per_side as f64;
        out.push((Point2::new(s, 0.0), Vector2::new(0.0, -1.0)));
        out.push((Point2::new(1.0, s), Vector2::new(1.0, 0.0)));
        out.push((Point2::new(1.0 - s, 1.0), Vector2::new(0.0, 1.0)));
        out.push((Point2::new(0.0, 1.0 - s), Vector2::new(-1.0, 0.0)));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct L2Errors {
    pub u: f64,
    pub m: f64,
    /// Zero at `t = 0`.
    pub theta: f64,
}

impl L2Errors {
    /// `sqrt(err_u² + err_M² + t err_θ²)`.
    pub fn total(&self, t: f64) -> f64 {
        (self.u * self.u + self.m * self.m + t * self.theta * self.theta).sqrt()
    }
}

/// L2 errors of the piecewise-constant fields against the exact solution.
pub fn l2_errors(solution: &DiscreteSolution, exact: &ExactSolution, mesh: &Mesh, rule: &TriangleRule) -> L2Errors {
    let with_theta = solution.t > 0.0 && !solution.theta.is_empty();
    let (mut eu, mut em, mut et) = (0.0, 0.0, 0.0);
    for e in 0..mesh.num_triangles() {
        let tri = mesh.geometry(e);
        for (p, w) in rule.mapped(&tri) {
            let du = exact.u(&p) - solution.u[e];
            eu += w * du * du;
            let m = exact.moment(&p);
            let mh = solution.m[e];
            let dm = [m[0] - mh[0], m[1] - mh[1], m[2] - mh[2]];
            em += w * frobenius(&dm, &dm);
            if with_theta {
                et += w * (exact.grad_u(&p) - solution.theta[e]).norm_squared();
            }
        }
    }
    L2Errors { u: eu.sqrt(), m: em.sqrt(), theta: et.sqrt() }
}

/// `‖Δφ‖_{L2(Ω)}`.
pub fn laplacian_phi_norm(mesh: &Mesh, rule: &TriangleRule) -> f64 {
    let ex = ExactSolution::new(0.0);
    l2_norm_on(mesh, rule, |p| ex.laplacian_phi(p))
}

pub fn l2_norm_on(mesh: &Mesh, rule: &TriangleRule, f: impl Fn(&Point2<f64>) -> f64) -> f64 {
    let mut sum = 0.0;
    for e in 0..mesh.num_triangles() {
        for (p, w) in rule.mapped(&mesh.geometry(e)) {
            sum += w * f(&p).powi(2);
        }
    }
    sum.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::triangle_rule;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    #[test]
    fn center_values() {
        let c = Point2::new(0.5, 0.5);
        let ex = ExactSolution::new(0.01);
        assert_eq!(ex.psi(&c), Vector2::zeros());
        let m = ex.moment(&c);
        assert_relative_eq!(m[0], -1.953125e-3, epsilon = 1e-17);
        assert_eq!(m[1], 0.0);
        assert_relative_eq!(m[2], -1.953125e-3, epsilon = 1e-17);
        assert_relative_eq!(ex.load(&c), -0.28125, epsilon = 1e-15);
        assert_relative_eq!(ex.phi(&c), -8.138020833333333e-5, epsilon = 1e-18);
        assert_relative_eq!(ex.laplacian_phi(&c), 3.90625e-3, epsilon = 1e-17);
        assert_relative_eq!(ex.u(&c), -8.177083333333333e-5, epsilon = 1e-18);
    }

    #[test]
    fn g_derivatives_match_differences() {
        for s in [0.1, 0.37, 0.5, 0.81] {
            let h = 1e-5;
            let (gp, gm) = (g(s + h), g(s - h));
            for k in 0..5 {
                let fd = (gp[k] - gm[k]) / (2.0 * h);
                assert_abs_diff_eq!(fd, g(s)[k + 1], epsilon = 1e-6 * (1.0 + g(s)[k + 1].abs()));
            }
        }
    }

    #[test]
    fn manufactured_residuals() {
        for t in [0.0, 1e-2, 1e-4, 0.5] {
            let rep = verify_manufactured(t, 100, 42);
            assert!(rep.passed(1e-6, 1e-14), "{rep:?}");
        }
        assert!(verify_manufactured(0.0, 50, 1).p2 <= 1e-8);
    }

    #[test]
    fn boundary_gradient_of_u() {
        // ∇u = ψ vanishes on the boundary only in the limit t = 0; for t > 0
        // the normal derivative is -t² ∂ₙΔφ ≠ 0 while the tangential one is zero
        for (q, n) in boundary_samples(10) {
            assert!(ExactSolution::new(0.0).grad_u(&q).amax() <= 1e-14);
            let t = 0.3;
            let grad = ExactSolution::new(t).grad_u(&q);
            let tangent = Vector2::new(-n.y, n.x);
            assert!(grad.dot(&tangent).abs() <= 1e-14);
            assert_relative_eq!(grad.dot(&n), -t * t * ExactSolution::new(t).grad_laplacian_phi(&q).dot(&n), epsilon = 1e-15);
        }
        assert!(ExactSolution::new(0.3).grad_u(&Point2::new(0.5, 0.0)).norm() > 1e-3);
    }

    #[test]
    fn path_integral_of_gradient_recovers_u() {
        // integrate ∇u along the segment from (0, 0.5) to (0.5, 0.5) with Gauss points
        let ex = ExactSolution::new(0.01);
        let (w, x) = fenris_quadrature::univariate::gauss(10);
        let integral: f64 = w.iter().zip(&x).map(|(w, x)| 0.25 * w * ex.grad_u(&Point2::new(0.25 * (x[0] + 1.0), 0.5)).x).sum();
        assert_relative_eq!(integral, -8.177083333333333e-5, epsilon = 1e-17);
    }

    #[test]
    fn l2_error_examples() {
        let mesh = Mesh::unit_square(3);
        let r12 = triangle_rule(12).unwrap();
        let r16 = triangle_rule(16).unwrap();
        let r20 = triangle_rule(20).unwrap();
        let ex = ExactSolution::new(0.01);
        let n = mesh.num_triangles();

        let zero = DiscreteSolution::zeros(0.01, n, 0);
        let a = l2_errors(&zero, &ex, &mesh, &r12);
        let b = l2_errors(&zero, &ex, &mesh, &r16);
        assert_relative_eq!(a.m, b.m, max_relative = 1e-12);

        // elementwise means of u: error is the distance to the mean
        let mut sol = DiscreteSolution::zeros(0.01, n, 0);
        for e in 0..n {
            let tri = mesh.geometry(e);
            sol.u[e] = r20.mapped(&tri).map(|(p, w)| w * ex.u(&p)).sum::<f64>() / tri.area();
        }
        let err = l2_errors(&sol, &ex, &mesh, &r16).u;
        let oracle: f64 = (0..n)
            .map(|e| {
                let tri = mesh.geometry(e);
                r20.mapped(&tri).map(|(p, w)| w * (ex.u(&p) - sol.u[e]).powi(2)).sum::<f64>()
            })
            .sum::<f64>()
            .sqrt();
        assert_relative_eq!(err, oracle, max_relative = 1e-12);

        let at0 = l2_errors(&DiscreteSolution::zeros(0.0, n, 0), &ExactSolution::new(0.0), &mesh, &r12);
        assert_eq!(at0.theta, 0.0);
    }

    #[test]
    fn exact_deflection_difference_closed_form() {
        let mesh = Mesh::unit_square(3);
        let rule = triangle_rule(14).unwrap();
        let lap = laplacian_phi_norm(&mesh, &rule);
        for t in [1e-1, 1e-2, 1e-3] {
            let (a, b) = (ExactSolution::new(t), ExactSolution::new(0.0));
            let diff = l2_norm_on(&mesh, &rule, |p| a.u(p) - b.u(p));
            assert_relative_eq!(diff, t * t * lap, max_relative = 1e-12);
        }
    }
}
