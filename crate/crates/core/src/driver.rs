//! Global assembly, boundary constraints, solves and parameter studies.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector, Vector2};
use rayon::prelude::*;

use crate::broken_poly::BrokenTestBasis;
use crate::dpg::{BoundaryCondition, DiscreteSolution, ElementRules, ElementSystem, ProblemConfig, TRACE_FIELDS};
use crate::hct::{HctSpace, HCT_DOFS};
use crate::linalg::{solve_spd, SolverMethod, SparseSymMatrix};
use crate::manufactured::{l2_errors, l2_norm_on, laplacian_phi_norm, ExactSolution, L2Errors};
use crate::mesh::{Mesh, Side};
use crate::quadrature::triangle_rule;
use crate::{Error, Result};

/// Trace dofs per vertex: 4 HCT fields × (value, ∂x, ∂y).
pub const TRACE_DOFS_PER_VERTEX: usize = 3 * TRACE_FIELDS;

/// Trace field indices.
pub const FIELD_U: usize = 0;
pub const FIELD_M11: usize = 1;
pub const FIELD_M12: usize = 2;
pub const FIELD_M22: usize = 3;

/// HCT dof components.
pub const VALUE: usize = 0;
pub const DX: usize = 1;
pub const DY: usize = 2;

/// Global numbering: field unknowns element by element, then the trace dofs
/// vertex by vertex.
#[derive(Debug, Clone, PartialEq)]
pub struct DofMap {
    pub num_elements: usize,
    pub num_vertices: usize,
    pub field_per_element: usize,
    pub constrained: Vec<bool>,
}

impl DofMap {
    pub fn new(mesh: &Mesh, config: &ProblemConfig) -> Self {
        let field_per_element = config.num_field_dofs();
        let n = field_per_element * mesh.num_triangles() + TRACE_DOFS_PER_VERTEX * mesh.num_vertices();
        Self {
            num_elements: mesh.num_triangles(),
            num_vertices: mesh.num_vertices(),
            field_per_element,
            constrained: vec![false; n],
        }
    }

    pub fn len(&self) -> usize {
        self.constrained.len()
    }

    pub fn is_empty(&self) -> bool {
        self.constrained.is_empty()
    }

    pub fn trace_offset(&self) -> usize {
        self.field_per_element * self.num_elements
    }

    pub fn field_dof(&self, element: usize, k: usize) -> usize {
        self.field_per_element * element + k
    }

    pub fn trace_dof(&self, vertex: usize, field: usize, component: usize) -> usize {
        self.trace_offset() + TRACE_DOFS_PER_VERTEX * vertex + 3 * field + component
    }

    /// Global dofs of the local trial columns of `element` (fields, then `9 f + j`).
    pub fn element_dofs(&self, mesh: &Mesh, element: usize) -> Vec<usize> {
        let tri = mesh.triangles[element];
        let mut dofs: Vec<usize> = (0..self.field_per_element).map(|k| self.field_dof(element, k)).collect();
        for field in 0..TRACE_FIELDS {
            for j in 0..HCT_DOFS {
                dofs.push(self.trace_dof(tri[j / 3], field, j % 3));
            }
        }
        dofs
    }

    pub fn constrain(&mut self, vertex: usize, field: usize, component: usize) {
        let d = self.trace_dof(vertex, field, component);
        self.constrained[d] = true;
    }

    pub fn num_constrained(&self) -> usize {
        self.constrained.iter().filter(|&&c| c).count()
    }

    pub fn num_free(&self) -> usize {
        self.len() - self.num_constrained()
    }

    /// Index among the free dofs, `None` for constrained ones.
    pub fn free_numbering(&self) -> Vec<Option<usize>> {
        let mut next = 0;
        self.constrained
            .iter()
            .map(|&c| {
                if c {
                    None
                } else {
                    next += 1;
                    Some(next - 1)
                }
            })
            .collect()
    }

    /// Human-readable meaning of a global dof.
    pub fn describe(&self, dof: usize) -> String {
        if dof < self.trace_offset() {
            let names = ["u", "M11", "M12", "M22", "theta1", "theta2"];
            format!("field {} of element {}", names[dof % self.field_per_element], dof / self.field_per_element)
        } else {
            let r = dof - self.trace_offset();
            let fields = ["u", "M11", "M12", "M22"];
            let comps = ["value", "dx", "dy"];
            let v = r / TRACE_DOFS_PER_VERTEX;
            let k = r % TRACE_DOFS_PER_VERTEX;
            format!("trace {} {} at vertex {}", fields[k / 3], comps[k % 3], v)
        }
    }
}

/// Hard-zero constraints for `u = 0`, `M n = 0` on the boundary of the unit square.
pub fn apply_bc_simply_supported(mesh: &Mesh, dofs: &mut DofMap) -> Result<()> {
    for &(e, side) in &mesh.boundary_edges {
        check_axis_aligned(mesh, e, side)?;
        let (tangential, fields) = if side.is_horizontal() {
            (DX, [FIELD_U, FIELD_M12, FIELD_M22])
        } else {
            (DY, [FIELD_U, FIELD_M11, FIELD_M12])
        };
        for &v in &mesh.edges[e].vertices {
            for field in fields {
                dofs.constrain(v, field, VALUE);
                dofs.constrain(v, field, tangential);
            }
        }
    }
    Ok(())
}

/// Hard-zero constraints for `u = 0`, `∇u = 0` on the boundary; `M` is free.
pub fn apply_bc_clamped(mesh: &Mesh, dofs: &mut DofMap) -> Result<()> {
    for &(e, side) in &mesh.boundary_edges {
        check_axis_aligned(mesh, e, side)?;
        for &v in &mesh.edges[e].vertices {
            for c in [VALUE, DX, DY] {
                dofs.constrain(v, FIELD_U, c);
            }
        }
    }
    Ok(())
}

fn check_axis_aligned(mesh: &Mesh, e: usize, side: Side) -> Result<()> {
    let [a, b] = mesh.edges[e].vertices;
    let (p, q) = (mesh.vertices[a], mesh.vertices[b]);
    let ok = if side.is_horizontal() { p.y == q.y } else { p.x == q.x };
    if ok {
        Ok(())
    } else {
        Err(Error::UnsupportedGeometry(format!("boundary edge {e} from {p} to {q} is not axis aligned")))
    }
}

pub fn build_dof_map(mesh: &Mesh, config: &ProblemConfig) -> Result<DofMap> {
    let mut dofs = DofMap::new(mesh, config);
    match config.bc {
        BoundaryCondition::SimplySupported => apply_bc_simply_supported(mesh, &mut dofs)?,
        BoundaryCondition::Clamped => apply_bc_clamped(mesh, &mut dofs)?,
    }
    Ok(dofs)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    /// `None` picks direct or CG by problem size.
    pub method: Option<SolverMethod>,
    pub cg_tol: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self { method: None, cg_tol: 1e-12 }
    }
}

/// Whitened element blocks `L⁻¹B`, `L⁻¹l` of one element.
#[derive(Debug, Clone, PartialEq)]
pub struct ElementBlocks {
    pub dofs: Vec<usize>,
    pub w: DMatrix<f64>,
    pub wl: DVector<f64>,
}

/// All element contributions of one discrete problem.
#[derive(Debug, Clone)]
pub struct GlobalSystem {
    pub config: ProblemConfig,
    pub dofs: DofMap,
    pub elements: Vec<ElementBlocks>,
}

impl GlobalSystem {
    pub fn build(mesh: &Mesh, config: &ProblemConfig, f: &(dyn Fn(&nalgebra::Point2<f64>) -> f64 + Sync)) -> Result<Self> {
        config.validate()?;
        let dofs = build_dof_map(mesh, config)?;
        let space = HctSpace::new(mesh)?;
        let basis = BrokenTestBasis::new(config.test_degree)?;
        let rules = ElementRules::new(config)?;
        let elements = space
            .elements
            .par_iter()
            .enumerate()
            .map(|(e, hct)| {
                let sys = ElementSystem::assemble(e, hct, config, &basis, &rules, f)?;
                let fac = sys.factor()?;
                Ok(ElementBlocks { dofs: dofs.element_dofs(mesh, e), w: fac.w, wl: fac.wl })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { config: *config, dofs, elements })
    }

    /// Normal equations restricted to the free dofs. Contributions are summed
    /// in element order, independent of thread scheduling.
    pub fn assemble_normal(&self) -> (SparseSymMatrix, Vec<f64>) {
        let free = self.dofs.free_numbering();
        let n = self.dofs.num_free();
        let contributions: Vec<(DMatrix<f64>, DVector<f64>)> =
            self.elements.par_iter().map(|el| (el.w.tr_mul(&el.w), el.w.tr_mul(&el.wl))).collect();
        let mut triplets = Vec::new();
        let mut rhs = vec![0.0; n];
        for (el, (a, b)) in self.elements.iter().zip(&contributions) {
            for (i, &gi) in el.dofs.iter().enumerate() {
                let Some(fi) = free[gi] else { continue };
                rhs[fi] += b[i];
                for (j, &gj) in el.dofs.iter().enumerate() {
                    let Some(fj) = free[gj] else { continue };
                    if fi >= fj {
                        triplets.push((fi, fj, a[(i, j)]));
                    }
                }
            }
        }
        (SparseSymMatrix::from_triplets(n, &triplets), rhs)
    }

    /// Solves the normal equations; the result covers all dofs with hard
    /// zeros in the constrained entries.
    pub fn solve(&self, options: &SolveOptions) -> Result<Vec<f64>> {
        let (a, rhs) = self.assemble_normal();
        let method = options.method.unwrap_or_else(|| SolverMethod::default_for(a.dim));
        let x_free = solve_spd(&a, &rhs, method, options.cg_tol).map_err(|e| self.diagnose(&a, e))?;
        Ok(self.expand(&x_free))
    }

    fn diagnose(&self, a: &SparseSymMatrix, err: Error) -> Error {
        let free = self.dofs.free_numbering();
        let diag = a.diagonal();
        let scale = a.max_abs();
        let mut weak: Vec<String> = Vec::new();
        for (g, f) in free.iter().enumerate() {
            if let Some(f) = f {
                if diag[*f] <= 1e-14 * scale {
                    weak.push(self.dofs.describe(g));
                }
            }
        }
        let detail = if weak.is_empty() {
            String::from("no vanishing diagonal entries")
        } else {
            format!("vanishing diagonal at {}", weak.iter().take(10).cloned().collect::<Vec<_>>().join(", "))
        };
        match err {
            Error::CgNotConverged { .. } => err,
            other => Error::IndefiniteSystem(format!("{other}; {detail}")),
        }
    }

    pub fn expand(&self, x_free: &[f64]) -> Vec<f64> {
        let mut x = vec![0.0; self.dofs.len()];
        for (g, f) in self.dofs.free_numbering().iter().enumerate() {
            if let Some(f) = f {
                x[g] = x_free[*f];
            }
        }
        x
    }

    pub fn restrict(&self, x: &[f64]) -> Vec<f64> {
        self.dofs.free_numbering().iter().zip(x).filter_map(|(f, v)| f.map(|_| *v)).collect()
    }

    /// `η_T` for every element.
    pub fn element_residuals(&self, x: &[f64]) -> Vec<f64> {
        self.elements
            .par_iter()
            .map(|el| {
                let xl = DVector::from_iterator(el.dofs.len(), el.dofs.iter().map(|&d| x[d]));
                (&el.wl - &el.w * xl).norm()
            })
            .collect()
    }

    /// `η = sqrt(Σ η_T²)`.
    pub fn eta(&self, x: &[f64]) -> f64 {
        self.element_residuals(x).iter().map(|e| e * e).sum::<f64>().sqrt()
    }

    pub fn to_solution(&self, x: &[f64]) -> DiscreteSolution {
        let d = &self.dofs;
        let n = d.num_elements;
        let mut sol = DiscreteSolution::zeros(self.config.t, n, d.len() - d.trace_offset());
        for e in 0..n {
            sol.u[e] = x[d.field_dof(e, 0)];
            sol.m[e] = [x[d.field_dof(e, 1)], x[d.field_dof(e, 2)], x[d.field_dof(e, 3)]];
            if d.field_per_element == 6 {
                sol.theta[e] = Vector2::new(x[d.field_dof(e, 4)], x[d.field_dof(e, 5)]);
            }
        }
        sol.trace.copy_from_slice(&x[d.trace_offset()..]);
        sol
    }

    /// Global vector of the exact solution: element means of the fields and
    /// HCT interpolation of `(u, M)` for the trace.
    pub fn interpolate_exact(&self, mesh: &Mesh, exact: &ExactSolution) -> Result<Vec<f64>> {
        let d = &self.dofs;
        let rule = triangle_rule(self.config.volume_quad_degree)?;
        let mut x = vec![0.0; d.len()];
        for e in 0..d.num_elements {
            let tri = mesh.geometry(e);
            let mut acc = [0.0; 6];
            for (p, w) in rule.mapped(&tri) {
                let f = exact.fields(&p);
                let vals = [f.u, f.m[0], f.m[1], f.m[2], f.grad_u.x, f.grad_u.y];
                for k in 0..6 {
                    acc[k] += w * vals[k];
                }
            }
            for k in 0..d.field_per_element {
                x[d.field_dof(e, k)] = acc[k] / tri.area();
            }
        }
        let h = 1e-6;
        for (v, p) in mesh.vertices.iter().enumerate() {
            let f = exact.fields(p);
            let set = |x: &mut Vec<f64>, field: usize, vals: [f64; 3]| {
                for c in 0..3 {
                    x[d.trace_dof(v, field, c)] = vals[c];
                }
            };
            set(&mut x, FIELD_U, [f.u, f.grad_u.x, f.grad_u.y]);
            // moment gradients by central differences of the closed form
            let mx = |s: f64| exact.moment(&nalgebra::Point2::new(p.x + s, p.y));
            let my = |s: f64| exact.moment(&nalgebra::Point2::new(p.x, p.y + s));
            for k in 0..3 {
                let gx = (mx(h)[k] - mx(-h)[k]) / (2.0 * h);
                let gy = (my(h)[k] - my(-h)[k]) / (2.0 * h);
                set(&mut x, FIELD_M11 + k, [f.m[k], gx, gy]);
            }
        }
        for (g, &c) in d.constrained.iter().enumerate() {
            if c {
                x[g] = 0.0;
            }
        }
        Ok(x)
    }
}

/// Result of one discrete solve.
#[derive(Debug, Clone)]
pub struct SolveOutput {
    pub solution: DiscreteSolution,
    pub x: Vec<f64>,
    pub eta: f64,
    pub eta_elements: Vec<f64>,
    pub num_free: usize,
}

pub fn assemble_and_solve(
    mesh: &Mesh,
    config: &ProblemConfig,
    f: &(dyn Fn(&nalgebra::Point2<f64>) -> f64 + Sync),
    options: &SolveOptions,
) -> Result<SolveOutput> {
    let system = GlobalSystem::build(mesh, config, f)?;
    let x = system.solve(options)?;
    let eta_elements = system.element_residuals(&x);
    let eta = eta_elements.iter().map(|e| e * e).sum::<f64>().sqrt();
    Ok(SolveOutput { solution: system.to_solution(&x), x, eta, eta_elements, num_free: system.dofs.num_free() })
}

/// Solves the manufactured problem for thickness `config.t`.
pub fn solve_manufactured(mesh: &Mesh, config: &ProblemConfig, options: &SolveOptions) -> Result<SolveOutput> {
    let exact = ExactSolution::new(config.t);
    assemble_and_solve(mesh, config, &move |p| exact.load(p), options)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StudyRecord {
    pub level: usize,
    pub t: f64,
    pub ndof: usize,
    pub err_u: f64,
    pub err_m: f64,
    pub err_theta: f64,
    pub eta: f64,
    pub rate_u: Option<f64>,
    pub rate_m: Option<f64>,
    pub rate_theta: Option<f64>,
}

impl StudyRecord {
    /// `sqrt(err_u² + err_M² + t err_θ²) / η`.
    pub fn error_to_estimator(&self) -> f64 {
        (self.err_u.powi(2) + self.err_m.powi(2) + self.t * self.err_theta.powi(2)).sqrt() / self.eta
    }
}

/// `log2(previous / current)`, undefined when either error vanishes.
pub fn rate(previous: f64, current: f64) -> Option<f64> {
    if previous > 0.0 && current > 0.0 {
        Some((previous / current).log2())
    } else {
        None
    }
}

/// Errors and estimators for every `t` on levels `0..=max_level`.
pub fn run_study(t_list: &[f64], max_level: usize, base: &ProblemConfig, options: &SolveOptions) -> Result<Vec<StudyRecord>> {
    if max_level > 7 {
        return Err(Error::InvalidConfig(format!("at most 7 refinement levels are supported, got {max_level}")));
    }
    let rule = triangle_rule(base.volume_quad_degree.max(12))?;
    let mut meshes = vec![Mesh::unit_square(0)];
    for _ in 0..max_level {
        let next = meshes.last().unwrap().refine_uniform();
        meshes.push(next);
    }
    let mut records = Vec::new();
    for &t in t_list {
        let config = ProblemConfig { t, ..*base };
        config.validate()?;
        let exact = ExactSolution::new(t);
        let mut prev: Option<L2Errors> = None;
        for (level, mesh) in meshes.iter().enumerate() {
            let out = solve_manufactured(mesh, &config, options)?;
            let err = l2_errors(&out.solution, &exact, mesh, &rule);
            let rates = prev.map(|p| (rate(p.u, err.u), rate(p.m, err.m), rate(p.theta, err.theta)));
            records.push(StudyRecord {
                level,
                t,
                ndof: out.num_free,
                err_u: err.u,
                err_m: err.m,
                err_theta: err.theta,
                eta: out.eta,
                rate_u: rates.and_then(|r| r.0),
                rate_m: rates.and_then(|r| r.1),
                rate_theta: rates.and_then(|r| r.2),
            });
            prev = Some(err);
        }
    }
    Ok(records)
}

pub const CSV_HEADER: &str = "level,t,ndof,err_u,err_M,err_theta,eta,rate_u,rate_M,rate_theta";

fn sci(v: f64) -> String {
    format!("{v:.15e}")
}

fn opt_sci(v: Option<f64>) -> String {
    v.map(sci).unwrap_or_default()
}

pub fn write_csv(records: &[StudyRecord], mut out: impl Write) -> Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.level,
            sci(r.t),
            r.ndof,
            sci(r.err_u),
            sci(r.err_m),
            sci(r.err_theta),
            sci(r.eta),
            opt_sci(r.rate_u),
            opt_sci(r.rate_m),
            opt_sci(r.rate_theta)
        )?;
    }
    Ok(())
}

pub fn write_csv_file(records: &[StudyRecord], path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    write_csv(records, &mut w)?;
    w.flush()?;
    Ok(())
}

/// Plain-text table of errors, estimator and rates.
pub fn rate_table(records: &[StudyRecord]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:>5} {:>9} {:>8} {:>11} {:>11} {:>11} {:>11} {:>6} {:>6} {:>6} {:>7}",
        "level", "t", "ndof", "err_u", "err_M", "err_theta", "eta", "r_u", "r_M", "r_th", "err/eta"
    );
    let fmt_rate = |r: Option<f64>| r.map(|v| format!("{v:.2}")).unwrap_or_else(|| "-".into());
    for r in records {
        let _ = writeln!(
            s,
            "{:>5} {:>9.1e} {:>8} {:>11.4e} {:>11.4e} {:>11.4e} {:>11.4e} {:>6} {:>6} {:>6} {:>7.3}",
            r.level,
            r.t,
            r.ndof,
            r.err_u,
            r.err_m,
            r.err_theta,
            r.eta,
            fmt_rate(r.rate_u),
            fmt_rate(r.rate_m),
            fmt_rate(r.rate_theta),
            r.error_to_estimator()
        );
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LimitRow {
    pub t: f64,
    /// `‖u_h(t) - u_h(0)‖`.
    pub du: f64,
    /// `‖M_h(t) - M_h(0)‖`.
    pub dm: f64,
    /// `‖u(t) - u(0)‖` of the exact solution by quadrature.
    pub exact_du: f64,
    /// `t² ‖Δφ‖`.
    pub exact_du_closed: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LimitReport {
    pub level: usize,
    pub rows: Vec<LimitRow>,
}

impl LimitReport {
    /// Both discrete differences strictly decrease along the given `t` order.
    pub fn monotone(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].du < w[0].du && w[1].dm < w[0].dm)
    }

    pub fn max_closed_form_mismatch(&self) -> f64 {
        self.rows
            .iter()
            .filter(|r| r.exact_du_closed > 0.0)
            .map(|r| (r.exact_du - r.exact_du_closed).abs() / r.exact_du_closed)
            .fold(0.0, f64::max)
    }

    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "level {}", self.level);
        let _ = writeln!(s, "{:>9} {:>13} {:>13} {:>13} {:>13}", "t", "|uh(t)-uh(0)|", "|Mh(t)-Mh(0)|", "|u(t)-u(0)|", "t^2|lap phi|");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:>9.1e} {:>13.6e} {:>13.6e} {:>13.6e} {:>13.6e}",
                r.t, r.du, r.dm, r.exact_du, r.exact_du_closed
            );
        }
        s
    }
}

/// Differences between discrete solutions for `t` and for `t = 0` on one mesh.
pub fn kirchhoff_limit_check(level: usize, t_sequence: &[f64], base: &ProblemConfig, options: &SolveOptions) -> Result<LimitReport> {
    let mesh = Mesh::unit_square(level);
    let rule = triangle_rule(base.volume_quad_degree.max(12))?;
    let config0 = ProblemConfig { t: 0.0, ..*base };
    let sol0 = solve_manufactured(&mesh, &config0, options)?.solution;
    let lap = laplacian_phi_norm(&mesh, &rule);
    let exact0 = ExactSolution::new(0.0);
    let mut rows = Vec::new();
    for &t in t_sequence {
        let config = ProblemConfig { t, ..*base };
        let sol = if t == 0.0 { sol0.clone() } else { solve_manufactured(&mesh, &config, options)?.solution };
        let (mut du, mut dm) = (0.0, 0.0);
        for e in 0..mesh.num_triangles() {
            let area = mesh.geometry(e).area();
            du += area * (sol.u[e] - sol0.u[e]).powi(2);
            let d: Vec<f64> = (0..3).map(|k| sol.m[e][k] - sol0.m[e][k]).collect();
            dm += area * (d[0] * d[0] + 2.0 * d[1] * d[1] + d[2] * d[2]);
        }
        let exact = ExactSolution::new(t);
        let exact_du = l2_norm_on(&mesh, &rule, |p| exact.u(p) - exact0.u(p));
        rows.push(LimitRow { t, du: du.sqrt(), dm: dm.sqrt(), exact_du, exact_du_closed: t * t * lap });
    }
    Ok(LimitReport { level, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Point2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn level0_counts() {
        let mesh = Mesh::unit_square(0);
        let dofs = build_dof_map(&mesh, &ProblemConfig::new(0.01)).unwrap();
        assert_eq!(dofs.len(), 24 + 60);
        assert_eq!(dofs.num_constrained(), 40);
        assert_eq!(dofs.num_free(), 44);
        // interior vertex
        for c in 0..12 {
            assert!(!dofs.constrained[dofs.trace_dof(4, c / 3, c % 3)]);
        }
        // corner: u 3, M12 3, M11 2, M22 2
        let count = |field: usize| (0..3).filter(|&c| dofs.constrained[dofs.trace_dof(0, field, c)]).count();
        assert_eq!([count(FIELD_U), count(FIELD_M11), count(FIELD_M12), count(FIELD_M22)], [3, 2, 3, 2]);
    }

    #[test]
    fn bottom_midpoint_constraints() {
        let mesh = Mesh::unit_square(1);
        let v = mesh.vertices.iter().position(|p| *p == Point2::new(0.5, 0.0)).unwrap();
        let dofs = build_dof_map(&mesh, &ProblemConfig::new(0.01)).unwrap();
        let constrained: Vec<(usize, usize)> = (0..4)
            .flat_map(|f| (0..3).map(move |c| (f, c)))
            .filter(|&(f, c)| dofs.constrained[dofs.trace_dof(v, f, c)])
            .collect();
        assert_eq!(constrained, vec![(FIELD_U, VALUE), (FIELD_U, DX), (FIELD_M12, VALUE), (FIELD_M12, DX), (FIELD_M22, VALUE), (FIELD_M22, DX)]);
    }

    /// Independent recount: 10 per corner, 6 per other boundary vertex.
    #[test]
    fn free_dof_recount() {
        for level in 0..4 {
            let mesh = Mesh::unit_square(level);
            let n = 1usize << level;
            let boundary_vertices = 4 * n;
            let expected_constrained = 4 * 10 + (boundary_vertices - 4) * 6;
            for (t, nf) in [(0.1, 6), (0.0, 4)] {
                let dofs = build_dof_map(&mesh, &ProblemConfig::new(t)).unwrap();
                assert_eq!(dofs.len(), nf * mesh.num_triangles() + 12 * mesh.num_vertices());
                assert_eq!(dofs.num_constrained(), expected_constrained);
            }
            let mut clamped = ProblemConfig::new(0.0);
            clamped.bc = BoundaryCondition::Clamped;
            let dofs = build_dof_map(&mesh, &clamped).unwrap();
            assert_eq!(dofs.num_constrained(), 3 * boundary_vertices);
        }
    }

    #[test]
    fn zero_load_gives_zero_solution() {
        let mesh = Mesh::unit_square(1);
        for t in [0.0, 1e-2] {
            let out = assemble_and_solve(&mesh, &ProblemConfig::new(t), &|_| 0.0, &SolveOptions::default()).unwrap();
            assert!(out.x.iter().all(|&v| v == 0.0));
            assert_eq!(out.eta, 0.0);
        }
    }

    #[test]
    fn estimator_decreases_under_refinement() {
        let cfg = ProblemConfig::new(1e-2);
        let e0 = solve_manufactured(&Mesh::unit_square(0), &cfg, &SolveOptions::default()).unwrap().eta;
        let e1 = solve_manufactured(&Mesh::unit_square(1), &cfg, &SolveOptions::default()).unwrap().eta;
        assert!(e0 > 0.0 && e1 < e0, "{e0} {e1}");
    }

    #[test]
    fn constrained_dofs_stay_zero_and_solution_is_minimal() {
        let mesh = Mesh::unit_square(2);
        let cfg = ProblemConfig::new(1e-2);
        let exact = ExactSolution::new(cfg.t);
        let sys = GlobalSystem::build(&mesh, &cfg, &move |p| exact.load(p)).unwrap();
        let x = sys.solve(&SolveOptions::default()).unwrap();
        for (g, &c) in sys.dofs.constrained.iter().enumerate() {
            if c {
                assert_eq!(x[g], 0.0);
            }
        }
        let eta = sys.eta(&x);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..10 {
            let mut y = x.clone();
            for (g, &c) in sys.dofs.constrained.iter().enumerate() {
                if !c {
                    y[g] += 1e-4 * rng.random_range(-1.0..1.0);
                }
            }
            assert!(eta <= sys.eta(&y));
        }
        let interp = sys.interpolate_exact(&mesh, &exact).unwrap();
        assert!(eta <= sys.eta(&interp));

        // gradient of the residual functional at the solution
        let (a, b) = sys.assemble_normal();
        let xf = sys.restrict(&x);
        let ax = a.mul_vec(&xf);
        let grad = ax.iter().zip(&b).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
        let scale = a.max_abs() * xf.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(grad <= 1e-9 * scale, "{grad} vs {scale}");
    }

    #[test]
    fn element_ordering_does_not_change_solution() {
        let mesh = Mesh::unit_square(2);
        let n = mesh.num_triangles();
        let mut perm: Vec<usize> = (0..n).collect();
        perm.reverse();
        perm.swap(3, 17);
        let triangles: Vec<[usize; 3]> = perm.iter().map(|&e| mesh.triangles[e]).collect();
        let shuffled = Mesh::from_triangles(mesh.vertices.clone(), triangles, mesh.level).unwrap();
        let cfg = ProblemConfig::new(1e-2);
        let a = solve_manufactured(&mesh, &cfg, &SolveOptions::default()).unwrap();
        let b = solve_manufactured(&shuffled, &cfg, &SolveOptions::default()).unwrap();
        // normwise relative differences; the two assemblies sum element
        // contributions in different orders, so roundoff is amplified by the
        // condition number of the normal equations (about 1e6 here)
        let rel = |x: Vec<f64>, y: Vec<f64>| {
            let d = x.iter().zip(&y).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
            d / x.iter().map(|p| p * p).sum::<f64>().sqrt()
        };
        let fields = |s: &DiscreteSolution, map: &dyn Fn(usize) -> usize| {
            (0..n).flat_map(|e| {
                let e = map(e);
                [s.u[e], s.m[e][0], s.m[e][1], s.m[e][2], s.theta[e].x, s.theta[e].y]
            }).collect::<Vec<f64>>()
        };
        let mut inverse = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            inverse[old] = new;
        }
        let fa = fields(&a.solution, &|e| e);
        let fb = fields(&b.solution, &|e| inverse[e]);
        assert!(rel(fa, fb) <= 1e-9);
        assert!(rel(a.solution.trace.clone(), b.solution.trace.clone()) <= 1e-9);
        assert!((a.eta - b.eta).abs() <= 1e-12 * a.eta);
    }

    #[test]
    fn thread_count_does_not_change_solution() {
        let mesh = Mesh::unit_square(2);
        let cfg = ProblemConfig::new(1e-4);
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            pool.install(|| solve_manufactured(&mesh, &cfg, &SolveOptions::default()).unwrap())
        };
        let a = run(1);
        let b = run(4);
        assert_eq!(a.x, b.x);
        assert_eq!(a.eta, b.eta);
    }

    #[test]
    fn direct_and_cg_agree() {
        let mesh = Mesh::unit_square(2);
        let cfg = ProblemConfig::new(1e-2);
        let exact = ExactSolution::new(cfg.t);
        let sys = GlobalSystem::build(&mesh, &cfg, &move |p| exact.load(p)).unwrap();
        let d = sys.solve(&SolveOptions { method: Some(SolverMethod::Direct), cg_tol: 0.0 }).unwrap();
        let c = sys.solve(&SolveOptions { method: Some(SolverMethod::Cg), cg_tol: 1e-13 }).unwrap();
        let diff = d.iter().zip(&c).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let norm = d.iter().map(|a| a * a).sum::<f64>().sqrt();
        assert!(diff <= 1e-8 * norm, "{diff} {norm}");
    }

    #[test]
    fn csv_format() {
        let cfg = ProblemConfig::new(1e-2);
        let records = run_study(&[1e-2], 1, &cfg, &SolveOptions::default()).unwrap();
        assert_eq!(records.len(), 2);
        let mut buf = Vec::new();
        write_csv(&records, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], CSV_HEADER);
        let first: Vec<&str> = lines[1].split(',').collect();
        assert_eq!(first.len(), 10);
        assert_eq!(&first[7..], &["", "", ""]);
        assert_eq!(first[1], "1.000000000000000e-2");
        let second: Vec<&str> = lines[2].split(',').collect();
        assert!(second[7].parse::<f64>().is_ok());
        assert!(rate_table(&records).lines().count() == 3);
    }

    #[test]
    fn limit_at_zero_is_exactly_zero() {
        let rep = kirchhoff_limit_check(1, &[0.0], &ProblemConfig::new(0.0), &SolveOptions::default()).unwrap();
        assert_eq!(rep.rows[0].du, 0.0);
        assert_eq!(rep.rows[0].dm, 0.0);
    }

    #[test]
    fn clamped_only_at_zero_thickness() {
        let mesh = Mesh::unit_square(1);
        let mut cfg = ProblemConfig::new(1e-2);
        cfg.bc = BoundaryCondition::Clamped;
        assert!(solve_manufactured(&mesh, &cfg, &SolveOptions::default()).is_err());
        cfg.t = 0.0;
        let out = solve_manufactured(&mesh, &cfg, &SolveOptions::default()).unwrap();
        assert!(out.eta > 0.0);
    }
}
