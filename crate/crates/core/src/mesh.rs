//! Conforming triangulations of the unit square.
//!
//! Triangles are stored counterclockwise. Local edge `k` of a triangle is the
//! edge opposite local vertex `k`, running from vertex `k+1` to vertex `k+2`
//! (indices mod 3), so that the outward normal is the clockwise rotation of
//! the edge tangent.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Point2, Vector2};

use crate::{Error, Result};

/// Side of the unit square a boundary edge lies on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Bottom,
    Right,
    Top,
    Left,
}

impl Side {
    pub fn outward_normal(self) -> Vector2<f64> {
        match self {
            Side::Bottom => Vector2::new(0.0, -1.0),
            Side::Right => Vector2::new(1.0, 0.0),
            Side::Top => Vector2::new(0.0, 1.0),
            Side::Left => Vector2::new(-1.0, 0.0),
        }
    }

    /// `true` for the sides with normal `(0, ±1)`.
    pub fn is_horizontal(self) -> bool {
        matches!(self, Side::Bottom | Side::Top)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub vertices: [usize; 2],
    /// First adjacent triangle, and the second one for interior edges.
    pub triangles: (usize, Option<usize>),
}

impl Edge {
    pub fn is_boundary(&self) -> bool {
        self.triangles.1.is_none()
    }
}

/// A triangle as three vertex coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TriangleGeometry {
    pub vertices: [Point2<f64>; 3],
}

impl TriangleGeometry {
    pub fn new(a: Point2<f64>, b: Point2<f64>, c: Point2<f64>) -> Self {
        Self { vertices: [a, b, c] }
    }

    /// The reference triangle `(0,0), (1,0), (0,1)`.
    pub fn reference() -> Self {
        Self::new(Point2::new(0.0, 0.0), Point2::new(1.0, 0.0), Point2::new(0.0, 1.0))
    }

    pub fn signed_area(&self) -> f64 {
        let [a, b, c] = self.vertices;
        0.5 * ((b.x - a.x) * (c.y - a.y) - (c.x - a.x) * (b.y - a.y))
    }

    pub fn area(&self) -> f64 {
        self.signed_area().abs()
    }

    pub fn centroid(&self) -> Point2<f64> {
        let [a, b, c] = self.vertices;
        Point2::from((a.coords + b.coords + c.coords) / 3.0)
    }

    pub fn diameter(&self) -> f64 {
        (0..3).map(|k| self.edge_length(k)).fold(0.0, f64::max)
    }

    /// Endpoints of local edge `k` (opposite vertex `k`).
    pub fn edge_endpoints(&self, k: usize) -> (Point2<f64>, Point2<f64>) {
        (self.vertices[(k + 1) % 3], self.vertices[(k + 2) % 3])
    }

    pub fn edge_length(&self, k: usize) -> f64 {
        let (a, b) = self.edge_endpoints(k);
        (b - a).norm()
    }

    /// Unit outward normal on local edge `k`.
    pub fn outward_normal(&self, k: usize) -> Result<Vector2<f64>> {
        let (a, b) = self.edge_endpoints(k);
        let d = b - a;
        let len = d.norm();
        if !(len > 0.0) {
            return Err(Error::DegenerateGeometry(format!("zero-length edge {k}")));
        }
        let sign = if self.signed_area() >= 0.0 { 1.0 } else { -1.0 };
        Ok(sign * Vector2::new(d.y, -d.x) / len)
    }

    /// Barycentric coordinates of `p`.
    pub fn barycentric(&self, p: &Point2<f64>) -> [f64; 3] {
        let [a, b, c] = self.vertices;
        let det = (b.x - a.x) * (c.y - a.y) - (c.x - a.x) * (b.y - a.y);
        let l1 = ((p.x - a.x) * (c.y - a.y) - (c.x - a.x) * (p.y - a.y)) / det;
        let l2 = ((b.x - a.x) * (p.y - a.y) - (p.x - a.x) * (b.y - a.y)) / det;
        [1.0 - l1 - l2, l1, l2]
    }

    /// Gradients of the three barycentric coordinate functions.
    pub fn barycentric_gradients(&self) -> Result<[Vector2<f64>; 3]> {
        let [a, b, c] = self.vertices;
        let det = (b.x - a.x) * (c.y - a.y) - (c.x - a.x) * (b.y - a.y);
        let scale = a.coords.norm().max(b.coords.norm()).max(c.coords.norm()).max(1e-300);
        if det.abs() <= 1e-14 * scale * scale {
            return Err(Error::DegenerateGeometry(format!(
                "triangle {:?} has area {}",
                self.vertices,
                0.5 * det
            )));
        }
        let g1 = Vector2::new(c.y - a.y, -(c.x - a.x)) / det;
        let g2 = Vector2::new(-(b.y - a.y), b.x - a.x) / det;
        Ok([-g1 - g2, g1, g2])
    }

    /// Affine image of reference coordinates `(ξ, η)`.
    pub fn map_reference(&self, xi: f64, eta: f64) -> Point2<f64> {
        let [a, b, c] = self.vertices;
        Point2::from(a.coords + xi * (b - a) + eta * (c - a))
    }

    pub fn is_degenerate(&self) -> bool {
        self.barycentric_gradients().is_err()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<Point2<f64>>,
    pub triangles: Vec<[usize; 3]>,
    pub edges: Vec<Edge>,
    /// Global edge index of each local edge.
    pub triangle_edges: Vec<[usize; 3]>,
    pub boundary_edges: Vec<(usize, Side)>,
    pub level: usize,
}

impl Mesh {
    /// Builds a mesh from vertices and counterclockwise triangles, deriving
    /// edges and boundary tags.
    pub fn from_triangles(vertices: Vec<Point2<f64>>, triangles: Vec<[usize; 3]>, level: usize) -> Result<Self> {
        let mut edges: Vec<Edge> = Vec::new();
        let mut triangle_edges = Vec::with_capacity(triangles.len());
        let mut lookup: HashMap<(usize, usize), usize> = HashMap::new();
        for (t, tri) in triangles.iter().enumerate() {
            let mut local = [0usize; 3];
            for (k, slot) in local.iter_mut().enumerate() {
                let a = tri[(k + 1) % 3];
                let b = tri[(k + 2) % 3];
                let key = (a.min(b), a.max(b));
                let idx = match lookup.get(&key) {
                    Some(&e) => {
                        let edge = &mut edges[e];
                        if edge.triangles.1.is_some() {
                            return Err(Error::UnsupportedGeometry(format!(
                                "edge {key:?} shared by more than two triangles"
                            )));
                        }
                        edge.triangles.1 = Some(t);
                        e
                    }
                    None => {
                        edges.push(Edge { vertices: [a, b], triangles: (t, None) });
                        lookup.insert(key, edges.len() - 1);
                        edges.len() - 1
                    }
                };
                *slot = idx;
            }
            triangle_edges.push(local);
        }

        let mut boundary_edges = Vec::new();
        for (e, edge) in edges.iter().enumerate() {
            if edge.is_boundary() {
                let p = vertices[edge.vertices[0]];
                let q = vertices[edge.vertices[1]];
                let side = if p.y == 0.0 && q.y == 0.0 {
                    Side::Bottom
                } else if p.x == 1.0 && q.x == 1.0 {
                    Side::Right
                } else if p.y == 1.0 && q.y == 1.0 {
                    Side::Top
                } else if p.x == 0.0 && q.x == 0.0 {
                    Side::Left
                } else {
                    return Err(Error::UnsupportedGeometry(format!(
                        "boundary edge {e} from {p} to {q} is not on the unit square boundary"
                    )));
                };
                boundary_edges.push((e, side));
            }
        }

        let mesh = Mesh { vertices, triangles, edges, triangle_edges, boundary_edges, level };
        for t in 0..mesh.triangles.len() {
            if mesh.geometry(t).signed_area() <= 0.0 {
                return Err(Error::DegenerateGeometry(format!("triangle {t} is not counterclockwise")));
            }
        }
        Ok(mesh)
    }

    /// The four triangles joining the center `(0.5, 0.5)` to the corners.
    pub fn unit_square_initial() -> Self {
        let vertices = vec![
            Point2::new(0.0, 0.0),
            Point2::new(1.0, 0.0),
            Point2::new(1.0, 1.0),
            Point2::new(0.0, 1.0),
            Point2::new(0.5, 0.5),
        ];
        let triangles = vec![[0, 1, 4], [1, 2, 4], [2, 3, 4], [3, 0, 4]];
        Self::from_triangles(vertices, triangles, 0).expect("initial mesh is valid")
    }

    /// Red refinement: every triangle is split into four congruent children
    /// through its edge midpoints. Midpoint vertices are numbered after the
    /// old vertices in edge order.
    pub fn refine_uniform(&self) -> Self {
        let nv = self.vertices.len();
        let mut vertices = self.vertices.clone();
        for edge in &self.edges {
            let a = self.vertices[edge.vertices[0]];
            let b = self.vertices[edge.vertices[1]];
            vertices.push(Point2::from((a.coords + b.coords) * 0.5));
        }
        let mut triangles = Vec::with_capacity(4 * self.triangles.len());
        for (t, tri) in self.triangles.iter().enumerate() {
            let [a, b, c] = *tri;
            let te = self.triangle_edges[t];
            // midpoint of the edge opposite local vertex k
            let mbc = nv + te[0];
            let mca = nv + te[1];
            let mab = nv + te[2];
            triangles.push([a, mab, mca]);
            triangles.push([mab, b, mbc]);
            triangles.push([mca, mbc, c]);
            triangles.push([mab, mbc, mca]);
        }
        Self::from_triangles(vertices, triangles, self.level + 1).expect("refinement preserves validity")
    }

    /// Initial mesh refined `level` times.
    pub fn unit_square(level: usize) -> Self {
        let mut mesh = Self::unit_square_initial();
        for _ in 0..level {
            mesh = mesh.refine_uniform();
        }
        mesh
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn geometry(&self, t: usize) -> TriangleGeometry {
        let [a, b, c] = self.triangles[t];
        TriangleGeometry::new(self.vertices[a], self.vertices[b], self.vertices[c])
    }

    pub fn edge_outward_normal(&self, triangle: usize, local_edge: usize) -> Result<Vector2<f64>> {
        self.geometry(triangle).outward_normal(local_edge)
    }

    pub fn total_area(&self) -> f64 {
        (0..self.num_triangles()).map(|t| self.geometry(t).area()).sum()
    }

    /// Local index of global edge `edge` in `triangle`, if adjacent.
    pub fn local_edge_index(&self, triangle: usize, edge: usize) -> Option<usize> {
        self.triangle_edges[triangle].iter().position(|&e| e == edge)
    }

    /// Sides of the square each vertex lies on.
    pub fn vertex_sides(&self) -> Vec<Vec<Side>> {
        let mut sides = vec![Vec::new(); self.num_vertices()];
        for &(e, side) in &self.boundary_edges {
            for &v in &self.edges[e].vertices {
                if !sides[v].contains(&side) {
                    sides[v].push(side);
                }
            }
        }
        sides
    }

    /// Plain text dump: `v x y` per vertex, `t i j k` per triangle.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for v in &self.vertices {
            let _ = writeln!(out, "v {} {}", v.x, v.y);
        }
        for t in &self.triangles {
            let _ = writeln!(out, "t {} {} {}", t[0], t[1], t[2]);
        }
        out
    }

    pub fn write_text(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn initial_mesh_counts_and_areas() {
        let mesh = Mesh::unit_square_initial();
        assert_eq!(mesh.num_triangles(), 4);
        assert_eq!(mesh.num_vertices(), 5);
        assert_eq!(mesh.level, 0);
        assert_abs_diff_eq!(mesh.total_area(), 1.0, epsilon = 1e-14);
        for t in 0..4 {
            assert_abs_diff_eq!(mesh.geometry(t).area(), 0.25, epsilon = 1e-15);
        }
        assert_eq!(mesh.boundary_edges.len(), 4);
    }

    #[test]
    fn refinement_counts() {
        let fine = Mesh::unit_square_initial().refine_uniform();
        assert_eq!(fine.num_triangles(), 16);
        assert_eq!(fine.num_vertices(), 13);
        assert_eq!(fine.level, 1);
        assert_abs_diff_eq!(fine.total_area(), 1.0, epsilon = 1e-14);
        for k in 0..4 {
            let mesh = Mesh::unit_square(k);
            assert_eq!(mesh.num_triangles(), 4 * 4usize.pow(k as u32));
            for edge in &mesh.edges {
                let interior = !mesh.boundary_edges.iter().any(|&(e, _)| mesh.edges[e] == *edge);
                assert_eq!(interior, edge.triangles.1.is_some());
            }
        }
    }

    #[test]
    fn boundary_tags_match_coordinates() {
        let mesh = Mesh::unit_square(2);
        assert_eq!(mesh.boundary_edges.len(), 4 * 4);
        for &(e, side) in &mesh.boundary_edges {
            for &v in &mesh.edges[e].vertices {
                let p = mesh.vertices[v];
                match side {
                    Side::Bottom => assert_eq!(p.y, 0.0),
                    Side::Right => assert_eq!(p.x, 1.0),
                    Side::Top => assert_eq!(p.y, 1.0),
                    Side::Left => assert_eq!(p.x, 0.0),
                }
            }
            let t = mesh.edges[e].triangles.0;
            let k = mesh.local_edge_index(t, e).unwrap();
            let n = mesh.edge_outward_normal(t, k).unwrap();
            assert_abs_diff_eq!((n - side.outward_normal()).norm(), 0.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn outward_normals() {
        // bottom edge y = 0 with interior above: local edge 2 of (0,0),(1,0),(0,1)
        let tri = TriangleGeometry::reference();
        let n = tri.outward_normal(2).unwrap();
        assert_abs_diff_eq!(n.x, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(n.y, -1.0, epsilon = 1e-15);
        let h = tri.outward_normal(0).unwrap();
        let s = 1.0 / 2f64.sqrt();
        assert_abs_diff_eq!(h.x, s, epsilon = 1e-15);
        assert_abs_diff_eq!(h.y, s, epsilon = 1e-15);

        let mesh = Mesh::unit_square(3);
        for t in 0..mesh.num_triangles() {
            let geo = mesh.geometry(t);
            let mut sum = Vector2::zeros();
            for k in 0..3 {
                let n = geo.outward_normal(k).unwrap();
                assert_abs_diff_eq!(n.norm(), 1.0, epsilon = 1e-14);
                sum += geo.edge_length(k) * n;
            }
            assert!(sum.norm() < 1e-13);
        }
    }

    #[test]
    fn degenerate_edge_is_an_error() {
        let p = Point2::new(0.3, 0.3);
        let tri = TriangleGeometry::new(p, p, Point2::new(1.0, 0.0));
        assert!(tri.outward_normal(2).is_err());
        assert!(tri.barycentric_gradients().is_err());
    }

    #[test]
    fn refinement_is_deterministic() {
        let a = Mesh::unit_square(3);
        let b = Mesh::unit_square(3);
        assert_eq!(a, b);
    }

    #[test]
    fn text_dump() {
        let text = Mesh::unit_square_initial().to_text();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines.len(), 9);
        assert_eq!(lines[0], "v 0 0");
        assert_eq!(lines[4], "v 0.5 0.5");
        assert_eq!(lines[5], "t 0 1 4");
    }
}
