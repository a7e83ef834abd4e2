//! Symmetric triangle rules and Gauss rules on edges.
//!
//! Triangle rules are the polyquad tables (symmetric, positive weights) shipped
//! with `fenris-quadrature`, mapped to the reference triangle `(0,0), (1,0), (0,1)`.
//! Edge rules are Gauss–Legendre rules mapped to `[0, 1]`.

use nalgebra::Point2;

use crate::mesh::TriangleGeometry;
use crate::{Error, Result};

/// Default polynomial exactness of volume rules.
pub const DEFAULT_VOLUME_DEGREE: usize = 14;
/// Default polynomial exactness of edge rules.
pub const DEFAULT_EDGE_DEGREE: usize = 8;

/// Strengths of the tabulated polyquad triangle rules.
const TRIANGLE_STRENGTHS: [usize; 19] = [1, 2, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16, 17, 18, 19, 20];

#[derive(Debug, Clone, PartialEq)]
pub struct QuadRule<const D: usize> {
    pub points: Vec<[f64; D]>,
    pub weights: Vec<f64>,
    /// Every polynomial of total degree up to this is integrated exactly.
    pub exactness_degree: usize,
}

pub type TriangleRule = QuadRule<2>;
pub type EdgeRule = QuadRule<1>;

impl<const D: usize> QuadRule<D> {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn integrate(&self, f: impl Fn(&[f64; D]) -> f64) -> f64 {
        self.points.iter().zip(&self.weights).map(|(p, w)| w * f(p)).sum()
    }
}

impl TriangleRule {
    /// Quadrature points and weights on a physical triangle.
    pub fn mapped(&self, tri: &TriangleGeometry) -> impl Iterator<Item = (Point2<f64>, f64)> + '_ {
        let jac = 2.0 * tri.area();
        let tri = *tri;
        self.points
            .iter()
            .zip(&self.weights)
            .map(move |(p, w)| (tri.map_reference(p[0], p[1]), w * jac))
    }
}

/// Rule on the reference triangle exact for total degree `degree`.
pub fn triangle_rule(degree: usize) -> Result<TriangleRule> {
    if !(1..=20).contains(&degree) {
        return Err(Error::UnsupportedQuadrature { domain: "triangle", degree });
    }
    let strength = *TRIANGLE_STRENGTHS
        .iter()
        .find(|&&s| s >= degree)
        .ok_or(Error::UnsupportedQuadrature { domain: "triangle", degree })?;
    let (weights, points) = fenris_quadrature::polyquad::triangle(strength)
        .map_err(|_| Error::UnsupportedQuadrature { domain: "triangle", degree })?;
    // reference (-1,-1), (1,-1), (-1,1) -> (0,0), (1,0), (0,1)
    Ok(QuadRule {
        points: points.iter().map(|p| [0.5 * (p[0] + 1.0), 0.5 * (p[1] + 1.0)]).collect(),
        weights: weights.iter().map(|w| 0.25 * w).collect(),
        exactness_degree: strength,
    })
}

/// Gauss rule on `[0, 1]` exact for degree `degree`.
pub fn edge_rule(degree: usize) -> Result<EdgeRule> {
    if !(1..=21).contains(&degree) {
        return Err(Error::UnsupportedQuadrature { domain: "edge", degree });
    }
    let n = degree / 2 + 1;
    let (weights, points) = fenris_quadrature::univariate::gauss(n);
    Ok(QuadRule {
        points: points.iter().map(|p| [0.5 * (p[0] + 1.0)]).collect(),
        weights: weights.iter().map(|w| 0.5 * w).collect(),
        exactness_degree: 2 * n - 1,
    })
}
