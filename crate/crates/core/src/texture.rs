//! Harmonic texture transfer onto the lifted mesh.
//!
//! Free vertices take the mean-value-weighted average of their neighbors'
//! texture coordinates, with weights measured on the 3D one-ring. The
//! resulting fixed point discretizes `laplace(u) = laplace(v) = 0` on the
//! lifted surface, so texture stretches over the bump instead of being
//! projected onto it.

use serde::{Deserialize, Serialize};

use crate::error::{LensError, Result};
use crate::mesh::{one_ring_from, BoundaryFlag, TriMesh};
use crate::Vec2;

/// Which vertices keep their texture coordinates.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DirichletMode {
    /// Only the image rectangle is pinned; context vertices move too.
    OuterBoundary,
    /// Every vertex outside a lens is pinned.
    #[default]
    OutsideRoi,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HarmonicSolveParams {
    pub max_iterations: usize,
    /// Largest per-vertex uv change in a sweep that counts as converged.
    pub tolerance: f64,
    pub dirichlet: DirichletMode,
}

impl Default for HarmonicSolveParams {
    fn default() -> Self {
        HarmonicSolveParams {
            max_iterations: 2000,
            tolerance: 1e-9,
            dirichlet: DirichletMode::OutsideRoi,
        }
    }
}

impl HarmonicSolveParams {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(LensError::invalid("max_iterations must be at least 1"));
        }
        if !(self.tolerance > 0.0) {
            return Err(LensError::invalid("tolerance must be positive"));
        }
        Ok(())
    }
}

/// Un-normalized mean-value weights of one vertex's neighbors.
#[derive(Clone, Debug, PartialEq)]
pub struct MeanValueWeights {
    pub neighbors: Vec<usize>,
    pub weights: Vec<f64>,
    /// Edges that fell back to inverse-distance weighting because an
    /// adjacent angle reached pi.
    pub flagged: usize,
}

impl MeanValueWeights {
    pub fn total(&self) -> f64 {
        self.weights.iter().sum()
    }
}

const STRAIGHT_ANGLE_SLACK: f64 = 1e-12;

/// Mean-value weights of `v` over its closed 3D one-ring.
pub fn mean_value_weights(mesh: &TriMesh, v: usize) -> Result<MeanValueWeights> {
    let incident: Vec<usize> = mesh
        .triangles
        .iter()
        .enumerate()
        .filter(|(_, t)| t.contains(&v))
        .map(|(i, _)| i)
        .collect();
    weights_from_ring(mesh, v, &incident)
}

fn weights_from_ring(mesh: &TriMesh, v: usize, incident: &[usize]) -> Result<MeanValueWeights> {
    let ring = one_ring_from(mesh, v, incident);
    if !ring.closed || ring.neighbors.len() < 3 {
        return Err(LensError::invalid(format!(
            "vertex {v} has no closed one-ring"
        )));
    }
    let center = mesh.vertices[v].position;
    let n = ring.neighbors.len();
    let dirs: Vec<_> = ring
        .neighbors
        .iter()
        .map(|&j| mesh.vertices[j].position - center)
        .collect();
    let lengths: Vec<f64> = dirs.iter().map(|d| d.norm()).collect();
    if lengths.iter().any(|&l| !(l > 0.0)) {
        return Err(LensError::DegenerateTriangle { index: None });
    }
    // angles[j] sits between neighbor j and neighbor j + 1
    let angles: Vec<f64> = (0..n)
        .map(|j| {
            let (a, b) = (dirs[j], dirs[(j + 1) % n]);
            a.cross(&b).norm().atan2(a.dot(&b))
        })
        .collect();
    let mut weights = Vec::with_capacity(n);
    let mut flagged = 0;
    for j in 0..n {
        let (before, after) = (angles[(j + n - 1) % n], angles[j]);
        let limit = std::f64::consts::PI - STRAIGHT_ANGLE_SLACK;
        if before >= limit || after >= limit {
            flagged += 1;
            weights.push(1.0 / lengths[j]);
        } else {
            weights.push(((0.5 * before).tan() + (0.5 * after).tan()) / lengths[j]);
        }
    }
    Ok(MeanValueWeights {
        neighbors: ring.neighbors,
        weights,
        flagged,
    })
}

/// One equation of the harmonic system: `uv[vertex] = sum(w * uv[n]) / sum(w)`.
#[derive(Clone, Debug, PartialEq)]
pub struct HarmonicRow {
    pub vertex: usize,
    pub weights: MeanValueWeights,
}

pub fn is_free(mesh: &TriMesh, v: usize, mode: DirichletMode) -> bool {
    match mode {
        DirichletMode::OutsideRoi => {
            mesh.vertices[v].lens.is_some() && mesh.flags[v] != BoundaryFlag::OuterBoundary
        }
        DirichletMode::OuterBoundary => mesh.flags[v] != BoundaryFlag::OuterBoundary,
    }
}

/// The rows of the harmonic system over the free vertices, in index order.
pub fn harmonic_rows(mesh: &TriMesh, mode: DirichletMode) -> Result<Vec<HarmonicRow>> {
    let incident = mesh.vertex_triangles();
    (0..mesh.vertices.len())
        .filter(|&v| is_free(mesh, v, mode))
        .map(|v| {
            Ok(HarmonicRow {
                vertex: v,
                weights: weights_from_ring(mesh, v, &incident[v])?,
            })
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct TextureSolve {
    pub mesh: TriMesh,
    pub iterations: usize,
    /// Largest uv change during the final sweep.
    pub residual: f64,
    pub converged: bool,
    pub flagged_edges: usize,
}

/// Gauss-Seidel sweeps in vertex order until the largest update falls below
/// the tolerance.
pub fn solve_uv(mesh: &TriMesh, params: &HarmonicSolveParams) -> Result<TextureSolve> {
    params.validate()?;
    let rows = harmonic_rows(mesh, params.dirichlet)?;
    let flagged_edges: usize = rows.iter().map(|r| r.weights.flagged).sum();
    if flagged_edges > 0 {
        log::warn!("{flagged_edges} mean-value weights fell back to inverse distance");
    }
    let normalized: Vec<(usize, Vec<(usize, f64)>)> = rows
        .into_iter()
        .map(|r| {
            let total = r.weights.total();
            let entries = r
                .weights
                .neighbors
                .iter()
                .zip(&r.weights.weights)
                .map(|(&j, &w)| (j, w / total))
                .collect();
            (r.vertex, entries)
        })
        .collect();

    let mut uv: Vec<Vec2> = mesh.vertices.iter().map(|v| v.uv).collect();
    let mut iterations = 0;
    let mut residual = 0.0;
    let mut converged = normalized.is_empty();
    while !converged && iterations < params.max_iterations {
        iterations += 1;
        residual = 0.0f64;
        for (v, entries) in &normalized {
            let mut next = Vec2::zeros();
            for &(j, w) in entries {
                next += uv[j] * w;
            }
            let change = (next - uv[*v]).amax();
            residual = residual.max(change);
            uv[*v] = next;
        }
        converged = residual < params.tolerance;
    }
    if !converged {
        log::warn!(
            "texture solve stopped after {iterations} sweeps with residual {residual:.3e}"
        );
    }
    let mut out = mesh.clone();
    for (vertex, value) in out.vertices.iter_mut().zip(uv) {
        vertex.uv = value;
    }
    Ok(TextureSolve {
        mesh: out,
        iterations,
        residual,
        converged,
        flagged_edges,
    })
}
