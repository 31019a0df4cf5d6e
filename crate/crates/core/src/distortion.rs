//! Per-triangle shape distortion and its color-coded map.
//!
//! A triangle's distortion is the weighted squared mismatch between its
//! final edges and its metric-mapped reference edges, the same summand the
//! flattening solver minimizes.

use serde::Serialize;

use crate::error::{LensError, Result};
use crate::flatten::{
    blended_metric, edge_weights, standardize_mesh, triangle_energies, triangle_jacobian,
    MetricMatrix, StandardTriangle,
};
use crate::mesh::TriMesh;
use crate::raster::{raster_triangles, ImageBuffer};
use crate::Vec2;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DistortionReport {
    pub per_triangle: Vec<f64>,
    pub max: f64,
    pub mean: f64,
    pub total: f64,
}

impl DistortionReport {
    pub fn from_values(per_triangle: Vec<f64>) -> Self {
        let total: f64 = per_triangle.iter().sum();
        let max = per_triangle.iter().copied().fold(0.0, f64::max);
        let mean = if per_triangle.is_empty() {
            0.0
        } else {
            total / per_triangle.len() as f64
        };
        DistortionReport {
            per_triangle,
            max,
            mean,
            total,
        }
    }

    /// `triangle_index,E_i` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("triangle_index,E_i\n");
        for (i, e) in self.per_triangle.iter().enumerate() {
            out.push_str(&format!("{i},{e}\n"));
        }
        out
    }

    /// Paints each triangle of `mesh` from blue (zero) to red (`scale`, or
    /// the report's maximum when `None`).
    pub fn heatmap(&self, mesh: &TriMesh, dims: (u32, u32), scale: Option<f64>) -> Result<ImageBuffer> {
        if self.per_triangle.len() != mesh.num_triangles() {
            return Err(LensError::DimensionMismatch {
                expected: mesh.num_triangles(),
                found: self.per_triangle.len(),
            });
        }
        let top = scale.unwrap_or(self.max);
        let positions: Vec<Vec2> = mesh.vertices.iter().map(|v| v.xy()).collect();
        let (img, _) = raster_triangles(&positions, &mesh.triangles, dims, |t, _| {
            let x = if top > 0.0 { self.per_triangle[t] / top } else { 0.0 };
            heat_color(x)
        });
        Ok(img)
    }
}

/// Blue, cyan, green, yellow, red across `[0, 1]`.
pub fn heat_color(x: f64) -> [u8; 4] {
    let x = if x.is_finite() { x.clamp(0.0, 1.0) } else { 1.0 };
    let stops: [[f64; 3]; 5] = [
        [0.0, 0.0, 255.0],
        [0.0, 255.0, 255.0],
        [0.0, 255.0, 0.0],
        [255.0, 255.0, 0.0],
        [255.0, 0.0, 0.0],
    ];
    let s = x * 4.0;
    let k = (s.floor() as usize).min(3);
    let f = s - k as f64;
    let mut c = [0u8; 4];
    for i in 0..3 {
        c[i] = (stops[k][i] * (1.0 - f) + stops[k + 1][i] * f).round() as u8;
    }
    c[3] = 255;
    c
}

/// Distortion of a flattened mesh against the references and metrics the
/// solver finished with.
pub fn measure_distortion(
    result: &TriMesh,
    standards: &[StandardTriangle],
    metrics: &[MetricMatrix],
    weights: &[[f64; 3]],
) -> Result<DistortionReport> {
    let n = result.num_triangles();
    for found in [standards.len(), metrics.len(), weights.len()] {
        if found != n {
            return Err(LensError::DimensionMismatch { expected: n, found });
        }
    }
    let positions: Vec<Vec2> = result.vertices.iter().map(|v| v.xy()).collect();
    Ok(DistortionReport::from_values(triangle_energies(
        &result.triangles,
        &positions,
        standards,
        weights,
        metrics,
    )))
}

/// Distortion of an arbitrary per-vertex warp of a flat mesh, treating the
/// input triangles as references and each warped triangle's own blended
/// Jacobian as its metric.
pub fn measure_baseline_distortion(
    input: &TriMesh,
    warped: &[Vec2],
    alpha: f64,
) -> Result<DistortionReport> {
    if warped.len() != input.num_vertices() {
        return Err(LensError::DimensionMismatch {
            expected: input.num_vertices(),
            found: warped.len(),
        });
    }
    let mut flat = input.clone();
    for v in &mut flat.vertices {
        v.position.z = 0.0;
        v.height = 0.0;
    }
    let standards = standardize_mesh(&flat)?;
    let weights = edge_weights(&flat, &standards)?;
    let metrics = flat
        .triangles
        .iter()
        .zip(&standards)
        .map(|(tri, st)| {
            let p = [warped[tri[0]], warped[tri[1]], warped[tri[2]]];
            Ok(blended_metric(&triangle_jacobian(&p, st)?, alpha))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DistortionReport::from_values(triangle_energies(
        &flat.triangles,
        warped,
        &standards,
        &weights,
        &metrics,
    )))
}

/// Linear magnification of the texture around `vertex`: the square root of
/// output area over texture area (in texture pixels) summed over its
/// incident triangles.
pub fn local_magnification(mesh: &TriMesh, texture_dims: (u32, u32), vertex: usize) -> f64 {
    let scale = Vec2::new(f64::from(texture_dims.0), f64::from(texture_dims.1));
    let (mut out, mut tex) = (0.0, 0.0);
    for (t, tri) in mesh.triangles.iter().enumerate() {
        if !tri.contains(&vertex) {
            continue;
        }
        out += mesh.signed_area_2d(t).abs();
        let uv = tri.map(|v| mesh.vertices[v].uv.component_mul(&scale));
        tex += crate::mesh::signed_area(uv[0], uv[1], uv[2]).abs();
    }
    if tex > 0.0 {
        (out / tex).sqrt()
    } else {
        1.0
    }
}
