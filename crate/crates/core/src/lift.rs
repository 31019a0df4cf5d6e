//! Height profiles and the lift of a marked mesh into 3D.

use serde::{Deserialize, Serialize};

use crate::error::{LensError, Result};
use crate::lens::MarkedMesh;
use crate::mesh::{self, TriMesh};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ProfileKind {
    #[default]
    Gaussian,
    Sphere,
}

/// How the Gaussian is parameterized over `d / d_max`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ProfileMode {
    /// Center-peaked, shifted and rescaled so the height is exactly `h0` at
    /// the center and exactly zero on the region boundary.
    #[default]
    Normalized,
    /// `h0 * exp(-(1 - d/d_max)^2)`: peaks on the boundary.
    Literal,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeightProfile {
    pub kind: ProfileKind,
    pub h0: f64,
    #[serde(default)]
    pub mode: ProfileMode,
}

impl HeightProfile {
    pub fn gaussian(h0: f64) -> Self {
        HeightProfile {
            kind: ProfileKind::Gaussian,
            h0,
            mode: ProfileMode::Normalized,
        }
    }

    pub fn sphere(h0: f64) -> Self {
        HeightProfile {
            kind: ProfileKind::Sphere,
            h0,
            mode: ProfileMode::Normalized,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.h0 >= 0.0 && self.h0.is_finite()) {
            return Err(LensError::invalid(format!(
                "h0 must be finite and non-negative, got {}",
                self.h0
            )));
        }
        Ok(())
    }
}

/// Height of a vertex at distance `d` from the lens center or medial path.
pub fn evaluate_height(profile: &HeightProfile, d: f64, d_max: f64) -> Result<f64> {
    if !(d_max > 0.0) {
        return Err(LensError::invalid(format!("d_max must be positive, got {d_max}")));
    }
    if !(d >= 0.0) {
        return Err(LensError::invalid(format!("distance must be non-negative, got {d}")));
    }
    if d > d_max {
        return Ok(0.0);
    }
    let h0 = profile.h0;
    let t = d / d_max;
    let z = match (profile.kind, profile.mode) {
        (ProfileKind::Gaussian, ProfileMode::Normalized) => {
            let floor = (-1.0f64).exp();
            h0 * ((-t * t).exp() - floor) / (1.0 - floor)
        }
        (ProfileKind::Gaussian, ProfileMode::Literal) => h0 * (-(1.0 - t).powi(2)).exp(),
        (ProfileKind::Sphere, _) => (h0 / d_max) * (d_max * d_max - d * d).max(0.0).sqrt(),
    };
    Ok(z.clamp(0.0, h0))
}

/// Lifts every lens vertex to its profile height; all other vertices are
/// left untouched.
pub fn lift_mesh(marked: &MarkedMesh) -> Result<MarkedMesh> {
    let mut out = marked.clone();
    for v in &mut out.mesh.vertices {
        if let Some(l) = v.lens {
            let region = &marked.regions[l];
            let z = evaluate_height(&region.spec.profile, v.roi_distance, region.d_max)?;
            v.position.z = z;
            v.height = z;
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RefineParams {
    /// Triangles whose 3D/2D area ratio exceeds this are split.
    pub stretch_threshold: f64,
    /// Triangles with a smaller 3D angle (degrees) are split.
    pub min_angle_deg: f64,
}

impl Default for RefineParams {
    fn default() -> Self {
        RefineParams {
            stretch_threshold: 4.0,
            min_angle_deg: 10.0,
        }
    }
}

/// Ratio of lifted to planar area.
pub fn stretch_ratio(mesh: &TriMesh, t: usize) -> f64 {
    let planar = mesh.signed_area_2d(t).abs();
    mesh.area_3d(t) / planar
}

pub fn min_angle_3d(mesh: &TriMesh, t: usize) -> f64 {
    let p = mesh.triangle_xyz(t);
    (0..3)
        .map(|k| {
            let a = p[(k + 1) % 3] - p[k];
            let b = p[(k + 2) % 3] - p[k];
            a.cross(&b).norm().atan2(a.dot(&b))
        })
        .fold(f64::INFINITY, f64::min)
}

/// Triangles that one refinement pass would split.
pub fn refinement_candidates(mesh: &TriMesh, params: &RefineParams) -> Vec<usize> {
    let min_angle = params.min_angle_deg.to_radians();
    (0..mesh.num_triangles())
        .filter(|&t| stretch_ratio(mesh, t) > params.stretch_threshold || min_angle_3d(mesh, t) < min_angle)
        .collect()
}

/// One pass of subdivision over over-stretched triangles. New vertices get
/// their lens membership and height re-evaluated from the profile; the other
/// attributes are interpolated.
pub fn adaptive_refine(lifted: &MarkedMesh, params: &RefineParams) -> Result<MarkedMesh> {
    if !(params.stretch_threshold > 1.0) {
        return Err(LensError::invalid("stretch threshold must exceed 1"));
    }
    let selected = refinement_candidates(&lifted.mesh, params);
    if selected.is_empty() {
        return Ok(lifted.clone());
    }
    let (mut mesh, parents) = mesh::subdivide_with_parents(&lifted.mesh, &selected)?;
    let first_new = lifted.mesh.num_vertices();
    for (k, &(a, b)) in parents.iter().enumerate() {
        let (va, vb) = (&lifted.mesh.vertices[a], &lifted.mesh.vertices[b]);
        let candidates = [va.lens, vb.lens];
        let vertex = &mut mesh.vertices[first_new + k];
        vertex.lens = None;
        vertex.roi_distance = 0.0;
        vertex.height = 0.0;
        vertex.position.z = 0.0;
        for l in candidates.into_iter().flatten() {
            let region = &lifted.regions[l];
            let pick = |v: &crate::mesh::Vertex| {
                if v.lens == Some(l) {
                    v.roi_distance
                } else {
                    region.d_max
                }
            };
            let interpolated = 0.5 * (pick(va) + pick(vb));
            let boundary = mesh.flags[first_new + k] == crate::mesh::BoundaryFlag::OuterBoundary;
            if boundary {
                break;
            }
            if let Some(d) = region.classify(vertex.xy(), interpolated) {
                let z = evaluate_height(&region.spec.profile, d, region.d_max)?;
                vertex.lens = Some(l);
                vertex.roi_distance = d;
                vertex.height = z;
                vertex.position.z = z;
                break;
            }
        }
    }
    mesh.refresh_roi_flags();
    let mut regions = lifted.regions.clone();
    for (l, region) in regions.iter_mut().enumerate() {
        region.inside = mesh.vertices.iter().filter(|v| v.lens == Some(l)).count();
    }
    Ok(MarkedMesh { mesh, regions })
}
