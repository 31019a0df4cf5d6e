//! Closed-form radial magnifiers for comparison.
//!
//! Each lens maps the distance `rho` from its center to a new distance and
//! leaves the direction alone. Outside the radius every lens is the identity.

use serde::{Deserialize, Serialize};

use crate::error::{LensError, Result};
use crate::mesh::TriMesh;
use crate::raster::ImageBuffer;
use crate::Vec2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RadialLensKind {
    /// Hyperbolic magnification, slope `m` at the center, continuous at `R`.
    Fisheye,
    /// Uniform magnification in an inner disk, linear compression outside it.
    Bifocal,
    /// Uniform magnification cut off at `R`; the ring beyond is occluded.
    ZoomIn,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadialLens {
    pub kind: RadialLensKind,
    pub center: [f64; 2],
    pub radius: f64,
    pub magnification: f64,
}

impl RadialLens {
    pub fn new(kind: RadialLensKind, center: Vec2, radius: f64, magnification: f64) -> Self {
        RadialLens {
            kind,
            center: [center.x, center.y],
            radius,
            magnification,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0) || !self.radius.is_finite() {
            return Err(LensError::invalid("baseline radius must be positive"));
        }
        if !(self.magnification > 1.0) || !self.magnification.is_finite() {
            return Err(LensError::invalid("baseline magnification must exceed 1"));
        }
        Ok(())
    }

    fn center(&self) -> Vec2 {
        Vec2::new(self.center[0], self.center[1])
    }

    /// Input radius of the bifocal lens's uniformly magnified disk.
    pub fn bifocal_inner_radius(&self) -> f64 {
        self.radius / (2.0 * self.magnification)
    }

    /// Radial profile `rho -> rho'`.
    pub fn map_radius(&self, rho: f64) -> f64 {
        let (r, m) = (self.radius, self.magnification);
        if rho > r {
            return rho;
        }
        match self.kind {
            RadialLensKind::Fisheye => {
                let s = rho / r;
                r * m * s / (1.0 + (m - 1.0) * s)
            }
            RadialLensKind::Bifocal => {
                let inner = self.bifocal_inner_radius();
                if rho <= inner {
                    m * rho
                } else {
                    let t = (rho - inner) / (r - inner);
                    0.5 * r + t * 0.5 * r
                }
            }
            RadialLensKind::ZoomIn => m * rho,
        }
    }

    /// Source radius shown at output radius `rho'`.
    pub fn unmap_radius(&self, rho: f64) -> f64 {
        let (r, m) = (self.radius, self.magnification);
        match self.kind {
            RadialLensKind::Fisheye if rho <= r => {
                let s = rho / r;
                r * s / (m - (m - 1.0) * s)
            }
            RadialLensKind::Bifocal if rho <= r => {
                if rho <= 0.5 * r {
                    rho / m
                } else {
                    let inner = self.bifocal_inner_radius();
                    inner + (rho - 0.5 * r) / (0.5 * r) * (r - inner)
                }
            }
            RadialLensKind::ZoomIn if rho <= m * r => rho / m,
            _ => rho,
        }
    }

    pub fn warp_point(&self, p: Vec2) -> Vec2 {
        self.radial(p, |rho| self.map_radius(rho))
    }

    pub fn unwarp_point(&self, p: Vec2) -> Vec2 {
        self.radial(p, |rho| self.unmap_radius(rho))
    }

    fn radial(&self, p: Vec2, f: impl Fn(f64) -> f64) -> Vec2 {
        let c = self.center();
        let d = p - c;
        let rho = d.norm();
        if rho == 0.0 {
            return p;
        }
        c + d * (f(rho) / rho)
    }
}

pub fn warp_vertices(mesh: &TriMesh, lens: &RadialLens) -> Vec<Vec2> {
    mesh.vertices.iter().map(|v| lens.warp_point(v.xy())).collect()
}

/// Renders the lens by pulling every output pixel back to its source.
pub fn render_baseline(texture: &ImageBuffer, lens: &RadialLens) -> Result<ImageBuffer> {
    lens.validate()?;
    let (w, h) = (texture.width(), texture.height());
    let mut out = ImageBuffer::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let q = Vec2::new(x as f64 + 0.5, y as f64 + 0.5);
            let p = lens.unwarp_point(q);
            out.put(x, y, texture.sample_bilinear(p.x - 0.5, p.y - 0.5));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lenses() -> Vec<RadialLens> {
        [RadialLensKind::Fisheye, RadialLensKind::Bifocal, RadialLensKind::ZoomIn]
            .into_iter()
            .map(|k| RadialLens::new(k, Vec2::new(10.0, 20.0), 8.0, 2.5))
            .collect()
    }

    #[test]
    fn center_is_fixed() {
        for lens in lenses() {
            assert_eq!(lens.warp_point(Vec2::new(10.0, 20.0)), Vec2::new(10.0, 20.0));
        }
    }

    #[test]
    fn continuous_at_the_rim() {
        for lens in &lenses()[..2] {
            assert!((lens.map_radius(8.0) - 8.0).abs() < 1e-12);
            assert!((lens.map_radius(8.0 - 1e-9) - 8.0).abs() < 1e-8);
        }
        let zoom = lenses()[2];
        assert!((zoom.map_radius(8.0 - 1e-9) - 20.0).abs() < 1e-6);
        assert_eq!(zoom.map_radius(8.0 + 1e-9), 8.0 + 1e-9);
    }

    #[test]
    fn fisheye_center_slope() {
        let lens = lenses()[0];
        let h = 1e-6 * lens.radius;
        let slope = lens.map_radius(h) / h;
        assert!((slope - lens.magnification).abs() < 1e-5);
    }

    #[test]
    fn monotone_and_invertible() {
        for lens in lenses() {
            let mut last = -1.0;
            for k in 0..=2000 {
                let rho = k as f64 * 0.005;
                let out = lens.map_radius(rho);
                if lens.kind != RadialLensKind::ZoomIn || rho <= 8.0 {
                    assert!(out >= last);
                }
                last = out;
                if lens.kind != RadialLensKind::ZoomIn || rho <= 8.0 {
                    assert!((lens.unmap_radius(out) - rho).abs() < 1e-9, "{lens:?} {rho}");
                }
            }
        }
    }

    #[test]
    fn identity_outside() {
        for lens in lenses() {
            let p = Vec2::new(30.0, 30.0);
            assert_eq!(lens.warp_point(p), p);
        }
    }

    #[test]
    fn validation() {
        let mut lens = lenses()[0];
        lens.magnification = 1.0;
        assert!(lens.validate().is_err());
        lens.magnification = 2.0;
        lens.radius = 0.0;
        assert!(lens.validate().is_err());
    }
}
