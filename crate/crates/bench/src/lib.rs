//! Fixtures shared by the benchmarks.

use geolens_core::lens::mark_roi;
use geolens_core::lift::{adaptive_refine, lift_mesh, RefineParams};
use geolens_core::mesh::build_grid_mesh;
use geolens_core::texture::solve_uv;
use geolens_core::{HarmonicSolveParams, HeightProfile, LensSpec, TriMesh, Vec2};

/// A `n x n` mesh over a `4n` pixel square with one centered Gaussian lens
/// (`h0` equal to the radius), lifted and refined but not yet re-textured.
pub fn lifted(n: usize) -> TriMesh {
    let side = 4 * n as u32;
    let mesh = build_grid_mesh(side, side, n, n).expect("grid");
    let r = 0.16 * f64::from(side);
    let c = 0.5 * f64::from(side);
    let spec = LensSpec::circle(Vec2::new(c, c), r, HeightProfile::gaussian(r));
    let marked = mark_roi(&mesh, &[spec]).expect("roi");
    let lifted = lift_mesh(&marked).expect("lift");
    adaptive_refine(&lifted, &RefineParams::default()).expect("refine").mesh
}

/// [`lifted`] with texture coordinates solved, ready to flatten.
pub fn textured(n: usize) -> TriMesh {
    solve_uv(&lifted(n), &HarmonicSolveParams::default()).expect("uv").mesh
}
