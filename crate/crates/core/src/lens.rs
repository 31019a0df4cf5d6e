//! Lens regions and their per-vertex distance fields.
//!
//! Circle lenses measure plain Euclidean distance to the center. Polygon
//! lenses use a discrete medial proxy: inside vertices whose distance to the
//! outline is a local maximum over their one-ring are medial, and every
//! other inside vertex takes its shortest edge-path length to the nearest
//! medial vertex.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{LensError, Result};
use crate::lift::HeightProfile;
use crate::mesh::{BoundaryFlag, TriMesh};
use crate::Vec2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LensShape {
    Circle { center: [f64; 2], radius: f64 },
    Polygon { points: Vec<[f64; 2]> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LensSpec {
    pub shape: LensShape,
    pub profile: HeightProfile,
}

impl LensSpec {
    pub fn circle(center: Vec2, radius: f64, profile: HeightProfile) -> Self {
        LensSpec {
            shape: LensShape::Circle {
                center: [center.x, center.y],
                radius,
            },
            profile,
        }
    }

    pub fn polygon(points: &[Vec2], profile: HeightProfile) -> Self {
        LensSpec {
            shape: LensShape::Polygon {
                points: points.iter().map(|p| [p.x, p.y]).collect(),
            },
            profile,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match &self.shape {
            LensShape::Circle { center, radius } => {
                if !(*radius > 0.0 && radius.is_finite()) {
                    return Err(LensError::invalid(format!(
                        "lens radius must be positive, got {radius}"
                    )));
                }
                if !center.iter().all(|c| c.is_finite()) {
                    return Err(LensError::invalid("lens center must be finite"));
                }
            }
            LensShape::Polygon { points } => {
                let pts = to_vec2(points);
                validate_polygon(&pts)?;
            }
        }
        self.profile.validate()
    }
}

fn to_vec2(points: &[[f64; 2]]) -> Vec<Vec2> {
    points.iter().map(|p| Vec2::new(p[0], p[1])).collect()
}

/// Per-vertex distances for one lens.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceField {
    pub distance: Vec<f64>,
    pub inside: Vec<bool>,
    pub d_max: f64,
    /// Distance to the outline for polygon lenses (empty for circles).
    pub boundary_distance: Vec<f64>,
    /// Medial-proxy markers for polygon lenses (empty for circles).
    pub medial: Vec<bool>,
}

impl DistanceField {
    pub fn inside_count(&self) -> usize {
        self.inside.iter().filter(|&&b| b).count()
    }
}

/// A lens after its region has been marked on a mesh.
#[derive(Clone, Debug, PartialEq)]
pub struct LensRegion {
    pub spec: LensSpec,
    pub d_max: f64,
    pub inside: usize,
}

impl LensRegion {
    /// Distance and membership of an arbitrary point, used when new vertices
    /// appear after marking. `interpolated` is the blend of the parent
    /// vertices' distances (polygon lenses only).
    pub(crate) fn classify(&self, p: Vec2, interpolated: f64) -> Option<f64> {
        match &self.spec.shape {
            LensShape::Circle { center, radius } => {
                let d = (p - Vec2::new(center[0], center[1])).norm();
                (d <= radius * (1.0 + INSIDE_SLACK)).then_some(d)
            }
            LensShape::Polygon { points } => {
                point_in_polygon(p, &to_vec2(points)).then_some(interpolated.min(self.d_max))
            }
        }
    }
}

/// A mesh whose vertices carry lens membership and distances.
#[derive(Clone, Debug, PartialEq)]
pub struct MarkedMesh {
    pub mesh: TriMesh,
    pub regions: Vec<LensRegion>,
}

const INSIDE_SLACK: f64 = 1e-12;

pub fn roi_distance_field(mesh: &TriMesh, lens: &LensSpec) -> Result<DistanceField> {
    lens.validate()?;
    let field = match &lens.shape {
        LensShape::Circle { center, radius } => circle_field(mesh, Vec2::new(center[0], center[1]), *radius),
        LensShape::Polygon { points } => polygon_field(mesh, &to_vec2(points)),
    };
    if field.inside_count() == 0 {
        return Err(LensError::EmptyRoi);
    }
    Ok(field)
}

fn circle_field(mesh: &TriMesh, center: Vec2, radius: f64) -> DistanceField {
    let mut distance = Vec::with_capacity(mesh.num_vertices());
    let mut inside = Vec::with_capacity(mesh.num_vertices());
    for (v, vert) in mesh.vertices.iter().enumerate() {
        let d = (vert.xy() - center).norm();
        distance.push(d);
        inside.push(d <= radius * (1.0 + INSIDE_SLACK) && !mesh.is_fixed_boundary(v));
    }
    DistanceField {
        distance,
        inside,
        d_max: radius,
        boundary_distance: Vec::new(),
        medial: Vec::new(),
    }
}

fn polygon_field(mesh: &TriMesh, poly: &[Vec2]) -> DistanceField {
    let n = mesh.num_vertices();
    let inside: Vec<bool> = (0..n)
        .map(|v| !mesh.is_fixed_boundary(v) && point_in_polygon(mesh.vertices[v].xy(), poly))
        .collect();
    let boundary_distance: Vec<f64> = (0..n)
        .map(|v| {
            if inside[v] {
                distance_to_outline(mesh.vertices[v].xy(), poly)
            } else {
                0.0
            }
        })
        .collect();
    let adj = mesh.vertex_neighbors();
    let medial: Vec<bool> = (0..n)
        .map(|v| {
            inside[v]
                && adj[v]
                    .iter()
                    .all(|&u| !inside[u] || boundary_distance[u] <= boundary_distance[v])
        })
        .collect();

    let mut distance = vec![f64::INFINITY; n];
    let mut heap = BinaryHeap::new();
    for v in (0..n).filter(|&v| medial[v]) {
        distance[v] = 0.0;
        heap.push(Pending { dist: 0.0, vertex: v });
    }
    while let Some(Pending { dist, vertex }) = heap.pop() {
        if dist > distance[vertex] {
            continue;
        }
        let p = mesh.vertices[vertex].xy();
        for &u in &adj[vertex] {
            if !inside[u] {
                continue;
            }
            let nd = dist + (mesh.vertices[u].xy() - p).norm();
            if nd < distance[u] {
                distance[u] = nd;
                heap.push(Pending { dist: nd, vertex: u });
            }
        }
    }
    for (d, &ins) in distance.iter_mut().zip(&inside) {
        if !ins {
            *d = 0.0;
        }
    }
    let mut d_max = distance.iter().copied().fold(0.0, f64::max);
    if d_max <= 0.0 {
        // every inside vertex is medial; fall back to the outline distance
        d_max = boundary_distance.iter().copied().fold(0.0, f64::max);
    }
    DistanceField {
        distance,
        inside,
        d_max,
        boundary_distance,
        medial,
    }
}

#[derive(PartialEq)]
struct Pending {
    dist: f64,
    vertex: usize,
}

impl Eq for Pending {}

impl Ord for Pending {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.vertex.cmp(&self.vertex))
    }
}

impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Marks every lens region on the mesh.
///
/// Inside vertices receive their lens index and distance; outside vertices
/// sharing an edge with an inside vertex become `RoiBoundary`. Lenses may not
/// share vertices.
pub fn mark_roi(mesh: &TriMesh, lenses: &[LensSpec]) -> Result<MarkedMesh> {
    if lenses.is_empty() {
        return Err(LensError::invalid("at least one lens is required"));
    }
    let mut out = mesh.clone();
    for v in &mut out.vertices {
        v.lens = None;
        v.roi_distance = 0.0;
    }
    let mut regions = Vec::with_capacity(lenses.len());
    for (li, lens) in lenses.iter().enumerate() {
        let field = roi_distance_field(mesh, lens)?;
        for (v, vert) in out.vertices.iter_mut().enumerate() {
            if !field.inside[v] {
                continue;
            }
            if let Some(prev) = vert.lens {
                return Err(LensError::OverlappingLenses {
                    first: prev,
                    second: li,
                });
            }
            vert.lens = Some(li);
            vert.roi_distance = field.distance[v];
        }
        regions.push(LensRegion {
            spec: lens.clone(),
            d_max: field.d_max,
            inside: field.inside_count(),
        });
    }
    for f in &mut out.flags {
        if *f == BoundaryFlag::RoiBoundary {
            *f = BoundaryFlag::Interior;
        }
    }
    out.refresh_roi_flags();
    Ok(MarkedMesh { mesh: out, regions })
}

/// Even-odd rule.
pub fn point_in_polygon(p: Vec2, poly: &[Vec2]) -> bool {
    let mut inside = false;
    let n = poly.len();
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (poly[i], poly[j]);
        if (a.y > p.y) != (b.y > p.y) {
            let x = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
            if p.x < x {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

pub fn distance_to_outline(p: Vec2, poly: &[Vec2]) -> f64 {
    let n = poly.len();
    (0..n)
        .map(|i| point_segment_distance(p, poly[i], poly[(i + 1) % n]))
        .fold(f64::INFINITY, f64::min)
}

fn point_segment_distance(p: Vec2, a: Vec2, b: Vec2) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    let t = if len2 > 0.0 {
        ((p - a).dot(&ab) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (p - (a + ab * t)).norm()
}

fn cross(a: Vec2, b: Vec2) -> f64 {
    a.x * b.y - a.y * b.x
}

fn segments_intersect(p1: Vec2, p2: Vec2, q1: Vec2, q2: Vec2) -> bool {
    let d1 = cross(q2 - q1, p1 - q1);
    let d2 = cross(q2 - q1, p2 - q1);
    let d3 = cross(p2 - p1, q1 - p1);
    let d4 = cross(p2 - p1, q2 - p1);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    let on = |a: Vec2, b: Vec2, p: Vec2, d: f64| {
        d == 0.0
            && p.x >= a.x.min(b.x)
            && p.x <= a.x.max(b.x)
            && p.y >= a.y.min(b.y)
            && p.y <= a.y.max(b.y)
    };
    on(q1, q2, p1, d1) || on(q1, q2, p2, d2) || on(p1, p2, q1, d3) || on(p1, p2, q2, d4)
}

/// Rejects polygons with fewer than three vertices, zero area or crossing
/// edges.
pub fn validate_polygon(poly: &[Vec2]) -> Result<()> {
    let n = poly.len();
    if n < 3 {
        return Err(LensError::invalid(format!(
            "polygon needs at least 3 vertices, got {n}"
        )));
    }
    if poly.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
        return Err(LensError::invalid("polygon vertices must be finite"));
    }
    let area: f64 = (0..n).map(|i| cross(poly[i], poly[(i + 1) % n])).sum::<f64>() * 0.5;
    if area.abs() <= 1e-12 {
        return Err(LensError::invalid("polygon has zero area"));
    }
    for i in 0..n {
        for j in i + 1..n {
            let adjacent = j == i + 1 || (i == 0 && j == n - 1);
            if adjacent {
                continue;
            }
            if segments_intersect(poly[i], poly[(i + 1) % n], poly[j], poly[(j + 1) % n]) {
                return Err(LensError::invalid(format!(
                    "polygon edges {i} and {j} intersect"
                )));
            }
        }
    }
    Ok(())
}

/// Reads one `x y` pair per line; the loop closes implicitly. Blank lines
/// and `#` comments are skipped.
pub fn load_polygon(path: &Path) -> Result<Vec<Vec2>> {
    let text = std::fs::read_to_string(path).map_err(|e| LensError::io(path, e))?;
    parse_polygon(&text, path)
}

pub fn parse_polygon(text: &str, origin: &Path) -> Result<Vec<Vec2>> {
    let mut points = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e: std::num::ParseFloatError| LensError::Parse {
                path: origin.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })?;
        if vals.len() != 2 {
            return Err(LensError::Parse {
                path: origin.to_path_buf(),
                line: i + 1,
                message: format!("expected `x y`, found {} values", vals.len()),
            });
        }
        points.push(Vec2::new(vals[0], vals[1]));
    }
    Ok(points)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lift::HeightProfile;
    use crate::mesh::{build_grid_mesh, Vertex};

    fn gauss(h0: f64) -> HeightProfile {
        HeightProfile::gaussian(h0)
    }

    #[test]
    fn circle_distance_three_four_five() {
        // A fan whose hub is at the circle center and whose boundary ring
        // holds the vertex (0.6, 0.8).
        let mut mesh = build_grid_mesh(4, 4, 5, 5).unwrap();
        for v in &mut mesh.vertices {
            v.position.x -= 2.0;
            v.position.y -= 2.0;
        }
        mesh.vertices[7] = Vertex::flat(0.6, 0.8, 0.5, 0.5);
        let lens = LensSpec::circle(Vec2::new(0.0, 0.0), 1.0, gauss(1.0));
        let f = roi_distance_field(&mesh, &lens).unwrap();
        assert!((f.distance[7] - 1.0).abs() < 1e-15);
        assert!(f.inside[7]);
        assert_eq!(f.distance[12], 0.0);
        assert!(f.inside[12]);
        assert_eq!(f.d_max, 1.0);
    }

    #[test]
    fn circle_inside_count_matches_scan() {
        let mesh = build_grid_mesh(100, 100, 11, 11).unwrap();
        // spacing 10; radius of two cells around the center vertex
        let c = Vec2::new(50.0, 50.0);
        let lens = LensSpec::circle(c, 20.0, gauss(10.0));
        let f = roi_distance_field(&mesh, &lens).unwrap();
        let mut expected = 0;
        for i in 0..11 {
            for j in 0..11 {
                let (x, y) = (j as f64 * 10.0, i as f64 * 10.0);
                let on_edge = i == 0 || j == 0 || i == 10 || j == 10;
                if !on_edge && ((x - 50.0).powi(2) + (y - 50.0).powi(2)) <= 400.0 {
                    expected += 1;
                }
            }
        }
        assert_eq!(expected, 13);
        assert_eq!(f.inside_count(), expected);
    }

    #[test]
    fn lens_outside_image_is_empty() {
        let mesh = build_grid_mesh(100, 100, 11, 11).unwrap();
        let lens = LensSpec::circle(Vec2::new(500.0, 500.0), 20.0, gauss(10.0));
        assert!(matches!(mark_roi(&mesh, &[lens]), Err(LensError::EmptyRoi)));
    }

    #[test]
    fn circle_covering_everything_leaves_outer_ring() {
        let mesh = build_grid_mesh(100, 100, 6, 6).unwrap();
        let lens = LensSpec::circle(Vec2::new(50.0, 50.0), 1000.0, gauss(10.0));
        let marked = mark_roi(&mesh, &[lens]).unwrap();
        for (v, vert) in marked.mesh.vertices.iter().enumerate() {
            let outer = marked.mesh.flags[v] == BoundaryFlag::OuterBoundary;
            assert_eq!(vert.lens.is_none(), outer);
        }
        assert!(!marked.mesh.flags.contains(&BoundaryFlag::RoiBoundary));
    }

    #[test]
    fn roi_boundary_ring() {
        let mesh = build_grid_mesh(100, 100, 11, 11).unwrap();
        let lens = LensSpec::circle(Vec2::new(50.0, 50.0), 20.0, gauss(10.0));
        let marked = mark_roi(&mesh, &[lens]).unwrap();
        let adj = marked.mesh.vertex_neighbors();
        for v in 0..marked.mesh.num_vertices() {
            let is_ring = marked.mesh.flags[v] == BoundaryFlag::RoiBoundary;
            let touches = marked.mesh.vertices[v].lens.is_none()
                && adj[v].iter().any(|&u| marked.mesh.vertices[u].lens.is_some());
            assert_eq!(is_ring, touches && !marked.mesh.is_fixed_boundary(v));
        }
        // inside vertices keep Euclidean distances
        for v in &marked.mesh.vertices {
            if v.lens.is_some() {
                let d = (v.xy() - Vec2::new(50.0, 50.0)).norm();
                assert_eq!(v.roi_distance, d);
            }
        }
    }

    #[test]
    fn overlapping_lenses_rejected() {
        let mesh = build_grid_mesh(100, 100, 11, 11).unwrap();
        let a = LensSpec::circle(Vec2::new(40.0, 50.0), 20.0, gauss(10.0));
        let b = LensSpec::circle(Vec2::new(60.0, 50.0), 20.0, gauss(10.0));
        assert!(matches!(
            mark_roi(&mesh, &[a, b]),
            Err(LensError::OverlappingLenses { first: 0, second: 1 })
        ));
    }

    #[test]
    fn disjoint_lenses_are_independent() {
        let mesh = build_grid_mesh(200, 100, 11, 21).unwrap();
        let a = LensSpec::circle(Vec2::new(50.0, 50.0), 25.0, gauss(10.0));
        let b = LensSpec::circle(Vec2::new(150.0, 50.0), 25.0, gauss(10.0));
        let both = mark_roi(&mesh, &[a.clone(), b.clone()]).unwrap();
        let only_a = mark_roi(&mesh, &[a]).unwrap();
        let only_b = mark_roi(&mesh, &[b]).unwrap();
        for v in 0..mesh.num_vertices() {
            let bv = &both.mesh.vertices[v];
            match bv.lens {
                Some(0) => assert_eq!(bv.roi_distance, only_a.mesh.vertices[v].roi_distance),
                Some(1) => assert_eq!(bv.roi_distance, only_b.mesh.vertices[v].roi_distance),
                _ => assert_eq!(bv.roi_distance, 0.0),
            }
        }
    }

    #[test]
    fn invalid_lenses() {
        let mesh = build_grid_mesh(100, 100, 11, 11).unwrap();
        let bad_r = LensSpec::circle(Vec2::new(50.0, 50.0), 0.0, gauss(1.0));
        assert!(matches!(
            roi_distance_field(&mesh, &bad_r),
            Err(LensError::InvalidArgument(_))
        ));
        let two = LensSpec::polygon(&[Vec2::new(0.0, 0.0), Vec2::new(1.0, 1.0)], gauss(1.0));
        assert!(roi_distance_field(&mesh, &two).is_err());
        let bowtie = LensSpec::polygon(
            &[
                Vec2::new(20.0, 20.0),
                Vec2::new(80.0, 80.0),
                Vec2::new(80.0, 20.0),
                Vec2::new(20.0, 80.0),
            ],
            gauss(1.0),
        );
        assert!(matches!(
            roi_distance_field(&mesh, &bowtie),
            Err(LensError::InvalidArgument(_))
        ));
    }

    /// Brute-force distance transform on the vertex lattice: for every
    /// lattice point inside, the distance to the nearest lattice point
    /// outside.
    fn raster_distance_transform(mesh: &TriMesh, inside: &[bool]) -> Vec<f64> {
        let outside: Vec<Vec2> = (0..mesh.num_vertices())
            .filter(|&v| !inside[v])
            .map(|v| mesh.vertices[v].xy())
            .collect();
        (0..mesh.num_vertices())
            .map(|v| {
                if !inside[v] {
                    return 0.0;
                }
                let p = mesh.vertices[v].xy();
                outside
                    .iter()
                    .map(|q| (p - q).norm())
                    .fold(f64::INFINITY, f64::min)
            })
            .collect()
    }

    #[test]
    fn square_medial_proxy_against_raster_transform() {
        let mesh = build_grid_mesh(60, 60, 61, 61).unwrap();
        let square = [
            Vec2::new(10.5, 10.5),
            Vec2::new(49.5, 10.5),
            Vec2::new(49.5, 49.5),
            Vec2::new(10.5, 49.5),
        ];
        let lens = LensSpec::polygon(&square, gauss(5.0));
        let f = roi_distance_field(&mesh, &lens).unwrap();
        assert_eq!(f.inside_count(), 39 * 39);
        let dt = raster_distance_transform(&mesh, &f.inside);
        // lattice transform overshoots the exact outline distance by at most
        // the half-cell gap between outline and lattice
        for v in 0..mesh.num_vertices() {
            if f.inside[v] {
                let gap = dt[v] - f.boundary_distance[v];
                assert!((0.0..=0.5 + 1e-9).contains(&gap), "v={v} gap={gap}");
            }
        }
        let center = Vec2::new(30.0, 30.0);
        let mut medial_count = 0;
        for v in (0..mesh.num_vertices()).filter(|&v| f.medial[v]) {
            medial_count += 1;
            let d = mesh.vertices[v].xy() - center;
            // on a diagonal of the square, within one lattice cell
            let off = (d.x.abs() - d.y.abs()).abs();
            assert!(off <= 1.0 + 1e-9, "medial vertex {v} off-diagonal by {off}");
            // and a local maximum of the brute-force transform as well
            assert!(dt[v] >= f.boundary_distance[v]);
        }
        assert!(medial_count > 0);
        assert!(f
            .distance
            .iter()
            .zip(&f.inside)
            .all(|(&d, &ins)| !ins || (0.0..=f.d_max).contains(&d)));
        assert!(f.d_max > 0.0);
    }

    #[test]
    fn polygon_field_invariants() {
        let mesh = build_grid_mesh(100, 100, 41, 41).unwrap();
        let tri = [
            Vec2::new(20.0, 80.0),
            Vec2::new(80.0, 80.0),
            Vec2::new(50.0, 20.0),
        ];
        let f = roi_distance_field(&mesh, &LensSpec::polygon(&tri, gauss(5.0))).unwrap();
        let min_inside = f
            .distance
            .iter()
            .zip(&f.inside)
            .filter(|(_, &i)| i)
            .map(|(&d, _)| d)
            .fold(f64::INFINITY, f64::min);
        assert_eq!(min_inside, 0.0);
        let max_inside = f
            .distance
            .iter()
            .zip(&f.inside)
            .filter(|(_, &i)| i)
            .map(|(&d, _)| d)
            .fold(0.0, f64::max);
        assert_eq!(max_inside, f.d_max);
    }

    #[test]
    fn polygon_file_parsing() {
        let pts = parse_polygon("# roi\n1 2\n\n3 4.5\n5 6\n", Path::new("p.txt")).unwrap();
        assert_eq!(pts.len(), 3);
        assert_eq!(pts[1], Vec2::new(3.0, 4.5));
        let err = parse_polygon("1 2 3\n", Path::new("p.txt")).unwrap_err();
        assert!(matches!(err, LensError::Parse { line: 1, .. }));
    }

    #[test]
    fn point_in_polygon_even_odd() {
        let sq = [
            Vec2::new(0.0, 0.0),
            Vec2::new(2.0, 0.0),
            Vec2::new(2.0, 2.0),
            Vec2::new(0.0, 2.0),
        ];
        assert!(point_in_polygon(Vec2::new(1.0, 1.0), &sq));
        assert!(!point_in_polygon(Vec2::new(3.0, 1.0), &sq));
        assert!((distance_to_outline(Vec2::new(1.0, 0.5), &sq) - 0.5).abs() < 1e-15);
    }
}
