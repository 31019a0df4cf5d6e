//! Triangle meshes over an image rectangle.
//!
//! A [`TriMesh`] stores one [`Vertex`] per lattice point (or subdivision
//! midpoint) and counter-clockwise index triples. The same structure carries
//! the flat input mesh, the lifted 3D mesh and the flattened output; only the
//! vertex attributes differ between stages.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{LensError, Result};
use crate::{Vec2, Vec3};

/// Smallest area a triangle may have in its own plane.
pub const MIN_TRIANGLE_AREA: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Vertex {
    /// Screen-space position; `z` is zero until the mesh is lifted.
    pub position: Vec3,
    /// Texture coordinate in `[0, 1]^2`.
    pub uv: Vec2,
    /// Cached lift height (equal to `position.z` on lifted meshes).
    pub height: f64,
    /// Distance to the lens center or medial path, zero outside any lens.
    pub roi_distance: f64,
    /// Index of the lens whose region contains this vertex.
    pub lens: Option<usize>,
}

impl Vertex {
    pub fn flat(x: f64, y: f64, u: f64, v: f64) -> Self {
        Vertex {
            position: Vec3::new(x, y, 0.0),
            uv: Vec2::new(u, v),
            height: 0.0,
            roi_distance: 0.0,
            lens: None,
        }
    }

    #[inline]
    pub fn xy(&self) -> Vec2 {
        self.position.xy()
    }

    /// Linear blend of every interpolable attribute.
    fn midpoint(a: &Vertex, b: &Vertex) -> Vertex {
        Vertex {
            position: (a.position + b.position) * 0.5,
            uv: (a.uv + b.uv) * 0.5,
            height: 0.5 * (a.height + b.height),
            roi_distance: 0.5 * (a.roi_distance + b.roi_distance),
            lens: if a.lens == b.lens { a.lens } else { None },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BoundaryFlag {
    Interior,
    OuterBoundary,
    RoiBoundary,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TriMesh {
    pub vertices: Vec<Vertex>,
    pub triangles: Vec<[usize; 3]>,
    /// `(rows, cols)` of the generating lattice, if any.
    pub dims: Option<(usize, usize)>,
    pub flags: Vec<BoundaryFlag>,
    /// Width and height of the image rectangle the mesh spans.
    pub extent: Vec2,
}

/// Neighbors of a vertex in counter-clockwise order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OneRing {
    pub neighbors: Vec<usize>,
    /// `true` when the fan closes around the vertex.
    pub closed: bool,
}

/// Builds a `rows x cols` lattice over a `width x height` pixel rectangle.
///
/// Each cell is split along the diagonal running from its lower-left to its
/// upper-right corner (image coordinates, y pointing down).
pub fn build_grid_mesh(width: u32, height: u32, rows: usize, cols: usize) -> Result<TriMesh> {
    if rows < 2 || cols < 2 {
        return Err(LensError::invalid(format!(
            "grid needs at least 2x2 vertices, got {rows}x{cols}"
        )));
    }
    if width == 0 || height == 0 {
        return Err(LensError::invalid("image dimensions must be positive"));
    }
    let (w, h) = (f64::from(width), f64::from(height));
    let mut vertices = Vec::with_capacity(rows * cols);
    let mut flags = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        let v = i as f64 / (rows - 1) as f64;
        for j in 0..cols {
            let u = j as f64 / (cols - 1) as f64;
            vertices.push(Vertex::flat(u * w, v * h, u, v));
            let on_edge = i == 0 || j == 0 || i == rows - 1 || j == cols - 1;
            flags.push(if on_edge {
                BoundaryFlag::OuterBoundary
            } else {
                BoundaryFlag::Interior
            });
        }
    }
    let mut triangles = Vec::with_capacity(2 * (rows - 1) * (cols - 1));
    for i in 0..rows - 1 {
        for j in 0..cols - 1 {
            let a = i * cols + j;
            let b = a + 1;
            let c = a + cols;
            let d = c + 1;
            triangles.push([a, b, c]);
            triangles.push([b, d, c]);
        }
    }
    Ok(TriMesh {
        vertices,
        triangles,
        dims: Some((rows, cols)),
        flags,
        extent: Vec2::new(w, h),
    })
}

impl TriMesh {
    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn triangle_xy(&self, t: usize) -> [Vec2; 3] {
        let [a, b, c] = self.triangles[t];
        [
            self.vertices[a].xy(),
            self.vertices[b].xy(),
            self.vertices[c].xy(),
        ]
    }

    pub fn triangle_xyz(&self, t: usize) -> [Vec3; 3] {
        let [a, b, c] = self.triangles[t];
        [
            self.vertices[a].position,
            self.vertices[b].position,
            self.vertices[c].position,
        ]
    }

    /// Signed area of the triangle projected onto the xy plane.
    pub fn signed_area_2d(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangle_xy(t);
        signed_area(a, b, c)
    }

    pub fn area_3d(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangle_xyz(t);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    /// Indices of the triangles incident to every vertex.
    pub fn vertex_triangles(&self) -> Vec<Vec<usize>> {
        let mut incident = vec![Vec::new(); self.vertices.len()];
        for (t, tri) in self.triangles.iter().enumerate() {
            for &v in tri {
                incident[v].push(t);
            }
        }
        incident
    }

    /// Undirected edges, each listed once as `(low, high)`, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut edges: Vec<(usize, usize)> = self
            .triangles
            .iter()
            .flat_map(|t| (0..3).map(move |k| ordered(t[k], t[(k + 1) % 3])))
            .collect();
        edges.sort_unstable();
        edges.dedup();
        edges
    }

    /// Per-vertex sorted neighbor lists.
    pub fn vertex_neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.vertices.len()];
        for (a, b) in self.edges() {
            adj[a].push(b);
            adj[b].push(a);
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        adj
    }

    /// Edge use counts; boundary edges appear in exactly one triangle.
    fn edge_counts(&self) -> HashMap<(usize, usize), u32> {
        let mut counts = HashMap::with_capacity(self.triangles.len() * 2);
        for t in &self.triangles {
            for k in 0..3 {
                *counts.entry(ordered(t[k], t[(k + 1) % 3])).or_insert(0) += 1;
            }
        }
        counts
    }

    /// Checks index ranges, orientation and non-degeneracy in the xy plane.
    pub fn validate(&self) -> Result<()> {
        if self.flags.len() != self.vertices.len() {
            return Err(LensError::DimensionMismatch {
                expected: self.vertices.len(),
                found: self.flags.len(),
            });
        }
        let n = self.vertices.len();
        for (t, tri) in self.triangles.iter().enumerate() {
            if tri.iter().any(|&v| v >= n) {
                return Err(LensError::invalid(format!(
                    "triangle {t} references a vertex out of range"
                )));
            }
            if self.signed_area_2d(t) <= MIN_TRIANGLE_AREA {
                return Err(LensError::DegenerateTriangle { index: Some(t) });
            }
        }
        Ok(())
    }

    /// Total xy-plane area.
    pub fn area_2d(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.signed_area_2d(t)).sum()
    }

    /// Flags every vertex on a boundary edge as `OuterBoundary` and resets
    /// the rest from lens membership.
    pub fn recompute_flags(&mut self) {
        let mut flags = vec![BoundaryFlag::Interior; self.vertices.len()];
        for (&(a, b), &count) in &self.edge_counts() {
            if count == 1 {
                flags[a] = BoundaryFlag::OuterBoundary;
                flags[b] = BoundaryFlag::OuterBoundary;
            }
        }
        self.flags = flags;
        self.refresh_roi_flags();
    }

    /// Re-derives `RoiBoundary` markers: a vertex outside every lens that
    /// shares an edge with a lens vertex.
    pub fn refresh_roi_flags(&mut self) {
        for f in &mut self.flags {
            if *f == BoundaryFlag::RoiBoundary {
                *f = BoundaryFlag::Interior;
            }
        }
        for (a, b) in self.edges() {
            for (inside, other) in [(a, b), (b, a)] {
                if self.vertices[inside].lens.is_some()
                    && self.vertices[other].lens.is_none()
                    && self.flags[other] == BoundaryFlag::Interior
                {
                    self.flags[other] = BoundaryFlag::RoiBoundary;
                }
            }
        }
    }

    pub fn is_fixed_boundary(&self, v: usize) -> bool {
        self.flags[v] == BoundaryFlag::OuterBoundary
    }

    /// Writes the plain-text dump: a `rows cols` header, then `x y z u v d`
    /// per vertex, then `i j k` per triangle.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let (rows, cols) = self.dims.unwrap_or((0, 0));
        let _ = writeln!(out, "{rows} {cols}");
        for v in &self.vertices {
            let _ = writeln!(
                out,
                "{} {} {} {} {} {}",
                v.position.x, v.position.y, v.position.z, v.uv.x, v.uv.y, v.roi_distance
            );
        }
        for t in &self.triangles {
            let _ = writeln!(out, "{} {} {}", t[0], t[1], t[2]);
        }
        out
    }

    pub fn from_text(text: &str, origin: &Path) -> Result<TriMesh> {
        let parse_err = |line: usize, message: String| LensError::Parse {
            path: origin.to_path_buf(),
            line,
            message,
        };
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        let (hline, header) = lines
            .next()
            .ok_or_else(|| parse_err(1, "missing header".into()))?;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| parse_err(hline + 1, format!("bad header: {e}")))?;
        if dims.len() != 2 {
            return Err(parse_err(hline + 1, "header must be `rows cols`".into()));
        }
        let mut vertices = Vec::new();
        let mut triangles = Vec::new();
        for (idx, line) in lines {
            let tokens: Vec<&str> = line.split_whitespace().collect();
            match tokens.len() {
                6 if triangles.is_empty() => {
                    let vals: Vec<f64> = tokens
                        .iter()
                        .map(|t| t.parse::<f64>())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|e| parse_err(idx + 1, e.to_string()))?;
                    vertices.push(Vertex {
                        position: Vec3::new(vals[0], vals[1], vals[2]),
                        uv: Vec2::new(vals[3], vals[4]),
                        height: vals[2],
                        roi_distance: vals[5],
                        lens: None,
                    });
                }
                3 => {
                    let mut tri = [0usize; 3];
                    for (slot, tok) in tri.iter_mut().zip(&tokens) {
                        *slot = tok
                            .parse()
                            .map_err(|e: std::num::ParseIntError| parse_err(idx + 1, e.to_string()))?;
                    }
                    if tri.iter().any(|&v| v >= vertices.len()) {
                        return Err(parse_err(idx + 1, "vertex index out of range".into()));
                    }
                    triangles.push(tri);
                }
                n => {
                    return Err(parse_err(
                        idx + 1,
                        format!("expected 6 vertex or 3 triangle fields, found {n}"),
                    ))
                }
            }
        }
        let (mut max_x, mut max_y) = (0.0f64, 0.0f64);
        for v in &vertices {
            max_x = max_x.max(v.position.x);
            max_y = max_y.max(v.position.y);
        }
        let dims = match (dims[0], dims[1]) {
            (0, 0) => None,
            (r, c) => Some((r, c)),
        };
        let mut mesh = TriMesh {
            flags: vec![BoundaryFlag::Interior; vertices.len()],
            vertices,
            triangles,
            dims,
            extent: Vec2::new(max_x, max_y),
        };
        mesh.recompute_flags();
        Ok(mesh)
    }

    pub fn save_text(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| LensError::io(path, e))
    }

    pub fn load_text(path: &Path) -> Result<TriMesh> {
        let text = std::fs::read_to_string(path).map_err(|e| LensError::io(path, e))?;
        TriMesh::from_text(&text, path)
    }
}

#[inline]
pub(crate) fn ordered(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

#[inline]
pub fn signed_area(a: Vec2, b: Vec2, c: Vec2) -> f64 {
    let (u, v) = (b - a, c - a);
    0.5 * (u.x * v.y - u.y * v.x)
}

/// Neighbors of `v` ordered counter-clockwise.
///
/// Interior vertices yield a closed cycle; boundary vertices an open fan
/// starting at the neighbor that no incident triangle reaches going
/// counter-clockwise.
pub fn one_ring(mesh: &TriMesh, v: usize) -> Result<OneRing> {
    if v >= mesh.vertices.len() {
        return Err(LensError::invalid(format!("vertex {v} out of range")));
    }
    let incident: Vec<usize> = mesh
        .triangles
        .iter()
        .enumerate()
        .filter(|(_, t)| t.contains(&v))
        .map(|(i, _)| i)
        .collect();
    Ok(one_ring_from(mesh, v, &incident))
}

/// Same as [`one_ring`] given a precomputed incident-triangle list.
pub fn one_ring_from(mesh: &TriMesh, v: usize, incident: &[usize]) -> OneRing {
    // next[a] = b for each incident triangle (v, a, b) in CCW order.
    let mut next: Vec<(usize, usize)> = Vec::with_capacity(incident.len());
    for &t in incident {
        let tri = mesh.triangles[t];
        let k = tri.iter().position(|&x| x == v).expect("incident triangle");
        next.push((tri[(k + 1) % 3], tri[(k + 2) % 3]));
    }
    if next.is_empty() {
        return OneRing {
            neighbors: Vec::new(),
            closed: false,
        };
    }
    let start = next
        .iter()
        .map(|&(a, _)| a)
        .find(|a| !next.iter().any(|&(_, b)| b == *a));
    let closed = start.is_none();
    let start = start.unwrap_or_else(|| next.iter().map(|&(a, _)| a).min().unwrap());
    let mut neighbors = vec![start];
    let mut cur = start;
    while let Some(&(_, b)) = next.iter().find(|&&(a, _)| a == cur) {
        if b == start || neighbors.len() > next.len() {
            break;
        }
        neighbors.push(b);
        cur = b;
    }
    OneRing { neighbors, closed }
}

/// Splits every selected triangle 1-to-4 through its edge midpoints.
///
/// Unselected triangles touching a split edge are split as well so the
/// result stays conforming: one split edge gives two triangles, two split
/// edges give three, three give the regular 1-to-4 split.
pub fn subdivide_triangles(mesh: &TriMesh, selected: &[usize]) -> Result<TriMesh> {
    subdivide_with_parents(mesh, selected).map(|(m, _)| m)
}

/// [`subdivide_triangles`], also returning the edge endpoints of every new
/// vertex (new vertices are appended in order).
pub fn subdivide_with_parents(
    mesh: &TriMesh,
    selected: &[usize],
) -> Result<(TriMesh, Vec<(usize, usize)>)> {
    if let Some(&bad) = selected.iter().find(|&&t| t >= mesh.triangles.len()) {
        return Err(LensError::invalid(format!("triangle {bad} out of range")));
    }
    let mut out = mesh.clone();
    if selected.is_empty() {
        return Ok((out, Vec::new()));
    }
    out.dims = None;
    let counts = mesh.edge_counts();
    let mut chosen: Vec<usize> = selected.to_vec();
    chosen.sort_unstable();
    chosen.dedup();

    let mut midpoints: HashMap<(usize, usize), usize> = HashMap::new();
    let mut parents = Vec::new();
    for &t in &chosen {
        let tri = mesh.triangles[t];
        for k in 0..3 {
            let key = ordered(tri[k], tri[(k + 1) % 3]);
            midpoints.entry(key).or_insert_with(|| {
                let (a, b) = key;
                let id = out.vertices.len();
                parents.push(key);
                out.vertices
                    .push(Vertex::midpoint(&mesh.vertices[a], &mesh.vertices[b]));
                out.flags.push(if counts[&key] == 1 {
                    BoundaryFlag::OuterBoundary
                } else {
                    BoundaryFlag::Interior
                });
                id
            });
        }
    }

    let mut triangles = Vec::with_capacity(mesh.triangles.len() + 3 * chosen.len() * 2);
    for tri in &mesh.triangles {
        let mids: [Option<usize>; 3] =
            std::array::from_fn(|k| midpoints.get(&ordered(tri[k], tri[(k + 1) % 3])).copied());
        match mids.iter().filter(|m| m.is_some()).count() {
            0 => triangles.push(*tri),
            1 => {
                let k = mids.iter().position(Option::is_some).unwrap();
                let (a, b, c) = (tri[k], tri[(k + 1) % 3], tri[(k + 2) % 3]);
                let m = mids[k].unwrap();
                triangles.push([a, m, c]);
                triangles.push([m, b, c]);
            }
            2 => {
                // rotate so the unsplit edge is (c, a)
                let k = (mids.iter().position(Option::is_none).unwrap() + 1) % 3;
                let (a, b, c) = (tri[k], tri[(k + 1) % 3], tri[(k + 2) % 3]);
                let mab = mids[k].unwrap();
                let mbc = mids[(k + 1) % 3].unwrap();
                triangles.push([mab, b, mbc]);
                triangles.push([a, mab, mbc]);
                triangles.push([a, mbc, c]);
            }
            _ => {
                let [a, b, c] = *tri;
                let [mab, mbc, mca] = mids.map(Option::unwrap);
                triangles.push([a, mab, mca]);
                triangles.push([mab, b, mbc]);
                triangles.push([mca, mbc, c]);
                triangles.push([mab, mbc, mca]);
            }
        }
    }
    out.triangles = triangles;
    out.refresh_roi_flags();
    Ok((out, parents))
}
