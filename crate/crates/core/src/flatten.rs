//! Flattening the lifted mesh back onto the screen.
//!
//! Every lifted triangle is laid out isometrically in the plane as its
//! standard triangle. The solver then alternates two exact minimizations of
//!
//! ```text
//! E = sum_t sum_edges w * |e - M_t e_std|^2
//! ```
//!
//! a local phase that fits a blended metric `M_t` to each triangle's current
//! Jacobian, and a global phase that solves the sparse normal equations for
//! the vertex positions with the metrics held fixed. The system matrix does
//! not depend on the metrics, so it is factored once and reused.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{LensError, Result};
use crate::mesh::{signed_area, BoundaryFlag, TriMesh, MIN_TRIANGLE_AREA};
use crate::sparse::{CholeskyFactor, TripletBuilder};
use crate::svd2::SignedSvd;
use crate::{Mat2, Vec2, Vec3};

/// Smallest edge weight; obtuse angles would otherwise give negative ones.
pub const WEIGHT_FLOOR: f64 = 1e-6;

/// Isometric planar layout of a lifted triangle.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StandardTriangle {
    pub p: [Vec2; 3],
    pub source_triangle: usize,
}

impl StandardTriangle {
    pub fn area(&self) -> f64 {
        signed_area(self.p[0], self.p[1], self.p[2])
    }

    /// Edge vectors `p2 - p1` and `p3 - p1` as columns.
    pub fn edge_matrix(&self) -> Mat2 {
        edge_matrix(&self.p)
    }
}

fn edge_matrix(p: &[Vec2; 3]) -> Mat2 {
    let (a, b) = (p[1] - p[0], p[2] - p[0]);
    Mat2::new(a.x, b.x, a.y, b.y)
}

/// Lays out a 3D triangle with `p1` at the origin, `p2` on the positive
/// x-axis and `p3` above it.
pub fn standardize_triangle(t: [Vec3; 3], source_triangle: usize) -> Result<StandardTriangle> {
    let e12 = t[1] - t[0];
    let e13 = t[2] - t[0];
    let cross = e12.cross(&e13).norm();
    if !(0.5 * cross > MIN_TRIANGLE_AREA) {
        return Err(LensError::DegenerateTriangle {
            index: Some(source_triangle),
        });
    }
    let l12 = e12.norm();
    Ok(StandardTriangle {
        p: [
            Vec2::zeros(),
            Vec2::new(l12, 0.0),
            Vec2::new(e12.dot(&e13) / l12, cross / l12),
        ],
        source_triangle,
    })
}

pub fn standardize_mesh(mesh: &TriMesh) -> Result<Vec<StandardTriangle>> {
    (0..mesh.num_triangles())
        .map(|t| standardize_triangle(mesh.triangle_xyz(t), t))
        .collect()
}

/// The linear map taking the standard triangle's edges onto `t`'s edges.
pub fn triangle_jacobian(t: &[Vec2; 3], standard: &StandardTriangle) -> Result<Mat2> {
    let inv = standard
        .edge_matrix()
        .try_inverse()
        .filter(|_| standard.area().abs() > MIN_TRIANGLE_AREA)
        .ok_or(LensError::DegenerateTriangle {
            index: Some(standard.source_triangle),
        })?;
    Ok(edge_matrix(t) * inv)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricParams {
    /// 0 keeps triangles rigid, 1 accepts their current stretch.
    pub alpha: f64,
}

impl Default for MetricParams {
    fn default() -> Self {
        MetricParams { alpha: 0.0 }
    }
}

impl MetricParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(LensError::invalid(format!(
                "alpha must lie in [0, 1], got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

/// Target transform of one triangle.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricMatrix {
    pub m: Mat2,
    /// `U V^T`.
    pub rotation: Mat2,
    /// Signed singular values of the Jacobian.
    pub sigma: [f64; 2],
    pub blended: [f64; 2],
    /// The Jacobian reversed orientation.
    pub flipped: bool,
}

impl MetricMatrix {
    pub fn identity() -> Self {
        MetricMatrix {
            m: Mat2::identity(),
            rotation: Mat2::identity(),
            sigma: [1.0, 1.0],
            blended: [1.0, 1.0],
            flipped: false,
        }
    }
}

/// `U diag(alpha (sigma - 1) + 1) V^T` from the signed SVD of `j`.
pub fn blended_metric(j: &Mat2, alpha: f64) -> MetricMatrix {
    let svd = SignedSvd::new(j);
    let blend = |s: f64| alpha * (s - 1.0) + 1.0;
    let blended = [blend(svd.sigma1), blend(svd.sigma2)];
    MetricMatrix {
        m: svd.recompose(blended[0], blended[1]),
        rotation: svd.rotation(),
        sigma: [svd.sigma1, svd.sigma2],
        blended,
        flipped: j.determinant() <= 0.0,
    }
}

/// Weights of each triangle's three edges; entry `k` belongs to the edge
/// opposite local vertex `k`.
pub type EdgeWeights = Vec<[f64; 3]>;

/// Endpoints (local indices) of the edge opposite local vertex `k`.
#[inline]
pub fn opposite_edge(k: usize) -> (usize, usize) {
    ((k + 1) % 3, (k + 2) % 3)
}

/// `(1 + h) A cot(theta)` per edge, `h` the mean vertex height of the
/// triangle and `A`, `theta` taken from its standard triangle.
pub fn edge_weights(mesh: &TriMesh, standards: &[StandardTriangle]) -> Result<EdgeWeights> {
    if standards.len() != mesh.num_triangles() {
        return Err(LensError::DimensionMismatch {
            expected: mesh.num_triangles(),
            found: standards.len(),
        });
    }
    Ok(mesh
        .triangles
        .iter()
        .zip(standards)
        .map(|(tri, st)| {
            let h = tri.iter().map(|&v| mesh.vertices[v].height).sum::<f64>() / 3.0;
            let scale = (1.0 + h) * st.area();
            let mut w = [0.0; 3];
            for (k, wk) in w.iter_mut().enumerate() {
                let (a, b) = opposite_edge(k);
                let (u, v) = (st.p[a] - st.p[k], st.p[b] - st.p[k]);
                let cot = u.dot(&v) / (u.x * v.y - u.y * v.x);
                *wk = (scale * cot).max(WEIGHT_FLOOR);
            }
            w
        })
        .collect())
}

/// Per-triangle energy of `positions` against the metric-mapped standard
/// edges.
pub fn triangle_energy(
    p: &[Vec2; 3],
    standard: &StandardTriangle,
    weights: &[f64; 3],
    metric: &Mat2,
) -> f64 {
    (0..3)
        .map(|k| {
            let (a, b) = opposite_edge(k);
            let e = p[b] - p[a];
            let target = metric * (standard.p[b] - standard.p[a]);
            weights[k] * (e - target).norm_squared()
        })
        .sum()
}

pub fn triangle_energies(
    triangles: &[[usize; 3]],
    positions: &[Vec2],
    standards: &[StandardTriangle],
    weights: &[[f64; 3]],
    metrics: &[MetricMatrix],
) -> Vec<f64> {
    triangles
        .iter()
        .enumerate()
        .map(|(t, tri)| {
            let p = [positions[tri[0]], positions[tri[1]], positions[tri[2]]];
            triangle_energy(&p, &standards[t], &weights[t], &metrics[t].m)
        })
        .collect()
}

pub fn total_energy(
    triangles: &[[usize; 3]],
    positions: &[Vec2],
    standards: &[StandardTriangle],
    weights: &[[f64; 3]],
    metrics: &[MetricMatrix],
) -> f64 {
    triangle_energies(triangles, positions, standards, weights, metrics)
        .iter()
        .sum()
}

/// `sum_k w_k e_k e_k^T` over a triangle's standard edges. The per-triangle
/// energy of a linear map `A` is `tr((A - M) C (A - M)^T)` with this `C`.
pub fn edge_covariance(standard: &StandardTriangle, weights: &[f64; 3]) -> Mat2 {
    let mut c = Mat2::zeros();
    for (k, &w) in weights.iter().enumerate() {
        let (a, b) = opposite_edge(k);
        let e = standard.p[b] - standard.p[a];
        c += e * e.transpose() * w;
    }
    c
}

/// Local step of the solver: `alpha J + (1 - alpha) R` with `R` the rotation
/// closest to `J` in the weighted norm of `c`.
///
/// When `c` is a multiple of the identity (all weights unclamped), `R` is
/// the polar factor of `J` and the result equals [`blended_metric`].
/// Otherwise this is still the exact minimizer over `M` and `R` of
/// `|J - M|_c^2 + (1 - alpha) / alpha * |M - R|_c^2`, which keeps the
/// alternation a descent method.
pub fn fitted_metric(j: &Mat2, c: &Mat2, alpha: f64) -> MetricMatrix {
    let svd = SignedSvd::new(j);
    let rotation = SignedSvd::new(&(j * c)).rotation();
    let blend = |s: f64| alpha * (s - 1.0) + 1.0;
    MetricMatrix {
        m: j * alpha + rotation * (1.0 - alpha),
        rotation,
        sigma: [svd.sigma1, svd.sigma2],
        blended: [blend(svd.sigma1), blend(svd.sigma2)],
        flipped: j.determinant() <= 0.0,
    }
}

/// Metrics for every triangle at the given positions.
pub fn compute_metrics(
    triangles: &[[usize; 3]],
    positions: &[Vec2],
    standards: &[StandardTriangle],
    covariances: &[Mat2],
    alpha: f64,
) -> Result<Vec<MetricMatrix>> {
    triangles
        .par_iter()
        .zip(standards.par_iter())
        .zip(covariances.par_iter())
        .map(|((tri, st), c)| {
            let p = [positions[tri[0]], positions[tri[1]], positions[tri[2]]];
            Ok(fitted_metric(&triangle_jacobian(&p, st)?, c, alpha))
        })
        .collect()
}

/// The quantity the local/global alternation decreases monotonically: the
/// energy plus `(1 - alpha) / alpha` times the weighted distance of each
/// metric from its rotation. Equal to the energy at `alpha = 0`.
pub fn augmented_objective(
    energy: f64,
    metrics: &[MetricMatrix],
    covariances: &[Mat2],
    alpha: f64,
) -> f64 {
    if alpha <= 0.0 {
        return energy;
    }
    let penalty: f64 = metrics
        .iter()
        .zip(covariances)
        .map(|(m, c)| {
            let d = m.m - m.rotation;
            (d * c * d.transpose()).trace()
        })
        .sum();
    energy + (1.0 - alpha) / alpha * penalty
}

/// Fingerprint of everything the system matrix depends on.
pub fn system_key(triangles: &[[usize; 3]], weights: &[[f64; 3]], fixed: &[usize]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update((triangles.len() as u64).to_le_bytes());
    for t in triangles {
        for &v in t {
            h.update((v as u64).to_le_bytes());
        }
    }
    for w in weights {
        for x in w {
            h.update(x.to_bits().to_le_bytes());
        }
    }
    h.update((fixed.len() as u64).to_le_bytes());
    for &v in fixed {
        h.update((v as u64).to_le_bytes());
    }
    h.finalize().into()
}

/// The factored normal equations over the free vertices.
#[derive(Clone, Debug)]
pub struct PrefactoredSystem {
    triangles: Vec<[usize; 3]>,
    weights: EdgeWeights,
    fixed: Vec<usize>,
    /// Row of each vertex in the reduced system, `None` for fixed ones.
    slot: Vec<Option<usize>>,
    factor: CholeskyFactor,
    key: [u8; 32],
    pub assembly_ms: f64,
    pub factorization_ms: f64,
}

impl PrefactoredSystem {
    /// Assembles the reduced matrix and factors it.
    pub fn assemble(
        num_vertices: usize,
        triangles: &[[usize; 3]],
        weights: &[[f64; 3]],
        fixed: &[usize],
    ) -> Result<Self> {
        if weights.len() != triangles.len() {
            return Err(LensError::DimensionMismatch {
                expected: triangles.len(),
                found: weights.len(),
            });
        }
        if fixed.is_empty() {
            return Err(LensError::invalid("at least one vertex must be fixed"));
        }
        let start = Instant::now();
        let mut fixed: Vec<usize> = fixed.to_vec();
        fixed.sort_unstable();
        fixed.dedup();
        if fixed.last().is_some_and(|&v| v >= num_vertices) {
            return Err(LensError::invalid("fixed vertex out of range"));
        }
        let mut slot = vec![None; num_vertices];
        let mut next = 0;
        for (v, s) in slot.iter_mut().enumerate() {
            if fixed.binary_search(&v).is_err() {
                *s = Some(next);
                next += 1;
            }
        }
        let mut builder = TripletBuilder::new(next);
        for (tri, w) in triangles.iter().zip(weights) {
            for (k, &wk) in w.iter().enumerate() {
                let (a, b) = opposite_edge(k);
                let (i, j) = (tri[a], tri[b]);
                if let Some(si) = slot[i] {
                    builder.add_symmetric(si, si, wk);
                }
                if let Some(sj) = slot[j] {
                    builder.add_symmetric(sj, sj, wk);
                }
                if let (Some(si), Some(sj)) = (slot[i], slot[j]) {
                    builder.add_symmetric(si, sj, -wk);
                }
            }
        }
        let matrix = builder.build();
        let assembled = Instant::now();
        let factor = CholeskyFactor::factor(&matrix)?;
        let done = Instant::now();
        Ok(PrefactoredSystem {
            key: system_key(triangles, weights, &fixed),
            triangles: triangles.to_vec(),
            weights: weights.to_vec(),
            fixed,
            slot,
            factor,
            assembly_ms: ms(assembled - start),
            factorization_ms: ms(done - assembled),
        })
    }

    pub fn key(&self) -> [u8; 32] {
        self.key
    }

    pub fn fixed(&self) -> &[usize] {
        &self.fixed
    }

    pub fn num_free(&self) -> usize {
        self.factor.dim()
    }

    pub fn weights(&self) -> &[[f64; 3]] {
        &self.weights
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    /// Positions minimizing the energy for fixed metrics. Entries of
    /// `anchor` at fixed vertices give their positions; other entries are
    /// ignored and returned updated.
    pub fn solve_positions(
        &self,
        metrics: &[MetricMatrix],
        standards: &[StandardTriangle],
        anchor: &[Vec2],
    ) -> Result<Vec<Vec2>> {
        let n_tri = self.triangles.len();
        for found in [metrics.len(), standards.len()] {
            if found != n_tri {
                return Err(LensError::DimensionMismatch {
                    expected: n_tri,
                    found,
                });
            }
        }
        if anchor.len() != self.slot.len() {
            return Err(LensError::DimensionMismatch {
                expected: self.slot.len(),
                found: anchor.len(),
            });
        }
        let n = self.num_free();
        let mut bx = vec![0.0; n];
        let mut by = vec![0.0; n];
        for (t, tri) in self.triangles.iter().enumerate() {
            let m = &metrics[t].m;
            let st = &standards[t];
            for (k, &w) in self.weights[t].iter().enumerate() {
                let (a, b) = opposite_edge(k);
                let (i, j) = (tri[a], tri[b]);
                let target = m * (st.p[a] - st.p[b]) * w;
                match (self.slot[i], self.slot[j]) {
                    (Some(si), Some(sj)) => {
                        bx[si] += target.x;
                        by[si] += target.y;
                        bx[sj] -= target.x;
                        by[sj] -= target.y;
                    }
                    (Some(si), None) => {
                        bx[si] += target.x + w * anchor[j].x;
                        by[si] += target.y + w * anchor[j].y;
                    }
                    (None, Some(sj)) => {
                        bx[sj] += w * anchor[i].x - target.x;
                        by[sj] += w * anchor[i].y - target.y;
                    }
                    (None, None) => {}
                }
            }
        }
        let (x, y) = rayon::join(|| self.factor.solve(&bx), || self.factor.solve(&by));
        let (x, y) = (x?, y?);
        Ok(self
            .slot
            .iter()
            .zip(anchor)
            .map(|(s, &fixed)| match s {
                Some(k) => Vec2::new(x[*k], y[*k]),
                None => fixed,
            })
            .collect())
    }
}

fn ms(d: std::time::Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryMode {
    /// The image rectangle stays where it is.
    #[default]
    FixedRectangle,
    /// Only the gauge is fixed; the result is fitted back onto the
    /// rectangle by a similarity transform.
    Free,
}

impl BoundaryMode {
    pub fn fixed_vertices(&self, mesh: &TriMesh) -> Vec<usize> {
        match self {
            BoundaryMode::FixedRectangle => (0..mesh.num_vertices())
                .filter(|&v| mesh.flags[v] == BoundaryFlag::OuterBoundary)
                .collect(),
            BoundaryMode::Free => vec![0],
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct StageTimings {
    pub standardize_ms: f64,
    pub assembly_ms: f64,
    pub factorization_ms: f64,
    /// Wall time of each local/global iteration.
    pub iteration_ms: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct SolveReport {
    pub iterations: usize,
    /// Energy after each iteration, measured with the metrics that iteration
    /// solved against.
    pub energy_trace: Vec<f64>,
    /// [`augmented_objective`] after each iteration; never increases.
    pub objective_trace: Vec<f64>,
    /// Energy of the unflattened projection under the first metrics.
    pub initial_energy: f64,
    pub converged: bool,
    pub flipped_triangles: Vec<usize>,
    pub max_vertex_move: Vec<f64>,
    pub flips: Vec<usize>,
    /// Flipped triangles in the projection the iteration starts from.
    pub initial_flips: usize,
    pub timings: StageTimings,
}

impl SolveReport {
    pub fn final_energy(&self) -> f64 {
        self.energy_trace
            .last()
            .copied()
            .unwrap_or(self.initial_energy)
    }

    /// `iteration,energy,max_vertex_move,flips`, starting with the
    /// projection as iteration 0.
    pub fn energy_csv(&self) -> String {
        let mut out = String::from("iteration,energy,max_vertex_move,flips\n");
        out.push_str(&format!("0,{},0,{}\n", self.initial_energy, self.initial_flips));
        for k in 0..self.iterations {
            out.push_str(&format!(
                "{},{},{},{}\n",
                k + 1,
                self.energy_trace[k],
                self.max_vertex_move[k],
                self.flips[k]
            ));
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct FlattenOutput {
    pub mesh: TriMesh,
    pub report: SolveReport,
    pub standards: Vec<StandardTriangle>,
    pub weights: EdgeWeights,
    /// Metrics of the final iteration.
    pub metrics: Vec<MetricMatrix>,
    raw_positions: Vec<Vec2>,
}

impl FlattenOutput {
    /// Positions the energy trace refers to (before any free-boundary fit).
    pub fn positions(&self) -> Vec<Vec2> {
        self.raw_positions.clone()
    }
}

/// Everything the system matrix is built from.
#[derive(Clone, Debug)]
pub struct SystemInputs {
    pub standards: Vec<StandardTriangle>,
    pub weights: EdgeWeights,
    pub fixed: Vec<usize>,
}

impl SystemInputs {
    pub fn key(&self, mesh: &TriMesh) -> [u8; 32] {
        let mut fixed = self.fixed.clone();
        fixed.sort_unstable();
        fixed.dedup();
        system_key(&mesh.triangles, &self.weights, &fixed)
    }
}

#[derive(Clone, Debug)]
pub struct FlattenProblem<'a> {
    pub mesh: &'a TriMesh,
    pub metric: MetricParams,
    /// Relative energy change that stops the iteration.
    pub epsilon: f64,
    pub max_iter: usize,
    pub boundary: BoundaryMode,
}

impl<'a> FlattenProblem<'a> {
    pub fn new(mesh: &'a TriMesh) -> Self {
        FlattenProblem {
            mesh,
            metric: MetricParams::default(),
            epsilon: 1e-3,
            max_iter: 50,
            boundary: BoundaryMode::FixedRectangle,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.metric.validate()?;
        if !(self.epsilon > 0.0) {
            return Err(LensError::invalid("epsilon must be positive"));
        }
        if self.max_iter == 0 {
            return Err(LensError::invalid("max_iter must be at least 1"));
        }
        Ok(())
    }

    pub fn system_inputs(&self) -> Result<SystemInputs> {
        let standards = standardize_mesh(self.mesh)?;
        let weights = edge_weights(self.mesh, &standards)?;
        Ok(SystemInputs {
            standards,
            weights,
            fixed: self.boundary.fixed_vertices(self.mesh),
        })
    }

    pub fn assemble(&self, inputs: &SystemInputs) -> Result<PrefactoredSystem> {
        PrefactoredSystem::assemble(
            self.mesh.num_vertices(),
            &self.mesh.triangles,
            &inputs.weights,
            &inputs.fixed,
        )
    }

    /// Standardizes, factors and iterates.
    pub fn solve(&self) -> Result<FlattenOutput> {
        self.validate()?;
        let start = Instant::now();
        let inputs = self.system_inputs()?;
        let standardize_ms = ms(start.elapsed());
        let system = self.assemble(&inputs)?;
        let mut out = self.solve_with(inputs, &system)?;
        out.report.timings.standardize_ms = standardize_ms;
        out.report.timings.assembly_ms = system.assembly_ms;
        out.report.timings.factorization_ms = system.factorization_ms;
        Ok(out)
    }

    /// Iterates against an already factored system. Timings for assembly and
    /// factorization are left at zero.
    pub fn solve_with(
        &self,
        inputs: SystemInputs,
        system: &PrefactoredSystem,
    ) -> Result<FlattenOutput> {
        self.validate()?;
        let SystemInputs {
            standards, weights, ..
        } = inputs;
        let tris = &self.mesh.triangles;
        if system.triangles() != tris.as_slice() || system.weights() != weights.as_slice() {
            return Err(LensError::invalid(
                "factored system does not match this mesh",
            ));
        }
        let alpha = self.metric.alpha;
        let covariances: Vec<Mat2> = standards
            .iter()
            .zip(&weights)
            .map(|(st, w)| edge_covariance(st, w))
            .collect();
        let mut positions: Vec<Vec2> = self.mesh.vertices.iter().map(|v| v.xy()).collect();
        let mut metrics = compute_metrics(tris, &positions, &standards, &covariances, alpha)?;
        let mut report = SolveReport {
            initial_energy: total_energy(tris, &positions, &standards, &weights, &metrics),
            initial_flips: flipped(tris, &positions).len(),
            ..Default::default()
        };
        let mut previous = report.initial_energy;
        for k in 1..=self.max_iter {
            let t0 = Instant::now();
            if k > 1 {
                metrics = compute_metrics(tris, &positions, &standards, &covariances, alpha)?;
            }
            let next = system.solve_positions(&metrics, &standards, &positions)?;
            let energy = total_energy(tris, &next, &standards, &weights, &metrics);
            let moved = next
                .iter()
                .zip(&positions)
                .map(|(a, b)| (a - b).norm())
                .fold(0.0, f64::max);
            positions = next;
            report.iterations = k;
            report.energy_trace.push(energy);
            report
                .objective_trace
                .push(augmented_objective(energy, &metrics, &covariances, alpha));
            report.max_vertex_move.push(moved);
            report.flips.push(flipped(tris, &positions).len());
            report.timings.iteration_ms.push(ms(t0.elapsed()));
            let change = (energy - previous).abs() / previous.max(1e-12);
            log::debug!("flatten iteration {k}: energy {energy:.6e}, change {change:.3e}");
            previous = energy;
            if change < self.epsilon {
                report.converged = true;
                break;
            }
        }
        if !report.converged {
            log::warn!("flatten did not converge in {} iterations", self.max_iter);
        }
        let raw_positions = positions.clone();
        if self.boundary == BoundaryMode::Free {
            fit_to_rectangle(self.mesh, &mut positions);
        }
        report.flipped_triangles = flipped(tris, &positions);
        let mut mesh = self.mesh.clone();
        for (v, p) in mesh.vertices.iter_mut().zip(&positions) {
            v.position = Vec3::new(p.x, p.y, 0.0);
            v.height = 0.0;
        }
        Ok(FlattenOutput {
            mesh,
            report,
            standards,
            weights,
            metrics,
            raw_positions,
        })
    }
}

/// Triangles whose signed area is not positive.
pub fn flipped(triangles: &[[usize; 3]], positions: &[Vec2]) -> Vec<usize> {
    triangles
        .iter()
        .enumerate()
        .filter(|(_, t)| signed_area(positions[t[0]], positions[t[1]], positions[t[2]]) <= 0.0)
        .map(|(i, _)| i)
        .collect()
}

/// Least-squares similarity taking `source` onto `target`, as
/// `(scale * rotation, translation)`.
pub fn similarity_fit(source: &[Vec2], target: &[Vec2]) -> (Mat2, Vec2) {
    let n = source.len().max(1) as f64;
    let cs = source.iter().sum::<Vec2>() / n;
    let ct = target.iter().sum::<Vec2>() / n;
    // complex ratio sum(conj(p) q) / sum(|p|^2)
    let (mut re, mut im, mut norm) = (0.0, 0.0, 0.0);
    for (s, t) in source.iter().zip(target) {
        let (p, q) = (s - cs, t - ct);
        re += p.x * q.x + p.y * q.y;
        im += p.x * q.y - p.y * q.x;
        norm += p.norm_squared();
    }
    if norm == 0.0 {
        return (Mat2::identity(), ct - cs);
    }
    let (a, b) = (re / norm, im / norm);
    let m = Mat2::new(a, -b, b, a);
    (m, ct - m * cs)
}

fn fit_to_rectangle(mesh: &TriMesh, positions: &mut [Vec2]) {
    let boundary: Vec<usize> = (0..mesh.num_vertices())
        .filter(|&v| mesh.flags[v] == BoundaryFlag::OuterBoundary)
        .collect();
    let source: Vec<Vec2> = boundary.iter().map(|&v| positions[v]).collect();
    let target: Vec<Vec2> = boundary.iter().map(|&v| mesh.vertices[v].xy()).collect();
    let (m, t) = similarity_fit(&source, &target);
    for p in positions.iter_mut() {
        *p = m * *p + t;
    }
}
