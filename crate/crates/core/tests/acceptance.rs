//! Acceptance checks, one line each.
//!
//! Every check prints `PASS` or `FAIL` with the measured numbers. The binary
//! exits successfully either way so the rest of the test suite still runs;
//! set `GEOLENS_STRICT=1` to turn any failure into a non-zero exit.

use std::path::PathBuf;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use geolens_core::baselines::RadialLensKind;
use geolens_core::distortion::measure_distortion;
use geolens_core::flatten::{
    blended_metric, edge_weights, opposite_edge, standardize_mesh, standardize_triangle,
    total_energy, MetricMatrix, PrefactoredSystem,
};
use geolens_core::lens::mark_roi;
use geolens_core::lift::lift_mesh;
use geolens_core::mesh::build_grid_mesh;
use geolens_core::pipeline::{execute, BaselineConfig, LensConfig, PipelineConfig};
use geolens_core::raster::load_image;
use geolens_core::texture::{harmonic_rows, is_free, solve_uv};
use geolens_core::{
    BoundaryMode, DirichletMode, HarmonicSolveParams, HeightProfile, ImageBuffer, LensSpec, Mat2,
    PipelineOutput, TriMesh, Vec2, Vec3,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn checker(size: u32) -> ImageBuffer {
    ImageBuffer::checkerboard(size, size, 16, [240, 240, 240, 255], [30, 30, 30, 255])
}

fn run(config: &PipelineConfig, texture: &ImageBuffer) -> PipelineOutput {
    execute(config, texture, None).expect("pipeline runs")
}

fn identity_pipeline() -> Outcome {
    let scenarios = scenario_dir();
    let textures = [
        ("checker", checker(256)),
        ("city", load_image(&scenarios.join("city.png")).expect("bundled image")),
    ];
    let mut worst_rms = 0.0f64;
    let mut worst_energy = 0.0f64;
    let mut most_iters = 0;
    for (_, tex) in &textures {
        let mut c = PipelineConfig::default_scenario(tex.width(), tex.height());
        c.lenses[0].h0 = 0.0;
        let out = run(&c, tex);
        worst_rms = worst_rms.max(out.image.rms_difference(tex).unwrap());
        worst_energy = worst_energy.max(out.flatten.report.final_energy());
        most_iters = most_iters.max(out.flatten.report.iterations);
    }
    outcome(
        worst_rms < 1.0 / 255.0 && worst_energy < 1e-9 && most_iters == 1,
        format!("rms {worst_rms:.2e} (limit {:.2e}), energy {worst_energy:.2e}, iterations {most_iters}", 1.0 / 255.0),
    )
}

fn standardization_isometry() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    let mut tested = 0;
    while tested < 10_000 {
        let p: [Vec3; 3] = std::array::from_fn(|_| {
            Vec3::new(
                rng.random_range(-50.0..50.0),
                rng.random_range(-50.0..50.0),
                rng.random_range(-50.0..50.0),
            )
        });
        let Ok(st) = standardize_triangle(p, tested) else {
            continue;
        };
        for (a, b) in [(0, 1), (1, 2), (2, 0)] {
            let l3 = (p[b] - p[a]).norm();
            let l2 = (st.p[b] - st.p[a]).norm();
            worst = worst.max((l3 - l2).abs() / l3);
        }
        tested += 1;
    }
    outcome(worst < 1e-9, format!("{tested} triangles, worst relative edge error {worst:.2e}"))
}

fn metric_algebra() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let (mut orth, mut det, mut exact) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..10_000 {
        let j = Mat2::from_fn(|_, _| rng.random_range(-4.0..4.0));
        if j.determinant().abs() < 1e-8 {
            continue;
        }
        let rigid = blended_metric(&j, 0.0).m;
        orth = orth.max((rigid.transpose() * rigid - Mat2::identity()).norm());
        det = det.max((rigid.determinant() - 1.0).abs());
        exact = exact.max((blended_metric(&j, 1.0).m - j).norm());
    }
    let half = blended_metric(&Mat2::new(2.0, 0.0, 0.0, 1.0), 0.5).m;
    let diag = (half - Mat2::new(1.5, 0.0, 0.0, 1.0)).norm();
    outcome(
        orth < 1e-9 && det < 1e-9 && exact < 1e-9 && diag < 1e-12,
        format!("|MtM - I| {orth:.1e}, |det - 1| {det:.1e}, |M - J| {exact:.1e}, diag(2,1)@0.5 error {diag:.1e}"),
    )
}

/// Dense normal equations of the quadratic energy, written out edge by edge.
fn dense_positions(
    mesh: &TriMesh,
    fixed: &[usize],
    standards: &[geolens_core::StandardTriangle],
    weights: &[[f64; 3]],
    metrics: &[MetricMatrix],
) -> Vec<Vec2> {
    let n = mesh.num_vertices();
    let free: Vec<usize> = (0..n).filter(|v| !fixed.contains(v)).collect();
    let slot = |v: usize| free.iter().position(|&f| f == v);
    let mut a = DMatrix::<f64>::zeros(free.len(), free.len());
    let mut b = DMatrix::<f64>::zeros(free.len(), 2);
    for (t, tri) in mesh.triangles.iter().enumerate() {
        for k in 0..3 {
            let (la, lb) = opposite_edge(k);
            let (va, vb) = (tri[la], tri[lb]);
            let w = weights[t][k];
            let d = metrics[t].m * (standards[t].p[lb] - standards[t].p[la]);
            // w |x_b - x_a - d|^2: gradient rows at a and b.
            for (v, sign) in [(vb, 1.0), (va, -1.0)] {
                let Some(i) = slot(v) else { continue };
                for (u, s2) in [(vb, 1.0), (va, -1.0)] {
                    match slot(u) {
                        Some(j) => a[(i, j)] += w * sign * s2,
                        None => {
                            let p = mesh.vertices[u].xy();
                            b[(i, 0)] -= w * sign * s2 * p.x;
                            b[(i, 1)] -= w * sign * s2 * p.y;
                        }
                    }
                }
                b[(i, 0)] += w * sign * d.x;
                b[(i, 1)] += w * sign * d.y;
            }
        }
    }
    let x = a.lu().solve(&b).expect("nonsingular");
    let mut out: Vec<Vec2> = mesh.vertices.iter().map(|v| v.xy()).collect();
    for (i, &v) in free.iter().enumerate() {
        out[v] = Vec2::new(x[(i, 0)], x[(i, 1)]);
    }
    out
}

fn solver_optimality() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut mesh = build_grid_mesh(30, 30, 4, 4).unwrap();
    for v in &mut mesh.vertices {
        v.position.z = rng.random_range(0.0..6.0);
        v.height = v.position.z;
    }
    let standards = standardize_mesh(&mesh).unwrap();
    let weights = edge_weights(&mesh, &standards).unwrap();
    let metrics: Vec<MetricMatrix> = (0..mesh.num_triangles())
        .map(|_| {
            let j = Mat2::from_fn(|_, _| rng.random_range(-2.0..2.0)) + Mat2::identity() * 2.5;
            blended_metric(&j, rng.random_range(0.0..1.0))
        })
        .collect();
    let fixed = BoundaryMode::FixedRectangle.fixed_vertices(&mesh);
    let system = PrefactoredSystem::assemble(mesh.num_vertices(), &mesh.triangles, &weights, &fixed).unwrap();
    let anchor: Vec<Vec2> = mesh.vertices.iter().map(|v| v.xy()).collect();
    let ours = system.solve_positions(&metrics, &standards, &anchor).unwrap();
    let dense = dense_positions(&mesh, &fixed, &standards, &weights, &metrics);
    let diff = ours
        .iter()
        .zip(&dense)
        .map(|(a, b)| (a - b).abs().max())
        .fold(0.0, f64::max);

    let energy = |p: &[Vec2]| total_energy(&mesh.triangles, p, &standards, &weights, &metrics);
    let base = energy(&ours);
    let mut worst_drop = 0.0f64;
    for v in (0..mesh.num_vertices()).filter(|v| !fixed.contains(v)) {
        for axis in 0..2 {
            for step in [1e-4, -1e-4] {
                let mut p = ours.clone();
                p[v][axis] += step;
                worst_drop = worst_drop.max(base - energy(&p));
            }
        }
    }
    outcome(
        diff < 1e-9 && worst_drop <= 1e-12 * base.max(1.0),
        format!("max coordinate difference {diff:.2e}, largest energy drop under perturbation {worst_drop:.2e}"),
    )
}

fn energy_monotonicity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let tex = checker(256);
    let alphas = [0.0, 0.1, 0.5];
    let mut rises = Vec::new();
    let mut worst_sum = 0.0f64;
    let mut objective_ok = true;
    for i in 0..20 {
        let r = rng.random_range(20.0..60.0);
        let center = Vec2::new(rng.random_range(r..256.0 - r), rng.random_range(r..256.0 - r));
        let h0 = rng.random_range(0.05..=3.0) * r;
        let alpha = alphas[i % 3];
        let mut c = PipelineConfig::default_scenario(256, 256);
        c.lenses[0] = LensConfig::circle(center, r, h0);
        c.solver.alpha = alpha;
        let out = run(&c, &tex);
        let rep = &out.flatten.report;
        let rise = rep
            .energy_trace
            .windows(2)
            .map(|w| (w[1] - w[0]) / w[0].max(1e-300))
            .fold(f64::NEG_INFINITY, f64::max);
        if rise > 1e-12 {
            rises.push(format!("#{i} alpha {alpha} h0/r {:.2}: +{rise:.1e}", h0 / r));
        }
        objective_ok &= rep.objective_trace.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12));
        let d = measure_distortion(&out.flatten.mesh, &out.flatten.standards, &out.flatten.metrics, &out.flatten.weights)
            .unwrap();
        let fe = rep.final_energy();
        worst_sum = worst_sum.max((d.total - fe).abs() / fe.max(1e-300));
    }
    outcome(
        rises.is_empty() && worst_sum < 1e-9,
        format!(
            "20 configs, energy rises: {}, objective non-increasing: {objective_ok}, worst |sum E_i - E| / E {worst_sum:.1e}",
            if rises.is_empty() { "none".to_string() } else { rises.join("; ") }
        ),
    )
}

fn convergence_budget() -> Outcome {
    let tex = checker(512);
    let out = run(&PipelineConfig::default_scenario(512, 512), &tex);
    let rep = &out.flatten.report;
    outcome(
        rep.converged && rep.iterations <= 10,
        format!("{} iterations on {} vertices, converged {}", rep.iterations, out.lifted.num_vertices(), rep.converged),
    )
}

fn performance() -> Outcome {
    let mut parts = Vec::new();
    let mut pass = true;
    for (n, limit) in [(100usize, 0.3), (200, 1.3)] {
        let size = 4 * n as u32;
        let tex = checker(size);
        let mut c = PipelineConfig::default_scenario(size, size);
        c.mesh.rows = n;
        c.mesh.cols = n;
        let start = Instant::now();
        let out = run(&c, &tex);
        let total = start.elapsed().as_secs_f64();
        let t = &out.flatten.report.timings;
        let worst_iter = t.iteration_ms.iter().copied().fold(0.0, f64::max) / 1e3;
        let prefactor = (t.assembly_ms + t.factorization_ms) / 1e3;
        pass &= worst_iter <= limit && prefactor <= 1.0;
        parts.push(format!(
            "{} vertices: worst iteration {:.3} s (limit {limit}), prefactorization {:.3} s, pipeline {:.2} s",
            out.lifted.num_vertices(),
            worst_iter,
            prefactor,
            total
        ));
    }
    outcome(pass, parts.join("; "))
}

fn scenario_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn no_flips_on_bundled_examples() -> Outcome {
    let mut parts = Vec::new();
    let mut pass = true;
    let mut paths: Vec<PathBuf> = std::fs::read_dir(scenario_dir())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().and_then(|e| e.to_str()) == Some("toml"))
        .collect();
    paths.sort();
    for path in &paths {
        let config = PipelineConfig::load(path).unwrap();
        let tex = load_image(&config.resolve(&config.input)).unwrap();
        let out = run(&config, &tex);
        let flips = out.flatten.report.flipped_triangles.len();
        pass &= flips == 0;
        parts.push(format!("{} {flips}", path.file_stem().unwrap().to_string_lossy()));
    }
    outcome(pass && !paths.is_empty(), format!("flips per example: {}", parts.join(", ")))
}

fn texture_instance(center: Vec2, r: f64, h0: f64) -> TriMesh {
    let mesh = build_grid_mesh(100, 100, 21, 21).unwrap();
    let spec = LensSpec::circle(center, r, HeightProfile::gaussian(h0));
    let marked = mark_roi(&mesh, &[spec]).unwrap();
    lift_mesh(&marked).unwrap().mesh
}

/// Direct LU solve of the mean-value system.
fn dense_uv(mesh: &TriMesh, mode: DirichletMode) -> Vec<Vec2> {
    let rows = harmonic_rows(mesh, mode).unwrap();
    let slot = |v: usize| rows.iter().position(|r| r.vertex == v);
    let n = rows.len();
    let mut a = DMatrix::<f64>::zeros(n, n);
    let mut bu = DVector::<f64>::zeros(n);
    let mut bv = DVector::<f64>::zeros(n);
    for (i, row) in rows.iter().enumerate() {
        a[(i, i)] = row.weights.total();
        for (&nb, &w) in row.weights.neighbors.iter().zip(&row.weights.weights) {
            match slot(nb) {
                Some(j) => a[(i, j)] -= w,
                None => {
                    bu[i] += w * mesh.vertices[nb].uv.x;
                    bv[i] += w * mesh.vertices[nb].uv.y;
                }
            }
        }
    }
    let lu = a.lu();
    let (u, v) = (lu.solve(&bu).unwrap(), lu.solve(&bv).unwrap());
    let mut out: Vec<Vec2> = mesh.vertices.iter().map(|v| v.uv).collect();
    for (i, row) in rows.iter().enumerate() {
        out[row.vertex] = Vec2::new(u[i], v[i]);
    }
    out
}

fn texture_oracle() -> Outcome {
    let instances = [
        (Vec2::new(50.0, 50.0), 30.0, 30.0),
        (Vec2::new(35.0, 60.0), 25.0, 60.0),
        (Vec2::new(50.0, 50.0), 45.0, 10.0),
    ];
    let mut worst = 0.0f64;
    let mut principle = true;
    for mode in [DirichletMode::OutsideRoi, DirichletMode::OuterBoundary] {
        for &(c, r, h0) in &instances {
            let mesh = texture_instance(c, r, h0);
            let params = HarmonicSolveParams {
                dirichlet: mode,
                ..Default::default()
            };
            let gs = solve_uv(&mesh, &params).unwrap();
            let direct = dense_uv(&mesh, mode);
            for (a, b) in gs.mesh.vertices.iter().zip(&direct) {
                worst = worst.max((a.uv - b).abs().max());
            }
            let fixed: Vec<Vec2> = (0..mesh.num_vertices())
                .filter(|&v| !is_free(&mesh, v, mode))
                .map(|v| mesh.vertices[v].uv)
                .collect();
            for axis in 0..2 {
                let lo = fixed.iter().map(|p| p[axis]).fold(f64::INFINITY, f64::min);
                let hi = fixed.iter().map(|p| p[axis]).fold(f64::NEG_INFINITY, f64::max);
                principle &= gs.mesh.vertices.iter().all(|v| v.uv[axis] >= lo - 1e-12 && v.uv[axis] <= hi + 1e-12);
            }
        }
    }
    outcome(
        worst < 1e-6 && principle,
        format!("6 instances on 21x21, worst Gauss-Seidel vs LU difference {worst:.2e}, maximum principle {principle}"),
    )
}

fn baseline_comparison() -> Outcome {
    let tex = checker(512);
    let mut parts = Vec::new();
    let mut pass = true;
    for n in [100usize, 50] {
        let mut c = PipelineConfig::default_scenario(512, 512);
        c.mesh.rows = n;
        c.mesh.cols = n;
        c.baseline = Some(BaselineConfig {
            kind: RadialLensKind::Fisheye,
            magnification: None,
        });
        let out = run(&c, &tex);
        let b = out.baseline.as_ref().unwrap();
        if n == 100 {
            pass = b.geometric.total < b.distortion.total;
        }
        parts.push(format!(
            "{n}x{n} mesh, m {:.3}: geometric {:.4e} vs fisheye {:.4e}",
            b.lens.magnification, b.geometric.total, b.distortion.total
        ));
    }
    outcome(pass, parts.join("; "))
}

/// Mean width of the two checker cells on either side of the cell edge
/// nearest the lens center, read off the rendered image, over the
/// undistorted cell width.
fn checker_pitch(img: &ImageBuffer, center: u32, cell: u32) -> f64 {
    let y = center + cell / 4;
    let dark = |x: u32| img.get(x, y)[0] < 128;
    let edges: Vec<i64> = (0..img.width() - 1)
        .filter(|&x| dark(x) != dark(x + 1))
        .map(|x| i64::from(x) + 1)
        .collect();
    let Some(k) = (0..edges.len()).min_by_key(|&k| (edges[k] - i64::from(center)).abs()) else {
        return 0.0;
    };
    if k == 0 || k + 1 >= edges.len() {
        return 0.0;
    }
    0.5 * (edges[k + 1] - edges[k - 1]) as f64 / f64::from(cell)
}

fn center_magnification() -> Outcome {
    let tex = checker(512);
    let c = PipelineConfig::default_scenario(512, 512);
    let out = run(&c, &tex);
    let pitch = checker_pitch(&out.image, 256, 16);
    let local = out.center_magnification[0];
    outcome(
        pitch >= 1.5 && c.solver.boundary == BoundaryMode::FixedRectangle,
        format!("checker pitch {pitch:.3}x, local area magnification {local:.3}x, outer boundary fixed"),
    )
}

type Check = (&'static str, fn() -> Outcome);

fn main() {
    let checks: [Check; 11] = [
        ("identity pipeline", identity_pipeline),
        ("standardization isometry", standardization_isometry),
        ("metric algebra", metric_algebra),
        ("solver optimality oracle", solver_optimality),
        ("energy monotonicity", energy_monotonicity),
        ("convergence budget", convergence_budget),
        ("performance", performance),
        ("no flips on bundled examples", no_flips_on_bundled_examples),
        ("texture solve oracle", texture_oracle),
        ("baseline comparison", baseline_comparison),
        ("center magnification", center_magnification),
    ];
    let mut failed = 0;
    for (i, (name, check)) in checks.iter().enumerate() {
        let o = check();
        if !o.pass {
            failed += 1;
        }
        println!("{} {:>2} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, i + 1, o.detail);
    }
    println!("{} of {} acceptance checks passed", checks.len() - failed, checks.len());
    if failed > 0 && std::env::var_os("GEOLENS_STRICT").is_some_and(|v| v == "1") {
        std::process::exit(1);
    }
}
