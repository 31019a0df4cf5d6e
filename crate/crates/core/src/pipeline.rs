//! End-to-end driver: image and lens configuration in, magnified image,
//! distortion map and reports out.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::baselines::{render_baseline, warp_vertices, RadialLens, RadialLensKind};
use crate::distortion::{local_magnification, measure_baseline_distortion, measure_distortion, DistortionReport};
use crate::error::{LensError, Result};
use crate::flatten::{BoundaryMode, FlattenOutput, FlattenProblem, MetricParams, PrefactoredSystem};
use crate::lens::{load_polygon, mark_roi, LensShape, LensSpec};
use crate::lift::{adaptive_refine, lift_mesh, HeightProfile, ProfileKind, ProfileMode, RefineParams};
use crate::mesh::{build_grid_mesh, TriMesh};
use crate::raster::{load_image, rasterize, save_image, ImageBuffer};
use crate::texture::{solve_uv, DirichletMode, HarmonicSolveParams};
use crate::{Vec2, Vec3};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeshConfig {
    pub rows: usize,
    pub cols: usize,
    pub refine: bool,
    pub stretch_threshold: f64,
    pub min_angle_deg: f64,
}

impl Default for MeshConfig {
    fn default() -> Self {
        let r = RefineParams::default();
        MeshConfig {
            rows: 100,
            cols: 100,
            refine: true,
            stretch_threshold: r.stretch_threshold,
            min_angle_deg: r.min_angle_deg,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub alpha: f64,
    pub epsilon: f64,
    pub max_iter: usize,
    pub boundary: BoundaryMode,
    pub texture_tolerance: f64,
    pub texture_max_iterations: usize,
    pub dirichlet: DirichletMode,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let h = HarmonicSolveParams::default();
        SolverConfig {
            alpha: MetricParams::default().alpha,
            epsilon: 1e-3,
            max_iter: 50,
            boundary: BoundaryMode::FixedRectangle,
            texture_tolerance: h.tolerance,
            texture_max_iterations: h.max_iterations,
            dirichlet: h.dirichlet,
        }
    }
}

/// Extra artifacts written next to the output image.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmitConfig {
    pub heatmap: bool,
    pub energy_csv: bool,
    pub distortion_csv: bool,
    pub mesh_dump: bool,
    /// Fixed top of the heatmap color scale; per-image maximum when unset.
    pub heatmap_scale: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ShapeConfig {
    Circle { center: [f64; 2], radius: f64 },
    Polygon { points: Vec<[f64; 2]> },
    /// One `x y` pair per line.
    PolygonFile { path: PathBuf },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LensConfig {
    pub shape: ShapeConfig,
    #[serde(default)]
    pub profile: ProfileKind,
    pub h0: f64,
    #[serde(default)]
    pub mode: ProfileMode,
}

impl LensConfig {
    pub fn circle(center: Vec2, radius: f64, h0: f64) -> Self {
        LensConfig {
            shape: ShapeConfig::Circle {
                center: [center.x, center.y],
                radius,
            },
            profile: ProfileKind::Gaussian,
            h0,
            mode: ProfileMode::Normalized,
        }
    }

    pub fn to_spec(&self, base: &Path) -> Result<LensSpec> {
        let shape = match &self.shape {
            ShapeConfig::Circle { center, radius } => LensShape::Circle {
                center: *center,
                radius: *radius,
            },
            ShapeConfig::Polygon { points } => LensShape::Polygon {
                points: points.clone(),
            },
            ShapeConfig::PolygonFile { path } => LensShape::Polygon {
                points: load_polygon(&base.join(path))?
                    .iter()
                    .map(|p| [p.x, p.y])
                    .collect(),
            },
        };
        let spec = LensSpec {
            shape,
            profile: HeightProfile {
                kind: self.profile,
                h0: self.h0,
                mode: self.mode,
            },
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineConfig {
    pub kind: RadialLensKind,
    /// Defaults to the center magnification the geometric lens achieved.
    #[serde(default)]
    pub magnification: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub input: PathBuf,
    pub output: PathBuf,
    #[serde(default)]
    pub mesh: MeshConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub emit: EmitConfig,
    #[serde(default, rename = "lens")]
    pub lenses: Vec<LensConfig>,
    #[serde(default)]
    pub baseline: Option<BaselineConfig>,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl PipelineConfig {
    /// A centered Gaussian lens with `h0` equal to its radius on a 100x100
    /// mesh.
    pub fn default_scenario(width: u32, height: u32) -> Self {
        let (w, h) = (f64::from(width), f64::from(height));
        let radius = 0.16 * w.min(h);
        PipelineConfig {
            input: PathBuf::new(),
            output: PathBuf::new(),
            mesh: MeshConfig::default(),
            solver: SolverConfig::default(),
            emit: EmitConfig::default(),
            lenses: vec![LensConfig::circle(Vec2::new(0.5 * w, 0.5 * h), radius, radius)],
            baseline: None,
            base_dir: PathBuf::new(),
        }
    }

    pub fn from_toml(text: &str, origin: &Path) -> Result<Self> {
        let mut config: PipelineConfig = toml::from_str(text)
            .map_err(|e| LensError::Config(format!("{}: {}", origin.display(), e.message())))?;
        config.base_dir = origin.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| LensError::io(path, e))?;
        Self::from_toml(&text, path)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        self.base_dir.join(p)
    }

    /// Checks every parameter and turns the lens blocks into specs.
    pub fn lens_specs(&self) -> Result<Vec<LensSpec>> {
        if self.lenses.is_empty() {
            return Err(LensError::Config("at least one [[lens]] block is required".into()));
        }
        if self.mesh.rows < 2 || self.mesh.cols < 2 {
            return Err(LensError::Config("mesh needs at least 2x2 vertices".into()));
        }
        if self.mesh.refine && !(self.mesh.stretch_threshold > 1.0) {
            return Err(LensError::Config("stretch_threshold must exceed 1".into()));
        }
        self.metric().validate()?;
        self.harmonic().validate()?;
        if !(self.solver.epsilon > 0.0) || self.solver.max_iter == 0 {
            return Err(LensError::Config(
                "epsilon must be positive and max_iter at least 1".into(),
            ));
        }
        if let Some(b) = &self.baseline {
            if b.magnification.is_some_and(|m| !(m > 1.0)) {
                return Err(LensError::Config("baseline magnification must exceed 1".into()));
            }
        }
        self.lenses.iter().map(|l| l.to_spec(&self.base_dir)).collect()
    }

    pub fn metric(&self) -> MetricParams {
        MetricParams {
            alpha: self.solver.alpha,
        }
    }

    pub fn harmonic(&self) -> HarmonicSolveParams {
        HarmonicSolveParams {
            max_iterations: self.solver.texture_max_iterations,
            tolerance: self.solver.texture_tolerance,
            dirichlet: self.solver.dirichlet,
        }
    }

    /// Paths of every artifact this config would write.
    pub fn artifact_paths(&self) -> Artifacts {
        let out = self.resolve(&self.output);
        let stem = out.with_extension("");
        let with = |suffix: &str| PathBuf::from(format!("{}.{suffix}", stem.display()));
        Artifacts {
            heatmap: self.emit.heatmap.then(|| with("heatmap.png")),
            energy_csv: self.emit.energy_csv.then(|| with("energy.csv")),
            distortion_csv: self.emit.distortion_csv.then(|| with("distortion.csv")),
            mesh_dump: self.emit.mesh_dump.then(|| with("mesh.txt")),
            baseline: self.baseline.as_ref().map(|b| {
                with(&format!("{}.png", kind_name(b.kind)))
            }),
            image: out,
        }
    }
}

fn kind_name(kind: RadialLensKind) -> &'static str {
    match kind {
        RadialLensKind::Fisheye => "fisheye",
        RadialLensKind::Bifocal => "bifocal",
        RadialLensKind::ZoomIn => "zoomin",
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Artifacts {
    pub image: PathBuf,
    pub heatmap: Option<PathBuf>,
    pub energy_csv: Option<PathBuf>,
    pub distortion_csv: Option<PathBuf>,
    pub mesh_dump: Option<PathBuf>,
    pub baseline: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Config,
    Load,
    Mesh,
    MarkRoi,
    Lift,
    Refine,
    Texture,
    Flatten,
    Distortion,
    Rasterize,
    Baseline,
    Write,
}

impl Stage {
    pub fn name(&self) -> &'static str {
        match self {
            Stage::Config => "config",
            Stage::Load => "load",
            Stage::Mesh => "mesh",
            Stage::MarkRoi => "mark_roi",
            Stage::Lift => "lift",
            Stage::Refine => "refine",
            Stage::Texture => "texture",
            Stage::Flatten => "flatten",
            Stage::Distortion => "distortion",
            Stage::Rasterize => "rasterize",
            Stage::Baseline => "baseline",
            Stage::Write => "write",
        }
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, thiserror::Error)]
#[error("{stage} failed: {source}")]
pub struct StageError {
    pub stage: Stage,
    #[source]
    pub source: LensError,
}

impl StageError {
    /// 2 for configuration problems, 3 for I/O, 4 for solver failures.
    pub fn exit_code(&self) -> i32 {
        match (&self.source, self.stage) {
            (LensError::Io { .. } | LensError::Decode { .. }, _) => 3,
            (_, Stage::Config | Stage::MarkRoi) => 2,
            (LensError::Config(_) | LensError::Parse { .. }, _) => 2,
            _ => 4,
        }
    }
}

trait AtStage<T> {
    fn at(self, stage: Stage) -> std::result::Result<T, StageError>;
}

impl<T> AtStage<T> for Result<T> {
    fn at(self, stage: Stage) -> std::result::Result<T, StageError> {
        self.map_err(|source| StageError { stage, source })
    }
}

/// Factored systems keyed by everything their matrix depends on.
#[derive(Debug)]
pub struct FactorCache {
    entries: VecDeque<([u8; 32], Arc<PrefactoredSystem>)>,
    capacity: usize,
    pub hits: usize,
    pub misses: usize,
}

impl Default for FactorCache {
    fn default() -> Self {
        FactorCache::new(4)
    }
}

impl FactorCache {
    pub fn new(capacity: usize) -> Self {
        FactorCache {
            entries: VecDeque::new(),
            capacity: capacity.max(1),
            hits: 0,
            misses: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Returns the cached system for `key`, building it on a miss. The flag
    /// tells whether the entry was reused.
    pub fn get_or_build(
        &mut self,
        key: [u8; 32],
        build: impl FnOnce() -> Result<PrefactoredSystem>,
    ) -> Result<(Arc<PrefactoredSystem>, bool)> {
        if let Some(pos) = self.entries.iter().position(|(k, _)| *k == key) {
            let entry = self.entries.remove(pos).expect("present");
            let system = entry.1.clone();
            self.entries.push_front(entry);
            self.hits += 1;
            return Ok((system, true));
        }
        let system = Arc::new(build()?);
        self.misses += 1;
        self.entries.push_front((key, system.clone()));
        self.entries.truncate(self.capacity);
        Ok((system, false))
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct StageTiming {
    pub stage: &'static str,
    pub ms: f64,
}

#[derive(Clone, Debug)]
pub struct BaselineOutput {
    pub lens: RadialLens,
    pub image: ImageBuffer,
    pub distortion: DistortionReport,
    /// The geometric lens measured the same way, for comparison.
    pub geometric: DistortionReport,
}

#[derive(Clone, Debug)]
pub struct PipelineOutput {
    pub image: ImageBuffer,
    pub heatmap: ImageBuffer,
    /// The lifted (and possibly refined) mesh that was flattened.
    pub lifted: TriMesh,
    pub flatten: FlattenOutput,
    pub distortion: DistortionReport,
    pub texture_iterations: usize,
    pub texture_residual: f64,
    pub texture_converged: bool,
    /// Linear magnification at each lens's highest vertex.
    pub center_magnification: Vec<f64>,
    pub factor_cache_hit: bool,
    pub baseline: Option<BaselineOutput>,
    pub timings: Vec<StageTiming>,
    pub total_ms: f64,
}

impl PipelineOutput {
    pub fn stage_ms(&self, stage: &str) -> f64 {
        self.timings
            .iter()
            .filter(|t| t.stage == stage)
            .map(|t| t.ms)
            .sum()
    }

    pub fn summary(&self) -> String {
        let r = &self.flatten.report;
        let mut s = String::new();
        for t in &self.timings {
            let _ = writeln!(s, "{:>12}  {:9.2} ms", t.stage, t.ms);
        }
        let _ = writeln!(s, "{:>12}  {:9.2} ms", "total", self.total_ms);
        let _ = writeln!(
            s,
            "flatten: {} iterations, converged {}, energy {:.6e} -> {:.6e}, {} flipped",
            r.iterations,
            r.converged,
            r.initial_energy,
            r.final_energy(),
            r.flipped_triangles.len()
        );
        let _ = writeln!(
            s,
            "factorization: {:.2} ms{}",
            r.timings.factorization_ms,
            if self.factor_cache_hit { " (cached)" } else { "" }
        );
        let _ = writeln!(
            s,
            "texture: {} sweeps, residual {:.3e}",
            self.texture_iterations, self.texture_residual
        );
        let _ = writeln!(
            s,
            "distortion: total {:.6e}, max {:.6e}, mean {:.6e}",
            self.distortion.total, self.distortion.max, self.distortion.mean
        );
        for (i, m) in self.center_magnification.iter().enumerate() {
            let _ = writeln!(s, "lens {i}: center magnification {m:.3}x");
        }
        if let Some(b) = &self.baseline {
            let _ = writeln!(
                s,
                "baseline {} (m = {:.3}): rigid distortion {:.6e} vs geometric {:.6e}",
                kind_name(b.lens.kind),
                b.lens.magnification,
                b.distortion.total,
                b.geometric.total
            );
        }
        s
    }
}

/// Runs every stage in memory on an already loaded image.
pub fn execute(
    config: &PipelineConfig,
    texture: &ImageBuffer,
    cache: Option<&mut FactorCache>,
) -> std::result::Result<PipelineOutput, StageError> {
    let start = Instant::now();
    let mut timings = Vec::new();
    let mut clock = Instant::now();
    let mut lap = |stage: Stage, timings: &mut Vec<StageTiming>| {
        let now = Instant::now();
        timings.push(StageTiming {
            stage: stage.name(),
            ms: (now - clock).as_secs_f64() * 1e3,
        });
        clock = now;
    };

    let specs = config.lens_specs().at(Stage::Config)?;
    lap(Stage::Config, &mut timings);

    let dims = (texture.width(), texture.height());
    let mesh = build_grid_mesh(dims.0, dims.1, config.mesh.rows, config.mesh.cols).at(Stage::Mesh)?;
    lap(Stage::Mesh, &mut timings);

    let marked = mark_roi(&mesh, &specs).at(Stage::MarkRoi)?;
    lap(Stage::MarkRoi, &mut timings);

    let mut lifted = lift_mesh(&marked).at(Stage::Lift)?;
    lap(Stage::Lift, &mut timings);

    if config.mesh.refine {
        let params = RefineParams {
            stretch_threshold: config.mesh.stretch_threshold,
            min_angle_deg: config.mesh.min_angle_deg,
        };
        lifted = adaptive_refine(&lifted, &params).at(Stage::Refine)?;
        lap(Stage::Refine, &mut timings);
    }

    let textured = solve_uv(&lifted.mesh, &config.harmonic()).at(Stage::Texture)?;
    lap(Stage::Texture, &mut timings);

    let problem = FlattenProblem {
        mesh: &textured.mesh,
        metric: config.metric(),
        epsilon: config.solver.epsilon,
        max_iter: config.solver.max_iter,
        boundary: config.solver.boundary,
    };
    let (flat, hit) = flatten_cached(&problem, cache).at(Stage::Flatten)?;
    lap(Stage::Flatten, &mut timings);

    let distortion =
        measure_distortion(&flat.mesh, &flat.standards, &flat.metrics, &flat.weights).at(Stage::Distortion)?;
    let heatmap = distortion
        .heatmap(&flat.mesh, dims, config.emit.heatmap_scale)
        .at(Stage::Distortion)?;
    lap(Stage::Distortion, &mut timings);

    let image = rasterize(&flat.mesh, texture, dims).at(Stage::Rasterize)?;
    lap(Stage::Rasterize, &mut timings);

    let center_magnification: Vec<f64> = (0..specs.len())
        .map(|l| {
            let apex = (0..flat.mesh.num_vertices())
                .filter(|&v| textured.mesh.vertices[v].lens == Some(l))
                .max_by(|&a, &b| {
                    let (ha, hb) = (textured.mesh.vertices[a].height, textured.mesh.vertices[b].height);
                    ha.total_cmp(&hb).then(b.cmp(&a))
                });
            apex.map_or(1.0, |v| local_magnification(&flat.mesh, dims, v))
        })
        .collect();

    let baseline = match &config.baseline {
        None => None,
        Some(b) => {
            let out = run_baseline(b, &specs, &center_magnification, &textured.mesh, &flat, texture)
                .at(Stage::Baseline)?;
            lap(Stage::Baseline, &mut timings);
            Some(out)
        }
    };

    Ok(PipelineOutput {
        image,
        heatmap,
        lifted: textured.mesh.clone(),
        distortion,
        texture_iterations: textured.iterations,
        texture_residual: textured.residual,
        texture_converged: textured.converged,
        center_magnification,
        factor_cache_hit: hit,
        baseline,
        timings,
        total_ms: start.elapsed().as_secs_f64() * 1e3,
        flatten: flat,
    })
}

fn flatten_cached(
    problem: &FlattenProblem<'_>,
    cache: Option<&mut FactorCache>,
) -> Result<(FlattenOutput, bool)> {
    let Some(cache) = cache else {
        return Ok((problem.solve()?, false));
    };
    problem.validate()?;
    let t0 = Instant::now();
    let inputs = problem.system_inputs()?;
    let standardize_ms = t0.elapsed().as_secs_f64() * 1e3;
    let key = inputs.key(problem.mesh);
    let (system, hit) = cache.get_or_build(key, || problem.assemble(&inputs))?;
    let mut out = problem.solve_with(inputs, &system)?;
    out.report.timings.standardize_ms = standardize_ms;
    if !hit {
        out.report.timings.assembly_ms = system.assembly_ms;
        out.report.timings.factorization_ms = system.factorization_ms;
    }
    Ok((out, hit))
}

fn run_baseline(
    config: &BaselineConfig,
    specs: &[LensSpec],
    achieved: &[f64],
    lifted: &TriMesh,
    flat: &FlattenOutput,
    texture: &ImageBuffer,
) -> Result<BaselineOutput> {
    let (center, radius) = match &specs[0].shape {
        LensShape::Circle { center, radius } => (Vec2::new(center[0], center[1]), *radius),
        LensShape::Polygon { .. } => {
            return Err(LensError::invalid(
                "radial baselines need a circular first lens",
            ))
        }
    };
    let magnification = config.magnification.unwrap_or(achieved[0]).max(1.0 + 1e-6);
    let lens = RadialLens::new(config.kind, center, radius, magnification);
    lens.validate()?;
    let image = render_baseline(texture, &lens)?;
    let warped = warp_vertices(lifted, &lens);
    let distortion = measure_baseline_distortion(lifted, &warped, 0.0)?;
    // Each texture color starts at its texel position and ends where it is
    // drawn, the same reading the radial warps get.
    let scale = Vec2::new(f64::from(texture.width()), f64::from(texture.height()));
    let mut source = flat.mesh.clone();
    for v in &mut source.vertices {
        let p = v.uv.component_mul(&scale);
        v.position = Vec3::new(p.x, p.y, 0.0);
    }
    let ours: Vec<Vec2> = flat.mesh.vertices.iter().map(|v| v.xy()).collect();
    let geometric = measure_baseline_distortion(&source, &ours, 0.0)?;
    Ok(BaselineOutput {
        lens,
        image,
        distortion,
        geometric,
    })
}

/// Loads the input, runs every stage and writes the requested artifacts.
/// Nothing is left on disk if any stage fails.
pub fn run_pipeline(config: &PipelineConfig) -> std::result::Result<PipelineOutput, StageError> {
    let start = Instant::now();
    let texture = load_image(&config.resolve(&config.input)).at(Stage::Load)?;
    let load_ms = start.elapsed().as_secs_f64() * 1e3;
    let mut out = execute(config, &texture, None)?;
    out.timings.insert(
        0,
        StageTiming {
            stage: Stage::Load.name(),
            ms: load_ms,
        },
    );
    let write_start = Instant::now();
    write_artifacts(config, &out).at(Stage::Write)?;
    out.timings.push(StageTiming {
        stage: Stage::Write.name(),
        ms: write_start.elapsed().as_secs_f64() * 1e3,
    });
    out.total_ms = start.elapsed().as_secs_f64() * 1e3;
    Ok(out)
}

/// Writes the image and every requested artifact, removing what was already
/// written if one of them fails.
pub fn write_artifacts(config: &PipelineConfig, out: &PipelineOutput) -> Result<()> {
    let paths = config.artifact_paths();
    let mut written: Vec<PathBuf> = Vec::new();
    let result = (|| {
        let mut put = |path: &Path, write: &dyn Fn(&Path) -> Result<()>| {
            write(path)?;
            written.push(path.to_path_buf());
            Ok::<_, LensError>(())
        };
        put(&paths.image, &|p| save_image(&out.image, p))?;
        if let Some(p) = &paths.heatmap {
            put(p, &|p| save_image(&out.heatmap, p))?;
        }
        if let Some(p) = &paths.energy_csv {
            let csv = out.flatten.report.energy_csv();
            put(p, &|p| fs::write(p, &csv).map_err(|e| LensError::io(p, e)))?;
        }
        if let Some(p) = &paths.distortion_csv {
            let csv = out.distortion.to_csv();
            put(p, &|p| fs::write(p, &csv).map_err(|e| LensError::io(p, e)))?;
        }
        if let Some(p) = &paths.mesh_dump {
            put(p, &|p| out.flatten.mesh.save_text(p))?;
        }
        if let (Some(p), Some(b)) = (&paths.baseline, &out.baseline) {
            put(p, &|p| save_image(&b.image, p))?;
        }
        Ok(())
    })();
    if result.is_err() {
        for p in &written {
            let _ = fs::remove_file(p);
        }
    }
    result
}
