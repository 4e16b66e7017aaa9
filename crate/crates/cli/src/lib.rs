//! Command implementations behind the `splatloc` binary.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use splatloc::eval::presets::{
    DESK_ELEVATION_DEG, DESK_HALF_FOV_DEG, DESK_IMAGE_SIZE, DESK_N_SPLATS, DESK_OBJECT_RADIUS, DESK_ORBIT_POSES,
    DESK_ORBIT_RADIUS, LEGO_LIMITS,
};
use splatloc::eval::{
    deviation_limits, pose_errors, run_benchmark, run_sensitivity_sweep, scene_scale, BenchmarkConfig,
    BenchmarkMethod, EvalError, MatcherSpec, Metrics, PerturbationLimits, Protocol, SweepAxis, SweepConfig,
};
use splatloc::geometry::{GeometryError, Intrinsics, Pose};
use splatloc::io::{self, IoError};
use splatloc::localizer::LocalizerConfig;
use splatloc::matching::{ClassicalParams, OracleParams};
use splatloc::photometric::PhotometricConfig;
use splatloc::renderer::{generate_test_scene, make_orbit_trajectory, render, RenderMode, Scene, TestSceneSpec};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    /// Process exit code for this error.
    pub fn exit_code(&self) -> i32 {
        2
    }
}

type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "splatloc", version, about = "Camera localization against splat scenes from a single rendered view")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a random splat scene with an orbit trajectory.
    GenScene(GenSceneArgs),
    /// Render the color image and depth map at one trajectory pose.
    Render(RenderArgs),
    /// Localize one query image.
    Localize(LocalizeArgs),
    /// Run one method over trajectory queries under an initial-pose protocol.
    Benchmark(BenchmarkArgs),
    /// Run the feature pipeline and the photometric baseline on paired trials.
    Compare(CompareArgs),
    /// Success rate as a function of a deterministic initial-pose offset.
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
pub struct GenSceneArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = DESK_N_SPLATS)]
    pub splats: usize,
    /// Radius of the ball holding the splat centers.
    #[arg(long, default_value_t = DESK_OBJECT_RADIUS)]
    pub object_radius: f64,
    #[arg(long, default_value_t = DESK_ORBIT_RADIUS)]
    pub orbit_radius: f64,
    #[arg(long, default_value_t = DESK_ORBIT_POSES)]
    pub poses: usize,
    #[arg(long, default_value_t = DESK_ELEVATION_DEG)]
    pub elevation: f64,
}

#[derive(Debug, Clone, Args)]
pub struct CameraArgs {
    #[arg(long, default_value_t = DESK_IMAGE_SIZE)]
    pub width: u32,
    #[arg(long, default_value_t = DESK_IMAGE_SIZE)]
    pub height: u32,
    /// Horizontal half field of view in degrees.
    #[arg(long, default_value_t = DESK_HALF_FOV_DEG)]
    pub half_fov: f64,
}

impl CameraArgs {
    pub fn intrinsics(&self) -> Result<Intrinsics> {
        Ok(Intrinsics::from_half_fov(self.width, self.height, self.half_fov)?)
    }
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long)]
    pub pose_index: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "opaque")]
    pub mode: RenderMode,
    #[command(flatten)]
    pub camera: CameraArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Feature,
    Photometric,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MatcherArg {
    Oracle,
    Classical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProtocolArg {
    Randomized,
    Chen,
    GroundTruth,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AxisArg {
    Yaw,
    X,
}

/// Settings of the feature pipeline and the photometric baseline.
#[derive(Debug, Clone, Args)]
pub struct MethodArgs {
    #[arg(long, value_enum, default_value_t = MatcherArg::Oracle)]
    pub matcher: MatcherArg,
    /// Oracle: number of correspondences to sample.
    #[arg(long, default_value_t = 200)]
    pub n_matches: usize,
    /// Oracle: Gaussian pixel noise (standard deviation, px).
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    /// Oracle: fraction of correspondences replaced by random pixels.
    #[arg(long, default_value_t = 0.0)]
    pub outlier_rate: f64,
    /// Mode of the single reference rendering of the feature pipeline.
    #[arg(long, default_value = "opaque")]
    pub reference_mode: RenderMode,
    /// Photometric baseline: maximum descent iterations.
    #[arg(long, default_value_t = 300)]
    pub photometric_iterations: usize,
}

impl MethodArgs {
    pub fn build(&self, method: MethodArg) -> Result<BenchmarkMethod> {
        if !(0.0..=1.0).contains(&self.outlier_rate) {
            return Err(CliError::Usage(format!("--outlier-rate must lie in [0, 1], got {}", self.outlier_rate)));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(CliError::Usage(format!("--noise must be a finite value >= 0, got {}", self.noise)));
        }
        Ok(match method {
            MethodArg::Feature => {
                let matcher = match self.matcher {
                    MatcherArg::Oracle => MatcherSpec::Oracle(OracleParams {
                        n_target: self.n_matches,
                        noise_px_sigma: self.noise,
                        outlier_rate: self.outlier_rate,
                        seed: 0,
                    }),
                    MatcherArg::Classical => MatcherSpec::Classical(ClassicalParams::default()),
                };
                let localizer = LocalizerConfig { render_mode: self.reference_mode, ..Default::default() };
                BenchmarkMethod::feature("feature", matcher, localizer)
            }
            MethodArg::Photometric => BenchmarkMethod::photometric(
                "photometric",
                PhotometricConfig { max_iterations: self.photometric_iterations, ..Default::default() },
            ),
        })
    }
}

/// Initial-pose protocol and its deviation limits.
#[derive(Debug, Clone, Args)]
pub struct ProtocolArgs {
    #[arg(long, value_enum, default_value_t = ProtocolArg::Randomized)]
    pub protocol: ProtocolArg,
    /// Rotation limit in degrees; defaults to the field-of-view rule.
    #[arg(long)]
    pub delta_theta: Option<f64>,
    /// Translation limit in scene units; defaults to the field-of-view rule.
    #[arg(long)]
    pub delta_p: Option<f64>,
    /// Use the Lego-scene limits (33.84°, 2.44).
    #[arg(long, conflicts_with_all = ["delta_theta", "delta_p"])]
    pub lego: bool,
}

impl ProtocolArgs {
    pub fn limits(&self, k: &Intrinsics, scene: &Scene) -> Result<PerturbationLimits> {
        if self.lego {
            return Ok(LEGO_LIMITS);
        }
        let rule = deviation_limits(k, scene_scale(&scene.trajectory)?, None);
        let limits = PerturbationLimits {
            delta_theta_deg: self.delta_theta.unwrap_or(rule.delta_theta_deg),
            delta_p: self.delta_p.unwrap_or(rule.delta_p),
        };
        if !(limits.delta_theta_deg >= 0.0 && limits.delta_p >= 0.0) {
            return Err(CliError::Usage("deviation limits must be >= 0".into()));
        }
        Ok(limits)
    }

    pub fn protocol(&self, k: &Intrinsics, scene: &Scene) -> Result<Protocol> {
        Ok(match self.protocol {
            ProtocolArg::Randomized => Protocol::Randomized(self.limits(k, scene)?),
            ProtocolArg::Chen => Protocol::Chen,
            ProtocolArg::GroundTruth => Protocol::GroundTruth,
        })
    }
}

#[derive(Debug, Args)]
pub struct LocalizeArgs {
    #[arg(long)]
    pub scene: PathBuf,
    /// Query image (PPM). Requires --gt-pose for the oracle matcher and for metrics.
    #[arg(long, required_unless_present = "query_index", conflicts_with = "query_index")]
    pub query: Option<PathBuf>,
    /// Ground-truth pose file of the query image.
    #[arg(long, requires = "query")]
    pub gt_pose: Option<PathBuf>,
    /// Use the scene trajectory pose with this index as the query.
    #[arg(long)]
    pub query_index: Option<usize>,
    /// Initial pose file.
    #[arg(long, required_unless_present = "protocol", conflicts_with = "protocol")]
    pub init_pose: Option<PathBuf>,
    /// Sample the initial pose from a protocol instead (needs --seed and a ground-truth pose).
    #[arg(long, value_enum, requires = "seed")]
    pub protocol: Option<ProtocolArg>,
    #[arg(long)]
    pub delta_theta: Option<f64>,
    #[arg(long)]
    pub delta_p: Option<f64>,
    #[arg(long, conflicts_with_all = ["delta_theta", "delta_p"])]
    pub lego: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum, default_value_t = MethodArg::Feature)]
    pub method: MethodArg,
    #[command(flatten)]
    pub method_args: MethodArgs,
    /// Render mode of the query image when --query-index is used.
    #[arg(long, default_value = "alpha")]
    pub query_mode: RenderMode,
    #[command(flatten)]
    pub camera: CameraArgs,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the match table.
    #[arg(long)]
    pub dump_matches: bool,
}

#[derive(Debug, Clone, Args)]
pub struct TrialArgs {
    #[arg(long)]
    pub scene: PathBuf,
    /// Number of trajectory queries, spread evenly over the trajectory (default: all).
    #[arg(long)]
    pub queries: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub protocol: ProtocolArgs,
    #[command(flatten)]
    pub method_args: MethodArgs,
    #[arg(long, default_value = "alpha")]
    pub query_mode: RenderMode,
    #[command(flatten)]
    pub camera: CameraArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchmarkArgs {
    #[arg(long, value_enum, default_value_t = MethodArg::Feature)]
    pub method: MethodArg,
    #[command(flatten)]
    pub trials: TrialArgs,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub trials: TrialArgs,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long, value_enum, default_value_t = AxisArg::Yaw)]
    pub axis: AxisArg,
    #[arg(long, default_value_t = 10)]
    pub steps: usize,
    #[arg(long, default_value_t = 20)]
    pub trials: usize,
    /// Largest offset as a multiple of the limit.
    #[arg(long, default_value_t = 1.5)]
    pub max_fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = MethodArg::Feature)]
    pub method: MethodArg,
    /// Deviation limits; only the one matching the axis is used.
    #[command(flatten)]
    pub protocol: ProtocolArgs,
    #[command(flatten)]
    pub method_args: MethodArgs,
    #[arg(long, default_value = "alpha")]
    pub query_mode: RenderMode,
    #[command(flatten)]
    pub camera: CameraArgs,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenScene(a) => gen_scene(&a),
        Command::Render(a) => render_cmd(&a),
        Command::Localize(a) => localize_cmd(&a),
        Command::Benchmark(a) => benchmark_cmd(&a.trials, &[a.method]),
        Command::Compare(a) => benchmark_cmd(&a.trials, &[MethodArg::Feature, MethodArg::Photometric]),
        Command::Sweep(a) => sweep_cmd(&a),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|source| IoError::Io { path: dir.to_path_buf(), source }.into())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|source| IoError::Io { path: path.to_path_buf(), source }.into())
}

fn write_json(path: &Path, value: &Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("JSON value serializes");
    text.push('\n');
    write_text(path, &text)
}

fn scene_id(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "scene".into())
}

fn trajectory_pose(scene: &Scene, index: usize, path: &Path) -> Result<Pose> {
    scene.trajectory.get(index).copied().ok_or_else(|| {
        CliError::Usage(format!(
            "{}: pose index {index} out of range (trajectory has {} poses)",
            path.display(),
            scene.trajectory.len()
        ))
    })
}

fn gen_scene(a: &GenSceneArgs) -> Result<()> {
    if !(a.object_radius > 0.0 && a.orbit_radius > 0.0) || a.poses == 0 {
        return Err(CliError::Usage("radii must be > 0 and --poses >= 1".into()));
    }
    let mut scene = generate_test_scene(&TestSceneSpec { n_splats: a.splats, bounding_radius: a.object_radius, seed: a.seed });
    scene.trajectory = make_orbit_trajectory(a.orbit_radius, a.poses, a.elevation);
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    io::write_scene(&a.out, &scene)?;
    Ok(())
}

fn render_cmd(a: &RenderArgs) -> Result<()> {
    let scene = io::read_scene(&a.scene)?;
    let pose = trajectory_pose(&scene, a.pose_index, &a.scene)?;
    let frame = render(&scene, &pose, &a.camera.intrinsics()?, a.mode);
    create_dir(&a.out)?;
    io::write_ppm(&a.out.join(format!("color_{:04}.ppm", a.pose_index)), &frame.color)?;
    io::write_pfm(&a.out.join(format!("depth_{:04}.pfm", a.pose_index)), &frame.depth)?;
    Ok(())
}

fn metrics_json(m: &Metrics) -> Value {
    json!({ "re_deg": m.re_deg, "te_norm": m.te_norm, "success": m.success })
}

fn localize_cmd(a: &LocalizeArgs) -> Result<()> {
    let scene = io::read_scene(&a.scene)?;
    let k = a.camera.intrinsics()?;
    let (query, gt) = match (&a.query, a.query_index) {
        (Some(path), _) => {
            let image = io::read_ppm(path)?;
            if (image.width(), image.height()) != (k.width as usize, k.height as usize) {
                return Err(CliError::Usage(format!(
                    "{}: image is {}x{}, camera is {}x{}",
                    path.display(),
                    image.width(),
                    image.height(),
                    k.width,
                    k.height
                )));
            }
            let gt = a.gt_pose.as_deref().map(io::read_pose).transpose()?;
            (image, gt)
        }
        (None, Some(index)) => {
            let gt = trajectory_pose(&scene, index, &a.scene)?;
            (render(&scene, &gt, &k, a.query_mode).color, Some(gt))
        }
        (None, None) => return Err(CliError::Usage("either --query or --query-index is required".into())),
    };

    let seed = a.seed.unwrap_or(0);
    let init = match (&a.init_pose, a.protocol) {
        (Some(path), _) => io::read_pose(path)?,
        (None, Some(protocol)) => {
            let gt = gt.ok_or_else(|| CliError::Usage("--protocol needs a ground-truth pose".into()))?;
            let protocol_args =
                ProtocolArgs { protocol, delta_theta: a.delta_theta, delta_p: a.delta_p, lego: a.lego };
            let scale = scene_scale(&scene.trajectory)?;
            protocol_args.protocol(&k, &scene)?.sample(&gt, scale, splatloc::eval::derive_seed(seed, &["init"]))
        }
        (None, None) => return Err(CliError::Usage("either --init-pose or --protocol is required".into())),
    };

    let method = a.method_args.build(a.method)?;
    let oracle = matches!(method.kind, splatloc::eval::MethodKind::Feature { matcher: MatcherSpec::Oracle(_), .. });
    let gt_for_method = match (gt, oracle) {
        (Some(gt), _) => gt,
        (None, true) => {
            return Err(CliError::Usage("the oracle matcher needs the query's ground-truth pose (--gt-pose or --query-index)".into()))
        }
        (None, false) => init,
    };
    let res = method.run(&query, &gt_for_method, &init, &scene, &k, seed);

    let metrics = match gt {
        Some(gt) => {
            let scale = if scene.trajectory.is_empty() { 1.0 } else { scene_scale(&scene.trajectory)? };
            json!({
                "scale": scale,
                "init": metrics_json(&pose_errors(&init, &gt, scale)?),
                "final": metrics_json(&pose_errors(&res.pose, &gt, scale)?),
            })
        }
        None => Value::Null,
    };
    let record = json!({
        "method": a.method.to_possible_value().map(|v| v.get_name().to_string()),
        "matcher": if a.method == MethodArg::Feature { a.method_args.matcher.to_possible_value().map(|v| v.get_name().to_string()) } else { None },
        "seed": seed,
        "status": res.status.as_str(),
        "pose": res.pose.to_rows(),
        "init_pose": init.to_rows(),
        "n_matches": res.n_matches,
        "n_inliers": res.n_inliers,
        "render_count": res.render_count,
        "metrics": metrics,
    });

    create_dir(&a.out)?;
    write_json(&a.out.join("result.json"), &record)?;
    io::write_poses(&a.out.join("pose.txt"), &[res.pose])?;
    write_json(&a.out.join("timings.json"), &serde_json::to_value(res.timings).expect("timings serialize"))?;
    if a.dump_matches {
        write_text(&a.out.join("matches.txt"), &io::format_matches(&res.matches))?;
    }
    Ok(())
}

/// `count` indices spread evenly over `0..len`.
pub fn spread_indices(len: usize, count: Option<usize>) -> Vec<usize> {
    let count = count.unwrap_or(len).min(len);
    (0..count).map(|i| i * len / count).collect()
}

fn benchmark_cmd(a: &TrialArgs, methods: &[MethodArg]) -> Result<()> {
    let scene = io::read_scene(&a.scene)?;
    let k = a.camera.intrinsics()?;
    if scene.trajectory.is_empty() {
        return Err(CliError::Usage(format!("{}: scene has no trajectory to draw queries from", a.scene.display())));
    }
    let protocol = a.protocol.protocol(&k, &scene)?;
    let methods = methods.iter().map(|&m| a.method_args.build(m)).collect::<Result<Vec<_>>>()?;
    let queries = spread_indices(scene.trajectory.len(), a.queries);
    let cfg = BenchmarkConfig { scene_id: scene_id(&a.scene), protocol, seed: a.seed, query_render_mode: a.query_mode };
    let report = run_benchmark(&scene, &k, &queries, &methods, &cfg)?;

    create_dir(&a.out)?;
    write_text(&a.out.join("records.csv"), &io::trial_records_csv(&report))?;
    let run = json!({
        "scene_id": cfg.scene_id,
        "protocol": protocol,
        "seed": a.seed,
        "queries": queries,
        "methods": methods,
        "camera": k,
    });
    write_text(&a.out.join("summary.json"), &io::summary_json(&report, &run))?;
    write_text(&a.out.join("timings.json"), &io::timings_json(&report))?;
    Ok(())
}

fn sweep_cmd(a: &SweepArgs) -> Result<()> {
    let scene = io::read_scene(&a.scene)?;
    let k = a.camera.intrinsics()?;
    let limits = a.protocol.limits(&k, &scene)?;
    let axis = match a.axis {
        AxisArg::Yaw => SweepAxis::Yaw,
        AxisArg::X => SweepAxis::TranslationX,
    };
    let limit = match axis {
        SweepAxis::Yaw => limits.delta_theta_deg,
        SweepAxis::TranslationX => limits.delta_p,
    };
    let method = a.method_args.build(a.method)?;
    let cfg = SweepConfig {
        axis,
        n_steps: a.steps,
        trials_per_step: a.trials,
        limit,
        max_fraction: a.max_fraction,
        seed: a.seed,
        scene_id: scene_id(&a.scene),
        query_render_mode: a.query_mode,
    };
    let curve = run_sensitivity_sweep(&scene, &k, &method, &cfg)?;

    create_dir(&a.out)?;
    write_text(&a.out.join(format!("sweep_{}.txt", axis.name())), &io::format_sweep(&curve))?;
    write_json(
        &a.out.join(format!("sweep_{}.json", axis.name())),
        &json!({ "config": cfg, "method": method, "curve": curve }),
    )?;
    Ok(())
}

/// Build the global worker pool from `SPLATLOC_THREADS` (unset or 0: one per core).
pub fn configure_threads() -> Result<()> {
    let threads = match std::env::var("SPLATLOC_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map_err(|_| CliError::Usage(format!("SPLATLOC_THREADS must be a non-negative integer, got '{v}'")))?,
        Err(_) => 0,
    };
    // Fails only if a pool already exists, in which case it is kept.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    Ok(())
}
