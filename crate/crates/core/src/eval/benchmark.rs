use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use web_time::Instant;

use super::{derive_seed, pose_errors, sample_initial_pose, sample_initial_pose_chen, scene_scale, EvalError, Metrics, PerturbationLimits};
use crate::geometry::{Intrinsics, Pose};
use crate::image::Image;
use crate::localizer::{localize, LocalizationResult, LocalizationStatus, LocalizerConfig};
use crate::matching::{ClassicalMatcher, ClassicalParams, OracleMatcher, OracleParams};
use crate::photometric::{localize_photometric, PhotometricConfig};
use crate::renderer::{render, RenderMode, Scene};

/// Matcher selection for a feature method. Seeds are filled in per trial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum MatcherSpec {
    Oracle(OracleParams),
    Classical(ClassicalParams),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum MethodKind {
    Feature { matcher: MatcherSpec, localizer: LocalizerConfig },
    Photometric(PhotometricConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkMethod {
    pub name: String,
    pub kind: MethodKind,
}

impl BenchmarkMethod {
    pub fn feature(name: &str, matcher: MatcherSpec, localizer: LocalizerConfig) -> Self {
        Self { name: name.to_string(), kind: MethodKind::Feature { matcher, localizer } }
    }

    pub fn photometric(name: &str, cfg: PhotometricConfig) -> Self {
        Self { name: name.to_string(), kind: MethodKind::Photometric(cfg) }
    }

    /// Localize one query. `seed` drives every random choice of the method.
    pub fn run(
        &self,
        query: &Image,
        gt: &Pose,
        init: &Pose,
        scene: &Scene,
        k: &Intrinsics,
        seed: u64,
    ) -> LocalizationResult {
        match &self.kind {
            MethodKind::Feature { matcher, localizer } => {
                let mut cfg = *localizer;
                cfg.pnp.ransac.seed = seed;
                match matcher {
                    MatcherSpec::Oracle(params) => {
                        let m = OracleMatcher { params: OracleParams { seed, ..*params }, query_pose: *gt };
                        localize(query, init, scene, k, &m, &cfg)
                    }
                    MatcherSpec::Classical(params) => localize(query, init, scene, k, &ClassicalMatcher(*params), &cfg),
                }
            }
            MethodKind::Photometric(cfg) => localize_photometric(query, init, scene, k, cfg),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "protocol", rename_all = "snake_case")]
pub enum Protocol {
    Randomized(PerturbationLimits),
    Chen,
    /// Start every trial at the ground-truth pose.
    GroundTruth,
}

impl Protocol {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Randomized(_) => "randomized",
            Self::Chen => "chen",
            Self::GroundTruth => "ground_truth",
        }
    }

    pub fn sample(&self, gt: &Pose, scale: f64, seed: u64) -> Pose {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        match self {
            Self::Randomized(limits) => sample_initial_pose(gt, limits, &mut rng),
            Self::Chen => sample_initial_pose_chen(gt, scale, &mut rng),
            Self::GroundTruth => *gt,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    pub scene_id: String,
    pub protocol: Protocol,
    pub seed: u64,
    /// Mode used to render the query images at their ground-truth poses.
    pub query_render_mode: RenderMode,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            scene_id: super::presets::DESK_SCENE_ID.to_string(),
            protocol: Protocol::GroundTruth,
            seed: 0,
            query_render_mode: RenderMode::Alpha,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub scene_id: String,
    pub query_id: usize,
    pub method: String,
    pub protocol: String,
    /// Seed of the initial pose; equal across methods for the same query.
    pub init_seed: u64,
    pub method_seed: u64,
    pub init_metrics: Metrics,
    pub final_metrics: Metrics,
    pub status: LocalizationStatus,
    pub n_matches: usize,
    pub n_inliers: usize,
    /// Whether the inlier set is free of injected outliers; known only for the oracle.
    pub inliers_outlier_free: Option<bool>,
    pub render_count: usize,
    pub init_pose: Pose,
    pub final_pose: Pose,
    /// Wall-clock time of the localization call. Not deterministic.
    pub time_s: f64,
}

/// Deterministic per-method summary, recomputable from the trial records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub method: String,
    pub n_trials: usize,
    pub mean_re_deg: f64,
    pub mean_te_norm: f64,
    /// Percentage of trials meeting both thresholds.
    pub success_pct: f64,
    /// Whether the mean errors themselves meet the thresholds.
    pub mean_metrics_success: bool,
    pub solved_pct: f64,
    pub mean_render_count: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingAggregate {
    pub method: String,
    pub mean_time_s: f64,
    pub total_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub records: Vec<TrialRecord>,
    pub aggregates: Vec<Aggregate>,
    pub timings: Vec<TimingAggregate>,
}

impl BenchmarkReport {
    pub fn from_records(records: Vec<TrialRecord>) -> Self {
        let mut methods: Vec<&str> = Vec::new();
        for r in &records {
            if !methods.contains(&r.method.as_str()) {
                methods.push(&r.method);
            }
        }
        let aggregates = methods.iter().map(|m| aggregate(&records, m)).collect();
        let timings = methods
            .iter()
            .map(|m| {
                let times: Vec<f64> = records.iter().filter(|r| r.method == *m).map(|r| r.time_s).collect();
                let total: f64 = times.iter().sum();
                TimingAggregate { method: m.to_string(), mean_time_s: total / times.len() as f64, total_time_s: total }
            })
            .collect();
        Self { records, aggregates, timings }
    }

    pub fn aggregate_for(&self, method: &str) -> Option<&Aggregate> {
        self.aggregates.iter().find(|a| a.method == method)
    }

    pub fn timing_for(&self, method: &str) -> Option<&TimingAggregate> {
        self.timings.iter().find(|a| a.method == method)
    }
}

/// Summary of the records of one method. Panics if it has no records.
pub fn aggregate(records: &[TrialRecord], method: &str) -> Aggregate {
    let rs: Vec<&TrialRecord> = records.iter().filter(|r| r.method == method).collect();
    assert!(!rs.is_empty(), "no records for method {method}");
    let n = rs.len() as f64;
    let mean = |f: &dyn Fn(&TrialRecord) -> f64| rs.iter().map(|r| f(r)).sum::<f64>() / n;
    let mean_re_deg = mean(&|r| r.final_metrics.re_deg);
    let mean_te_norm = mean(&|r| r.final_metrics.te_norm);
    Aggregate {
        method: method.to_string(),
        n_trials: rs.len(),
        mean_re_deg,
        mean_te_norm,
        success_pct: 100.0 * mean(&|r| r.final_metrics.success as u8 as f64),
        mean_metrics_success: Metrics::new(mean_re_deg, mean_te_norm).success,
        solved_pct: 100.0 * mean(&|r| (r.status == LocalizationStatus::Solved) as u8 as f64),
        mean_render_count: mean(&|r| r.render_count as f64),
    }
}

/// Run every method on every query of the scene trajectory.
///
/// Each query gets one initial pose per protocol, shared by all methods so
/// the trials are paired. Trials run sequentially so that timings are
/// comparable across methods; each method may parallelize internally.
pub fn run_benchmark(
    scene: &Scene,
    k: &Intrinsics,
    query_ids: &[usize],
    methods: &[BenchmarkMethod],
    cfg: &BenchmarkConfig,
) -> Result<BenchmarkReport, EvalError> {
    if query_ids.is_empty() {
        return Err(EvalError::NoQueries);
    }
    if methods.is_empty() {
        return Err(EvalError::InvalidConfig("no methods".into()));
    }
    let traj = &scene.trajectory;
    if let Some(&index) = query_ids.iter().find(|&&i| i >= traj.len()) {
        return Err(EvalError::QueryIndexOutOfRange { index, len: traj.len() });
    }
    let scale = scene_scale(traj)?;
    let protocol = cfg.protocol.name();

    let mut records = Vec::with_capacity(query_ids.len() * methods.len());
    for &qid in query_ids {
        let gt = traj[qid];
        let query = render(scene, &gt, k, cfg.query_render_mode).color;
        let qid_str = qid.to_string();
        let init_seed = derive_seed(cfg.seed, &[&cfg.scene_id, &qid_str, protocol]);
        let init = cfg.protocol.sample(&gt, scale, init_seed);
        let init_metrics = pose_errors(&init, &gt, scale)?;
        for method in methods {
            let method_seed = derive_seed(cfg.seed, &[&cfg.scene_id, &qid_str, &method.name, protocol]);
            let start = Instant::now();
            let res = method.run(&query, &gt, &init, scene, k, method_seed);
            let time_s = start.elapsed().as_secs_f64();
            records.push(TrialRecord {
                scene_id: cfg.scene_id.clone(),
                query_id: qid,
                method: method.name.clone(),
                protocol: protocol.to_string(),
                init_seed,
                method_seed,
                init_metrics,
                final_metrics: pose_errors(&res.pose, &gt, scale)?,
                status: res.status,
                n_matches: res.n_matches,
                n_inliers: res.n_inliers,
                inliers_outlier_free: inliers_outlier_free(&res),
                render_count: res.render_count,
                init_pose: init,
                final_pose: res.pose,
                time_s,
            });
        }
    }
    Ok(BenchmarkReport::from_records(records))
}

/// `Some(true)` when no PnP inlier is a labelled outlier; `None` without labels.
pub fn inliers_outlier_free(res: &LocalizationResult) -> Option<bool> {
    let labels = res.matches.outlier_labels.as_ref()?;
    Some(res.inlier_sources.iter().all(|&i| !labels[i]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::presets::{desk_intrinsics, desk_scene};

    fn oracle() -> BenchmarkMethod {
        BenchmarkMethod::feature("oracle", MatcherSpec::Oracle(OracleParams::default()), LocalizerConfig::default())
    }

    #[test]
    fn ground_truth_init_is_exact() {
        let scene = desk_scene(1);
        let report = run_benchmark(&scene, &desk_intrinsics(), &[0], &[oracle()], &BenchmarkConfig::default()).unwrap();
        let agg = report.aggregate_for("oracle").unwrap();
        assert_eq!(agg.success_pct, 100.0);
        assert!(agg.mean_re_deg < 1e-6);
        assert_eq!(report.records[0].inliers_outlier_free, Some(true));
    }

    #[test]
    fn paired_inits_and_recomputable_aggregates() {
        let scene = desk_scene(2);
        let methods = [
            oracle(),
            BenchmarkMethod::photometric("photometric", PhotometricConfig { max_iterations: 1, ..Default::default() }),
        ];
        let cfg = BenchmarkConfig {
            protocol: Protocol::Randomized(PerturbationLimits { delta_theta_deg: 10.0, delta_p: 0.2 }),
            seed: 3,
            ..Default::default()
        };
        let report = run_benchmark(&scene, &desk_intrinsics(), &[0, 7], &methods, &cfg).unwrap();
        assert_eq!(report.records.len(), 4);
        assert_eq!(report.aggregates.len(), 2);
        for pair in report.records.chunks(2) {
            assert_eq!(pair[0].init_seed, pair[1].init_seed);
            assert_eq!(pair[0].init_pose, pair[1].init_pose);
            assert_ne!(pair[0].method_seed, pair[1].method_seed);
        }
        assert_eq!(BenchmarkReport::from_records(report.records.clone()).aggregates, report.aggregates);
        let again = run_benchmark(&scene, &desk_intrinsics(), &[0, 7], &methods, &cfg).unwrap();
        assert_eq!(again.aggregates, report.aggregates);
    }

    #[test]
    fn rejects_bad_queries() {
        let scene = desk_scene(1);
        let k = desk_intrinsics();
        let cfg = BenchmarkConfig::default();
        assert_eq!(run_benchmark(&scene, &k, &[], &[oracle()], &cfg).unwrap_err(), EvalError::NoQueries);
        assert!(matches!(
            run_benchmark(&scene, &k, &[40], &[oracle()], &cfg),
            Err(EvalError::QueryIndexOutOfRange { index: 40, len: 40 })
        ));
    }
}
