//! The localization pipeline: render once at the initial guess, match the
//! query against that rendering, lift matches to 3D with the rendered depth,
//! and estimate the pose with RANSAC PnP. Any failure returns the initial
//! guess unchanged.

use serde::{Deserialize, Serialize};
use web_time::Instant;

use crate::geometry::{Intrinsics, Pose};
use crate::image::{DepthMap, Image};
use crate::matching::{MatchSet, Matcher};
use crate::pnp::{solve_pnp_ransac, Correspondence, LiftedSet, PnpConfig, MIN_CORRESPONDENCES};
use crate::renderer::{render, RenderMode, Scene};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LocalizationStatus {
    Solved,
    FallbackInitial,
}

impl LocalizationStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Solved => "solved",
            Self::FallbackInitial => "fallback_initial",
        }
    }
}

/// Wall-clock seconds spent in each stage.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Timings {
    pub render_s: f64,
    pub match_s: f64,
    pub lift_s: f64,
    pub pnp_s: f64,
    pub total_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalizationResult {
    pub pose: Pose,
    pub status: LocalizationStatus,
    pub n_matches: usize,
    pub n_inliers: usize,
    pub timings: Timings,
    /// Number of frames rendered while localizing.
    pub render_count: usize,
    /// The matches produced for this query, when the method uses matching.
    pub matches: MatchSet,
    /// Indices into `matches` of the correspondences PnP kept as inliers.
    pub inlier_sources: Vec<usize>,
}

impl LocalizationResult {
    fn fallback(init: &Pose) -> Self {
        Self {
            pose: *init,
            status: LocalizationStatus::FallbackInitial,
            n_matches: 0,
            n_inliers: 0,
            timings: Timings::default(),
            render_count: 0,
            matches: MatchSet::default(),
            inlier_sources: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LocalizerConfig {
    /// How the reference frame at the initial pose is rendered.
    pub render_mode: RenderMode,
    pub pnp: PnpConfig,
}

/// Lift rendered-image pixels to world points using the rendered depth.
///
/// Depth is read at the nearest integer pixel. Pairs whose rendered pixel is
/// out of bounds or has no valid depth, and pairs whose query pixel lies
/// outside the image, are dropped; survivors keep their input order and
/// remember their match index in `source`.
pub fn lift_matches(matches: &MatchSet, depth: &DepthMap, k: &Intrinsics, init: &Pose) -> LiftedSet {
    let pairs = matches
        .pairs
        .iter()
        .enumerate()
        .filter_map(|(source, m)| {
            if !k.contains(&m.query) || !(m.query.x.is_finite() && m.query.y.is_finite()) {
                return None;
            }
            let (x, y) = k.pixel_index(&m.rendered)?;
            if x >= depth.width() || y >= depth.height() {
                return None;
            }
            let p_cam = k.backproject(&m.rendered, depth.get(x, y)).ok()?;
            Some(Correspondence { pixel: m.query, world: init.transform_point(&p_cam), source })
        })
        .collect();
    LiftedSet::new(pairs)
}

/// Estimate the camera pose of `query` starting from `init`.
pub fn localize(
    query: &Image,
    init: &Pose,
    scene: &Scene,
    k: &Intrinsics,
    matcher: &dyn Matcher,
    cfg: &LocalizerConfig,
) -> LocalizationResult {
    let start = Instant::now();
    let rendered = render(scene, init, k, cfg.render_mode);
    let t_render = Instant::now();
    let matches = matcher.find_matches(query, &rendered);
    let t_match = Instant::now();
    let lifted = lift_matches(&matches, &rendered.depth, k, init);
    let t_lift = Instant::now();
    let solved = if lifted.len() >= MIN_CORRESPONDENCES {
        solve_pnp_ransac(&lifted, k, init, &cfg.pnp).ok()
    } else {
        None
    };
    let end = Instant::now();

    let timings = Timings {
        render_s: (t_render - start).as_secs_f64(),
        match_s: (t_match - t_render).as_secs_f64(),
        lift_s: (t_lift - t_match).as_secs_f64(),
        pnp_s: (end - t_lift).as_secs_f64(),
        total_s: (end - start).as_secs_f64(),
    };
    let n_matches = matches.len();
    match solved {
        Some(res) if res.converged => LocalizationResult {
            pose: res.pose,
            status: LocalizationStatus::Solved,
            n_matches,
            n_inliers: res.inlier_count,
            timings,
            render_count: 1,
            inlier_sources: lifted
                .pairs
                .iter()
                .zip(&res.inlier_mask)
                .filter(|(_, &m)| m)
                .map(|(c, _)| c.source)
                .collect(),
            matches,
        },
        _ => LocalizationResult {
            n_matches,
            timings,
            render_count: 1,
            matches,
            ..LocalizationResult::fallback(init)
        },
    }
}
