//! Render-and-compare baseline: gradient descent on the photometric loss
//! between the query and a rendering at the current pose estimate.
//!
//! Gradients come from central finite differences over the six twist
//! components (12 renders per iteration), followed by a backtracking line
//! search along the normalized descent direction. Renders use alpha mode so
//! that the loss varies smoothly with the pose.

use serde::{Deserialize, Serialize};
use web_time::Instant;

use crate::geometry::{Intrinsics, Pose, Twist};
use crate::image::Image;
use crate::localizer::{LocalizationResult, LocalizationStatus, Timings};
use crate::matching::MatchSet;
use crate::parallel::map_indices;
use crate::renderer::{render, RenderMode, Scene};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineSearch {
    /// Length (twist norm) of the first trial step of every iteration.
    pub initial_step: f64,
    pub shrink: f64,
    pub max_backtracks: usize,
}

impl Default for LineSearch {
    fn default() -> Self {
        Self { initial_step: 1e-2, shrink: 0.5, max_backtracks: 8 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhotometricConfig {
    pub max_iterations: usize,
    pub fd_step: f64,
    pub line_search: LineSearch,
    /// Stop when an accepted step lowers the loss by less than this.
    pub loss_tolerance: f64,
    /// Stop when the accepted step is shorter than this.
    pub step_tolerance: f64,
    pub render_mode: RenderMode,
}

impl Default for PhotometricConfig {
    fn default() -> Self {
        Self {
            max_iterations: 300,
            fd_step: 1e-4,
            line_search: LineSearch::default(),
            loss_tolerance: 1e-10,
            step_tolerance: 1e-8,
            render_mode: RenderMode::Alpha,
        }
    }
}

/// Mean squared difference over all pixels and channels.
pub fn photometric_loss(a: &Image, b: &Image) -> f64 {
    assert_eq!((a.width(), a.height()), (b.width(), b.height()), "images must have equal dimensions");
    let n = a.data().len();
    if n == 0 {
        return 0.0;
    }
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n as f64
}

/// What the descent did, for inspection and tests.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DescentTrace {
    pub iterations: usize,
    pub accepted_steps: usize,
    /// Loss at the start and after every accepted step.
    pub losses: Vec<f64>,
    pub render_count: usize,
}

pub fn localize_photometric(
    query: &Image,
    init: &Pose,
    scene: &Scene,
    k: &Intrinsics,
    cfg: &PhotometricConfig,
) -> LocalizationResult {
    refine_photometric(query, init, scene, k, cfg).0
}

/// [`localize_photometric`] that also returns its [`DescentTrace`].
pub fn refine_photometric(
    query: &Image,
    init: &Pose,
    scene: &Scene,
    k: &Intrinsics,
    cfg: &PhotometricConfig,
) -> (LocalizationResult, DescentTrace) {
    let start = Instant::now();
    let loss_at = |pose: &Pose| photometric_loss(query, &render(scene, pose, k, cfg.render_mode).color);

    let mut pose = *init;
    let mut loss = loss_at(&pose);
    let mut trace = DescentTrace { losses: vec![loss], render_count: 1, ..Default::default() };

    while trace.iterations < cfg.max_iterations && loss > 0.0 {
        trace.iterations += 1;
        let h = cfg.fd_step;
        let probes = map_indices(12, |j| {
            let mut delta = Twist::zero();
            delta.0[j / 2] = if j % 2 == 0 { h } else { -h };
            loss_at(&pose.retract(&delta))
        });
        trace.render_count += 12;
        let gradient = nalgebra::Vector6::from_fn(|i, _| (probes[2 * i] - probes[2 * i + 1]) / (2.0 * h));
        let norm = gradient.norm();
        if !(norm > 0.0) {
            break;
        }
        let direction = -gradient / norm;

        let mut step = cfg.line_search.initial_step;
        let mut accepted = None;
        for _ in 0..=cfg.line_search.max_backtracks {
            let candidate = pose.retract(&Twist(direction * step));
            let candidate_loss = loss_at(&candidate);
            trace.render_count += 1;
            if candidate_loss < loss {
                accepted = Some((candidate, candidate_loss));
                break;
            }
            step *= cfg.line_search.shrink;
        }
        let Some((candidate, candidate_loss)) = accepted else { break };
        let decrease = loss - candidate_loss;
        pose = candidate;
        loss = candidate_loss;
        trace.accepted_steps += 1;
        trace.losses.push(loss);
        if decrease < cfg.loss_tolerance || step < cfg.step_tolerance {
            break;
        }
    }

    let total = start.elapsed().as_secs_f64();
    let result = LocalizationResult {
        pose,
        status: LocalizationStatus::Solved,
        n_matches: 0,
        n_inliers: 0,
        timings: Timings { render_s: total, total_s: total, ..Default::default() },
        render_count: trace.render_count,
        matches: MatchSet::default(),
        inlier_sources: Vec::new(),
    };
    (result, trace)
}
