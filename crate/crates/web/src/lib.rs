//! WebAssembly bindings for the browser demo in `www/`.
//!
//! [`Demo`] holds a generated desk scene and exposes three operations:
//! rendering a (possibly offset) view, localizing a query from an offset
//! initial guess, and sweeping the success rate over pose offsets. Results
//! cross the boundary as JSON strings and RGBA byte buffers.

use serde_json::json;
use wasm_bindgen::prelude::*;

use splatloc::eval::presets::{desk_intrinsics, desk_scene, LEGO_LIMITS};
use splatloc::eval::{
    pose_errors, run_sensitivity_sweep, scene_scale, BenchmarkMethod, MatcherSpec, SweepAxis, SweepConfig,
};
use splatloc::geometry::{Intrinsics, Pose};
use splatloc::image::Image;
use splatloc::localizer::LocalizerConfig;
use splatloc::matching::OracleParams;
use splatloc::photometric::PhotometricConfig;
use splatloc::renderer::{render, RenderMode, Scene};

#[wasm_bindgen]
pub struct Demo {
    scene: Scene,
    k: Intrinsics,
    scale: f64,
}

fn rgba(image: &Image) -> Vec<u8> {
    image.to_rgb8().chunks(3).flat_map(|c| [c[0], c[1], c[2], 255]).collect()
}

fn parse_axis(axis: &str) -> Result<SweepAxis, JsError> {
    axis.parse().map_err(|e: String| JsError::new(&e))
}

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u64) -> Demo {
        let scene = desk_scene(seed);
        let scale = scene_scale(&scene.trajectory).expect("preset has a trajectory");
        Demo { scene, k: desk_intrinsics(), scale }
    }

    pub fn width(&self) -> u32 {
        self.k.width
    }

    pub fn height(&self) -> u32 {
        self.k.height
    }

    pub fn pose_count(&self) -> usize {
        self.scene.trajectory.len()
    }

    /// Reference deviation in degrees (yaw) or scene units (`x`).
    pub fn limit(&self, axis: &str) -> Result<f64, JsError> {
        Ok(match parse_axis(axis)? {
            SweepAxis::Yaw => LEGO_LIMITS.delta_theta_deg,
            SweepAxis::TranslationX => LEGO_LIMITS.delta_p,
        })
    }

    fn pose(&self, index: usize) -> Result<Pose, JsError> {
        self.scene
            .trajectory
            .get(index)
            .copied()
            .ok_or_else(|| JsError::new(&format!("pose index {index} out of range")))
    }

    fn initial(&self, index: usize, axis: &str, offset: f64) -> Result<(Pose, Pose), JsError> {
        let gt = self.pose(index)?;
        Ok((gt, parse_axis(axis)?.offset(&gt, offset)))
    }

    /// RGBA pixels of trajectory pose `index` moved by `offset` along `axis`.
    pub fn render_view(&self, index: usize, axis: &str, offset: f64, alpha: bool) -> Result<Vec<u8>, JsError> {
        let (_, pose) = self.initial(index, axis, offset)?;
        let mode = if alpha { RenderMode::Alpha } else { RenderMode::Opaque };
        Ok(rgba(&render(&self.scene, &pose, &self.k, mode).color))
    }

    /// RGBA pixels at a pose given as JSON: a row-major 4×4 camera-to-world matrix.
    pub fn render_pose(&self, pose_json: &str, alpha: bool) -> Result<Vec<u8>, JsError> {
        let pose: Pose = serde_json::from_str(pose_json).map_err(|e| JsError::new(&e.to_string()))?;
        let mode = if alpha { RenderMode::Alpha } else { RenderMode::Opaque };
        Ok(rgba(&render(&self.scene, &pose, &self.k, mode).color))
    }

    /// Localize the view at pose `index` starting from the offset guess.
    ///
    /// `method` is `"feature"` (oracle matches with the given noise and
    /// outlier rate) or `"photometric"`. Returns JSON with the status, the
    /// errors before and after, the matches and inlier indices, timings, and
    /// the rendered-frame count.
    pub fn localize(
        &self,
        index: usize,
        axis: &str,
        offset: f64,
        method: &str,
        noise_px: f64,
        outlier_rate: f64,
        seed: u64,
    ) -> Result<String, JsError> {
        let (gt, init) = self.initial(index, axis, offset)?;
        let query = render(&self.scene, &gt, &self.k, RenderMode::Alpha).color;
        let method = match method {
            "feature" => BenchmarkMethod::feature(
                "feature",
                MatcherSpec::Oracle(OracleParams {
                    noise_px_sigma: noise_px.max(0.0),
                    outlier_rate: outlier_rate.clamp(0.0, 1.0),
                    ..Default::default()
                }),
                LocalizerConfig::default(),
            ),
            "photometric" => BenchmarkMethod::photometric("photometric", PhotometricConfig::default()),
            other => return Err(JsError::new(&format!("unknown method '{other}'"))),
        };
        let res = method.run(&query, &gt, &init, &self.scene, &self.k, seed);
        let err = |p: &Pose| pose_errors(p, &gt, self.scale).expect("positive scale");
        let (before, after) = (err(&init), err(&res.pose));
        let matches: Vec<[f64; 4]> =
            res.matches.pairs.iter().map(|m| [m.query.x, m.query.y, m.rendered.x, m.rendered.y]).collect();
        Ok(json!({
            "status": res.status.as_str(),
            "pose": res.pose,
            "before": { "re_deg": before.re_deg, "te_norm": before.te_norm, "success": before.success },
            "after": { "re_deg": after.re_deg, "te_norm": after.te_norm, "success": after.success },
            "n_matches": res.n_matches,
            "n_inliers": res.n_inliers,
            "render_count": res.render_count,
            "time_ms": res.timings.total_s * 1e3,
            "matches": matches,
            "inliers": res.inlier_sources,
        })
        .to_string())
    }

    /// Feature-pipeline success rate over offsets `0 ..= max_fraction · limit`
    /// as JSON `[{offset_fraction, offset, success_rate}, ...]`.
    pub fn sweep(&self, axis: &str, steps: usize, trials: usize, max_fraction: f64, seed: u64) -> Result<String, JsError> {
        let axis_value = parse_axis(axis)?;
        let cfg = SweepConfig {
            axis: axis_value,
            n_steps: steps,
            trials_per_step: trials,
            limit: self.limit(axis)?,
            max_fraction,
            seed,
            scene_id: "desk".into(),
            query_render_mode: RenderMode::Alpha,
        };
        let method =
            BenchmarkMethod::feature("feature", MatcherSpec::Oracle(OracleParams::default()), LocalizerConfig::default());
        let curve = run_sensitivity_sweep(&self.scene, &self.k, &method, &cfg).map_err(|e| JsError::new(&e.to_string()))?;
        Ok(serde_json::to_string(&curve).expect("curve serializes"))
    }
}
