use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Match, MatchSet};
use crate::geometry::{Intrinsics, Pixel, Pose};
use crate::renderer::RgbdFrame;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleParams {
    pub n_target: usize,
    /// Isotropic Gaussian noise added to query pixels, per axis.
    pub noise_px_sigma: f64,
    /// Fraction of pairs whose query pixel is replaced by a uniform random pixel.
    pub outlier_rate: f64,
    pub seed: u64,
}

impl Default for OracleParams {
    fn default() -> Self {
        Self { n_target: 200, noise_px_sigma: 0.0, outlier_rate: 0.0, seed: 0 }
    }
}

/// Ground-truth correspondences from geometry.
///
/// Up to `n_target` finite-depth pixels of `rendered` are picked coarse to fine
/// (pixels on a stride-2ᵏ grid before those only on the 2ᵏ⁻¹ grid, shuffled
/// by seed within a level), lifted with the rendered depth and pose, and
/// projected into the camera at `query_pose`. Pixels that land outside the
/// query image or behind it are discarded. Query pixels then receive noise,
/// and `round(outlier_rate · N)` of them are replaced by uniform random
/// in-bounds pixels. Pairs are ordered row-major by rendered pixel.
pub fn match_oracle(rendered: &RgbdFrame, query_pose: &Pose, k: &Intrinsics, params: &OracleParams) -> MatchSet {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let depth = &rendered.depth;
    let (w, h) = (depth.width(), depth.height());

    let mut levels = 0u32;
    while (1usize << (levels + 1)) < w.max(h) {
        levels += 1;
    }
    let mut candidates: Vec<(u32, u64, usize, usize)> = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if !depth.is_valid(x, y) {
                continue;
            }
            let coarseness = (0..=levels)
                .rev()
                .find(|&l| x % (1 << l) == 0 && y % (1 << l) == 0)
                .unwrap_or(0);
            candidates.push((levels - coarseness, rng.random(), x, y));
        }
    }
    candidates.sort_unstable();
    candidates.truncate(params.n_target);
    candidates.sort_unstable_by_key(|&(_, _, x, y)| (y, x));

    let render_k = &rendered.intrinsics;
    let query_from_world = query_pose.inverse();
    let mut pairs: Vec<Match> = candidates
        .iter()
        .filter_map(|&(_, _, x, y)| {
            let u_r = Pixel::new(x as f64, y as f64);
            let p_cam = render_k.backproject(&u_r, depth.get(x, y)).ok()?;
            let p_world = rendered.pose.transform_point(&p_cam);
            let u_q = k.project(&query_from_world.transform_point(&p_world)).ok()?;
            k.contains(&u_q).then_some(Match { query: u_q, rendered: u_r, score: 1.0 })
        })
        .collect();

    if params.noise_px_sigma > 0.0 {
        let noise = Normal::new(0.0, params.noise_px_sigma).expect("finite sigma");
        for m in &mut pairs {
            m.query.x += noise.sample(&mut rng);
            m.query.y += noise.sample(&mut rng);
        }
    }

    let n_outliers = ((params.outlier_rate.clamp(0.0, 1.0) * pairs.len() as f64).round() as usize).min(pairs.len());
    let mut labels = vec![false; pairs.len()];
    for i in sample(&mut rng, pairs.len(), n_outliers).into_vec() {
        pairs[i].query = Pixel::new(
            rng.random_range(0.0..=(k.width as f64 - 1.0)),
            rng.random_range(0.0..=(k.height as f64 - 1.0)),
        );
        labels[i] = true;
    }
    MatchSet { pairs, outlier_labels: Some(labels) }
}
