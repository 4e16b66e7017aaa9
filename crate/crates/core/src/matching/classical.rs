use serde::{Deserialize, Serialize};

use super::{Match, MatchSet};
use crate::geometry::Pixel;
use crate::image::{GrayImage, Image};

/// Harris sensitivity constant.
const HARRIS_K: f64 = 0.04;
/// Half-width of the non-maximum suppression window.
const NMS_RADIUS: usize = 2;
/// Below this maximum Harris response an image is treated as textureless.
const MIN_RESPONSE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassicalParams {
    pub max_keypoints: usize,
    /// Corner threshold relative to the strongest Harris response in the image.
    pub corner_threshold: f64,
    /// Side of the square descriptor patch; must be odd.
    pub patch_size: usize,
    /// Lowe ratio: best / second-best descriptor distance must be below this.
    pub ratio_threshold: f64,
}

impl Default for ClassicalParams {
    fn default() -> Self {
        Self { max_keypoints: 500, corner_threshold: 0.01, patch_size: 11, ratio_threshold: 0.7 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keypoint {
    pub x: usize,
    pub y: usize,
    pub response: f64,
}

/// Harris corners after non-maximum suppression, strongest `max_keypoints`
/// kept, returned in row-major order. Corners closer than `margin` to the
/// border are skipped.
pub fn detect_corners(gray: &GrayImage, max_keypoints: usize, rel_threshold: f64, margin: usize) -> Vec<Keypoint> {
    let (w, h) = (gray.width, gray.height);
    if w <= 2 * margin + 2 || h <= 2 * margin + 2 {
        return Vec::new();
    }
    let response = harris_response(gray);
    let max_r = response.data.iter().cloned().fold(0.0, f64::max);
    if max_r <= MIN_RESPONSE {
        return Vec::new();
    }
    let threshold = rel_threshold * max_r;
    let lo = margin.max(1);
    let mut corners = Vec::new();
    for y in lo..h - lo {
        for x in lo..w - lo {
            let r = response.get(x, y);
            if r <= threshold {
                continue;
            }
            let mut is_max = true;
            'window: for ny in y.saturating_sub(NMS_RADIUS)..=(y + NMS_RADIUS).min(h - 1) {
                for nx in x.saturating_sub(NMS_RADIUS)..=(x + NMS_RADIUS).min(w - 1) {
                    if (nx, ny) == (x, y) {
                        continue;
                    }
                    let other = response.get(nx, ny);
                    // Ties go to the earlier pixel in row-major order.
                    let earlier = (ny, nx) < (y, x);
                    if other > r || (earlier && other == r) {
                        is_max = false;
                        break 'window;
                    }
                }
            }
            if is_max {
                corners.push(Keypoint { x, y, response: r });
            }
        }
    }
    corners.sort_by(|a, b| b.response.total_cmp(&a.response).then((a.y, a.x).cmp(&(b.y, b.x))));
    corners.truncate(max_keypoints);
    corners.sort_by_key(|c| (c.y, c.x));
    corners
}

fn harris_response(gray: &GrayImage) -> GrayImage {
    let (w, h) = (gray.width, gray.height);
    let at = |x: isize, y: isize| gray.get(x.clamp(0, w as isize - 1) as usize, y.clamp(0, h as isize - 1) as usize);
    let mut ixx = GrayImage::new(w, h, 0.0);
    let mut iyy = GrayImage::new(w, h, 0.0);
    let mut ixy = GrayImage::new(w, h, 0.0);
    for y in 0..h as isize {
        for x in 0..w as isize {
            let gx = (at(x + 1, y - 1) + 2.0 * at(x + 1, y) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x - 1, y) + at(x - 1, y + 1));
            let gy = (at(x - 1, y + 1) + 2.0 * at(x, y + 1) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x, y - 1) + at(x + 1, y - 1));
            let (gx, gy) = (gx / 8.0, gy / 8.0);
            ixx.set(x as usize, y as usize, gx * gx);
            iyy.set(x as usize, y as usize, gy * gy);
            ixy.set(x as usize, y as usize, gx * gy);
        }
    }
    let (sxx, syy, sxy) = (binomial_blur(&ixx), binomial_blur(&iyy), binomial_blur(&ixy));
    let mut out = GrayImage::new(w, h, 0.0);
    for i in 0..w * h {
        let (a, b, c) = (sxx.data[i], syy.data[i], sxy.data[i]);
        out.data[i] = a * b - c * c - HARRIS_K * (a + b) * (a + b);
    }
    out
}

/// Separable 5-tap binomial smoothing with clamped borders.
fn binomial_blur(img: &GrayImage) -> GrayImage {
    const TAPS: [f64; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];
    let (w, h) = (img.width, img.height);
    let mut tmp = GrayImage::new(w, h, 0.0);
    for y in 0..h {
        for x in 0..w {
            let v = (0..5)
                .map(|i| TAPS[i] * img.get((x as isize + i as isize - 2).clamp(0, w as isize - 1) as usize, y))
                .sum();
            tmp.set(x, y, v);
        }
    }
    let mut out = GrayImage::new(w, h, 0.0);
    for y in 0..h {
        for x in 0..w {
            let v = (0..5)
                .map(|i| TAPS[i] * tmp.get(x, (y as isize + i as isize - 2).clamp(0, h as isize - 1) as usize))
                .sum();
            out.set(x, y, v);
        }
    }
    out
}

struct Described {
    kp: Keypoint,
    /// Zero-mean, unit-norm patch.
    desc: Vec<f64>,
}

fn describe(gray: &GrayImage, kps: Vec<Keypoint>, patch: usize) -> Vec<Described> {
    let half = (patch / 2) as isize;
    kps.into_iter()
        .filter_map(|kp| {
            let mut desc = Vec::with_capacity(patch * patch);
            for dy in -half..=half {
                for dx in -half..=half {
                    desc.push(gray.get((kp.x as isize + dx) as usize, (kp.y as isize + dy) as usize));
                }
            }
            let mean = desc.iter().sum::<f64>() / desc.len() as f64;
            desc.iter_mut().for_each(|v| *v -= mean);
            let norm = desc.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm < 1e-9 {
                return None;
            }
            desc.iter_mut().for_each(|v| *v /= norm);
            Some(Described { kp, desc })
        })
        .collect()
}

fn ncc(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Euclidean distance between unit descriptors with correlation `c`.
fn ncc_distance(c: f64) -> f64 {
    (2.0 - 2.0 * c).max(0.0).sqrt()
}

/// Harris corners described by normalized intensity patches, matched by
/// normalized cross-correlation with a mutual-nearest-neighbor check and
/// Lowe's ratio test. Pairs come out row-major by query keypoint.
pub fn match_classical(query: &Image, rendered: &Image, params: &ClassicalParams) -> MatchSet {
    assert!(params.patch_size % 2 == 1, "patch_size must be odd");
    assert_eq!(
        (query.width(), query.height()),
        (rendered.width(), rendered.height()),
        "images must have equal dimensions"
    );
    let margin = params.patch_size / 2 + 1;
    let extract = |img: &Image| {
        let gray = img.to_gray();
        let kps = detect_corners(&gray, params.max_keypoints, params.corner_threshold, margin);
        describe(&gray, kps, params.patch_size)
    };
    let (q, r) = (extract(query), extract(rendered));
    if q.is_empty() || r.is_empty() {
        return MatchSet::default();
    }

    let corr: Vec<Vec<f64>> = crate::parallel::map_indices(q.len(), |i| {
        r.iter().map(|rd| ncc(&q[i].desc, &rd.desc)).collect()
    });
    let best_query_for = |j: usize| -> usize {
        (0..q.len()).fold(0, |best, i| if corr[i][j] > corr[best][j] { i } else { best })
    };

    let mut pairs = Vec::new();
    for (i, row) in corr.iter().enumerate() {
        let (mut best, mut second) = (None::<usize>, f64::NEG_INFINITY);
        for (j, &c) in row.iter().enumerate() {
            match best {
                Some(b) if c <= row[b] => second = second.max(c),
                Some(b) => {
                    second = second.max(row[b]);
                    best = Some(j);
                }
                None => best = Some(j),
            }
        }
        let Some(j) = best else { continue };
        if best_query_for(j) != i {
            continue;
        }
        let d1 = ncc_distance(row[j]);
        let d2 = if second.is_finite() { ncc_distance(second) } else { f64::INFINITY };
        if !(d1 < params.ratio_threshold * d2) {
            continue;
        }
        pairs.push(Match {
            query: Pixel::new(q[i].kp.x as f64, q[i].kp.y as f64),
            rendered: Pixel::new(r[j].kp.x as f64, r[j].kp.y as f64),
            score: row[j].clamp(0.0, 1.0),
        });
    }
    MatchSet { pairs, outlier_labels: None }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Intrinsics, Vec3};
    use crate::renderer::{generate_test_scene, render, RenderMode, TestSceneSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn textured(width: u32, height: u32) -> Image {
        let scene = generate_test_scene(&TestSceneSpec { n_splats: 300, bounding_radius: 1.0, seed: 21 });
        let k = Intrinsics::from_half_fov(width, height, 18.0).unwrap();
        let pose = crate::geometry::Pose::look_at(&Vec3::new(3.5, 0.4, 0.6), &Vec3::zeros(), &Vec3::z());
        render(&scene, &pose, &k, RenderMode::Alpha).color
    }

    fn noise_image(size: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gray = GrayImage { width: size, height: size, data: (0..size * size).map(|_| rng.random()).collect() };
        Image::from_gray(&gray)
    }

    #[test]
    fn self_matching_is_identity() {
        let img = textured(128, 128);
        let m = match_classical(&img, &img, &ClassicalParams::default());
        assert!(m.len() > 20, "only {} matches", m.len());
        assert!(m.pairs.iter().all(|p| p.query == p.rendered));
    }

    #[test]
    fn integer_shift_is_recovered() {
        let rendered = textured(128, 128);
        let mut query = Image::new(128, 128, [0.0; 3]);
        for y in 0..128 {
            for x in 5..128 {
                query.set(x, y, rendered.get(x - 5, y));
            }
        }
        let m = match_classical(&query, &rendered, &ClassicalParams::default());
        assert!(m.len() >= 10, "only {} matches", m.len());
        let good = m
            .pairs
            .iter()
            .filter(|p| (p.query - p.rendered - Pixel::new(5.0, 0.0)).norm() <= 1.0)
            .count();
        assert!(good as f64 >= 0.9 * m.len() as f64, "{good}/{}", m.len());
    }

    #[test]
    fn uncorrelated_noise_rarely_matches() {
        for seed in 0..3 {
            let m = match_classical(&noise_image(256, seed), &noise_image(256, seed + 100), &ClassicalParams::default());
            assert!(m.len() <= 5, "seed {seed}: {} matches", m.len());
        }
    }

    #[test]
    fn invariant_to_affine_intensity() {
        let rendered = textured(128, 128);
        let mut query = Image::new(128, 128, [0.0; 3]);
        for y in 0..128 {
            for x in 3..128 {
                query.set(x, y, rendered.get(x - 3, y));
            }
        }
        let params = ClassicalParams::default();
        let base = match_classical(&query, &rendered, &params);
        let mut dimmed = query.clone();
        dimmed.data_mut().iter_mut().for_each(|v| *v = 0.5 * *v + 0.1);
        let changed = match_classical(&dimmed, &rendered, &params);
        let positions = |m: &MatchSet| m.pairs.iter().map(|p| (p.query, p.rendered)).collect::<Vec<_>>();
        assert_eq!(positions(&base), positions(&changed));
        let mut dimmed_r = rendered.clone();
        dimmed_r.data_mut().iter_mut().for_each(|v| *v = 0.5 * *v + 0.1);
        assert_eq!(positions(&base), positions(&match_classical(&query, &dimmed_r, &params)));
    }

    #[test]
    fn textureless_gives_nothing() {
        let flat = Image::new(64, 64, [0.3, 0.3, 0.3]);
        assert!(match_classical(&flat, &flat, &ClassicalParams::default()).is_empty());
    }

    #[test]
    fn corners_are_row_major_and_capped() {
        let gray = noise_image(96, 4).to_gray();
        let c = detect_corners(&gray, 50, 0.01, 6);
        assert_eq!(c.len(), 50);
        assert!(c.windows(2).all(|w| (w[0].y, w[0].x) < (w[1].y, w[1].x)));
    }
}
