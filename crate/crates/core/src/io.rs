//! File formats: JSON scenes, text pose files, PPM color, PFM depth, match
//! tables, and benchmark/sweep reports.
//!
//! Deterministic data and wall-clock timings are always written to separate
//! files so that repeated runs can be compared byte for byte.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Quaternion, UnitQuaternion};
use serde::{Deserialize, Serialize};

use crate::eval::{BenchmarkReport, SweepPoint};
use crate::geometry::{Pose, Vec3};
use crate::image::{DepthMap, Image};
use crate::matching::MatchSet;
use crate::renderer::{Scene, Splat};

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: field '{field}': {message}")]
    Field { path: PathBuf, field: String, message: String },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

impl IoError {
    fn format(path: &Path, message: impl Into<String>) -> Self {
        Self::Format { path: path.to_path_buf(), message: message.into() }
    }
}

fn read_bytes(path: &Path) -> Result<Vec<u8>, IoError> {
    fs::read(path).map_err(|source| IoError::Io { path: path.to_path_buf(), source })
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    fs::write(path, bytes).map_err(|source| IoError::Io { path: path.to_path_buf(), source })
}

/// On-disk form of a splat.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplatRecord {
    pub center: [f64; 3],
    pub scale: [f64; 3],
    /// Unit quaternion, scalar first.
    pub orientation_wxyz: [f64; 4],
    pub color: [f64; 3],
    pub opacity: f64,
}

/// On-disk form of a scene. Trajectory poses are row-major 4×4
/// camera-to-world matrices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneRecord {
    pub splats: Vec<SplatRecord>,
    pub background_color: [f64; 3],
    #[serde(default)]
    pub trajectory: Vec<[[f64; 4]; 4]>,
}

impl From<&Scene> for SceneRecord {
    fn from(scene: &Scene) -> Self {
        Self {
            splats: scene
                .splats
                .iter()
                .map(|s| {
                    let q = s.orientation.quaternion();
                    SplatRecord {
                        center: s.center.into(),
                        scale: s.scale.into(),
                        orientation_wxyz: [q.w, q.i, q.j, q.k],
                        color: s.color,
                        opacity: s.opacity,
                    }
                })
                .collect(),
            background_color: scene.background_color,
            trajectory: scene.trajectory.iter().map(Pose::to_rows).collect(),
        }
    }
}

/// Tolerance on the quaternion norm in scene files; accepted quaternions are renormalized.
pub const QUATERNION_NORM_TOLERANCE: f64 = 1e-6;

/// Parse and validate a JSON scene. Errors name the offending field, e.g. `splats[3].scale`.
pub fn parse_scene(text: &str, path: &Path) -> Result<Scene, IoError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let record: SceneRecord = serde_path_to_error::deserialize(de).map_err(|e| {
        let field = e.path().to_string();
        let message = e.into_inner().to_string();
        if field == "." || field == "?" {
            IoError::format(path, message)
        } else {
            IoError::Field { path: path.to_path_buf(), field, message }
        }
    })?;
    let field_err = |field: String, message: &str| IoError::Field { path: path.to_path_buf(), field, message: message.into() };

    let mut splats = Vec::with_capacity(record.splats.len());
    for (i, s) in record.splats.iter().enumerate() {
        let [w, x, y, z] = s.orientation_wxyz;
        let q = Quaternion::new(w, x, y, z);
        if !q.coords.iter().all(|c| c.is_finite()) || (q.norm() - 1.0).abs() > QUATERNION_NORM_TOLERANCE {
            return Err(field_err(format!("splats[{i}].orientation_wxyz"), "quaternion must have unit norm"));
        }
        splats.push(Splat {
            center: Vec3::from(s.center),
            scale: Vec3::from(s.scale),
            orientation: UnitQuaternion::from_quaternion(q),
            color: s.color,
            opacity: s.opacity,
        });
    }
    let mut trajectory = Vec::with_capacity(record.trajectory.len());
    for (i, rows) in record.trajectory.iter().enumerate() {
        let pose = Pose::from_rows(rows).map_err(|e| field_err(format!("trajectory[{i}]"), &e.to_string()))?;
        trajectory.push(pose);
    }
    let scene = Scene { splats, background_color: record.background_color, trajectory };
    scene.validate().map_err(|e| field_err(e.field, &e.reason))?;
    Ok(scene)
}

pub fn scene_to_json(scene: &Scene) -> String {
    let mut text = serde_json::to_string_pretty(&SceneRecord::from(scene)).expect("scene serializes");
    text.push('\n');
    text
}

pub fn read_scene(path: &Path) -> Result<Scene, IoError> {
    let bytes = read_bytes(path)?;
    let text = std::str::from_utf8(&bytes).map_err(|_| IoError::format(path, "scene file is not UTF-8"))?;
    parse_scene(text, path)
}

pub fn write_scene(path: &Path, scene: &Scene) -> Result<(), IoError> {
    write_bytes(path, scene_to_json(scene).as_bytes())
}

/// First line of every pose file.
pub const POSE_FILE_HEADER: &str =
    "# camera-to-world 4x4, row-major, one row per line; camera axes x right, y down, z forward";

/// Pose file text: the header, then each pose as four lines of four numbers
/// with 17 significant digits, poses separated by a blank line.
pub fn format_poses(poses: &[Pose]) -> String {
    let mut out = String::new();
    out.push_str(POSE_FILE_HEADER);
    out.push('\n');
    for (i, pose) in poses.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        for row in pose.to_rows() {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
            let _ = writeln!(out, "{}", cells.join(" "));
        }
    }
    out
}

/// Inverse of [`format_poses`]. Lines starting with `#` and blank lines are ignored.
pub fn parse_poses(text: &str, path: &Path) -> Result<Vec<Pose>, IoError> {
    let mut values = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row: Vec<f64> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<Result<_, _>>()
            .map_err(|e| IoError::format(path, format!("line {}: {e}", lineno + 1)))?;
        if row.len() != 4 {
            return Err(IoError::format(path, format!("line {}: expected 4 numbers, found {}", lineno + 1, row.len())));
        }
        values.push([row[0], row[1], row[2], row[3]]);
    }
    if values.len() % 4 != 0 {
        return Err(IoError::format(path, format!("{} matrix rows is not a multiple of 4", values.len())));
    }
    values
        .chunks(4)
        .enumerate()
        .map(|(i, rows)| {
            Pose::from_rows(&[rows[0], rows[1], rows[2], rows[3]])
                .map_err(|e| IoError::format(path, format!("pose {i}: {e}")))
        })
        .collect()
}

pub fn read_poses(path: &Path) -> Result<Vec<Pose>, IoError> {
    let bytes = read_bytes(path)?;
    parse_poses(&String::from_utf8_lossy(&bytes), path)
}

/// Read a file that must hold exactly one pose.
pub fn read_pose(path: &Path) -> Result<Pose, IoError> {
    match read_poses(path)?.as_slice() {
        [pose] => Ok(*pose),
        poses => Err(IoError::format(path, format!("expected one pose, found {}", poses.len()))),
    }
}

pub fn write_poses(path: &Path, poses: &[Pose]) -> Result<(), IoError> {
    write_bytes(path, format_poses(poses).as_bytes())
}

/// Binary PPM (P6), 8 bits per channel.
pub fn encode_ppm(image: &Image) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    out.extend(image.to_rgb8());
    out
}

pub fn decode_ppm(bytes: &[u8], path: &Path) -> Result<Image, IoError> {
    let (header, offset) = parse_netpbm_header(bytes, 4).ok_or_else(|| IoError::format(path, "malformed PPM header"))?;
    if header[0] != "P6" || header[3] != "255" {
        return Err(IoError::format(path, "only 8-bit binary PPM (P6) is supported"));
    }
    let dims = (header[1].parse::<usize>(), header[2].parse::<usize>());
    let (Ok(w), Ok(h)) = dims else {
        return Err(IoError::format(path, "malformed PPM dimensions"));
    };
    let data = &bytes[offset..];
    if data.len() != w * h * 3 {
        return Err(IoError::format(path, format!("expected {} pixel bytes, found {}", w * h * 3, data.len())));
    }
    Image::from_rgb8(w, h, data).ok_or_else(|| IoError::format(path, "inconsistent PPM size"))
}

/// Whitespace-separated header tokens followed by exactly one whitespace byte.
fn parse_netpbm_header(bytes: &[u8], n_tokens: usize) -> Option<(Vec<String>, usize)> {
    let mut tokens = Vec::with_capacity(n_tokens);
    let mut i = 0;
    while tokens.len() < n_tokens {
        while bytes.get(i)?.is_ascii_whitespace() {
            i += 1;
        }
        let start = i;
        while !bytes.get(i)?.is_ascii_whitespace() {
            i += 1;
        }
        tokens.push(std::str::from_utf8(&bytes[start..i]).ok()?.to_string());
    }
    Some((tokens, i + 1))
}

pub fn read_ppm(path: &Path) -> Result<Image, IoError> {
    decode_ppm(&read_bytes(path)?, path)
}

pub fn write_ppm(path: &Path, image: &Image) -> Result<(), IoError> {
    write_bytes(path, &encode_ppm(image))
}

/// Grayscale PFM (`Pf`), little-endian 32-bit floats, bottom row first.
/// Pixels without a surface are stored as +∞.
pub fn encode_pfm(depth: &DepthMap) -> Vec<u8> {
    let (w, h) = (depth.width(), depth.height());
    let mut out = format!("Pf\n{w} {h}\n-1.0\n").into_bytes();
    out.reserve(w * h * 4);
    for y in (0..h).rev() {
        for x in 0..w {
            out.extend_from_slice(&(depth.get(x, y) as f32).to_le_bytes());
        }
    }
    out
}

pub fn decode_pfm(bytes: &[u8], path: &Path) -> Result<DepthMap, IoError> {
    let (header, offset) = parse_netpbm_header(bytes, 4).ok_or_else(|| IoError::format(path, "malformed PFM header"))?;
    if header[0] != "Pf" {
        return Err(IoError::format(path, "only grayscale PFM (Pf) is supported"));
    }
    let (Ok(w), Ok(h), Ok(scale)) = (header[1].parse::<usize>(), header[2].parse::<usize>(), header[3].parse::<f64>()) else {
        return Err(IoError::format(path, "malformed PFM header"));
    };
    let data = &bytes[offset..];
    if data.len() != w * h * 4 {
        return Err(IoError::format(path, format!("expected {} data bytes, found {}", w * h * 4, data.len())));
    }
    let mut values = vec![0.0; w * h];
    for (i, chunk) in data.chunks_exact(4).enumerate() {
        let raw = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if scale < 0.0 { f32::from_le_bytes(raw) } else { f32::from_be_bytes(raw) };
        let (row, x) = (i / w, i % w);
        values[(h - 1 - row) * w + x] = v as f64;
    }
    DepthMap::from_raw(w, h, values).ok_or_else(|| IoError::format(path, "inconsistent PFM size"))
}

pub fn read_pfm(path: &Path) -> Result<DepthMap, IoError> {
    decode_pfm(&read_bytes(path)?, path)
}

pub fn write_pfm(path: &Path, depth: &DepthMap) -> Result<(), IoError> {
    write_bytes(path, &encode_pfm(depth))
}

/// One line per match: `uq_x uq_y ur_x ur_y score`, after a header comment.
pub fn format_matches(matches: &MatchSet) -> String {
    let mut out = String::from("# uq_x uq_y ur_x ur_y score\n");
    for m in &matches.pairs {
        let _ = writeln!(out, "{:.6} {:.6} {:.6} {:.6} {:.6}", m.query.x, m.query.y, m.rendered.x, m.rendered.y, m.score);
    }
    out
}

#[derive(Serialize)]
struct TrialRow<'a> {
    scene_id: &'a str,
    query_id: usize,
    method: &'a str,
    protocol: &'a str,
    init_seed: u64,
    method_seed: u64,
    init_re_deg: f64,
    init_te_norm: f64,
    re_deg: f64,
    te_norm: f64,
    success: bool,
    status: &'a str,
    n_matches: usize,
    n_inliers: usize,
    inliers_outlier_free: Option<bool>,
    render_count: usize,
}

/// Trial records as CSV, one row per trial; times are left out.
pub fn trial_records_csv(report: &BenchmarkReport) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in &report.records {
        w.serialize(TrialRow {
            scene_id: &r.scene_id,
            query_id: r.query_id,
            method: &r.method,
            protocol: &r.protocol,
            init_seed: r.init_seed,
            method_seed: r.method_seed,
            init_re_deg: r.init_metrics.re_deg,
            init_te_norm: r.init_metrics.te_norm,
            re_deg: r.final_metrics.re_deg,
            te_norm: r.final_metrics.te_norm,
            success: r.final_metrics.success,
            status: r.status.as_str(),
            n_matches: r.n_matches,
            n_inliers: r.n_inliers,
            inliers_outlier_free: r.inliers_outlier_free,
            render_count: r.render_count,
        })
        .expect("in-memory CSV write");
    }
    String::from_utf8(w.into_inner().expect("in-memory CSV flush")).expect("CSV is UTF-8")
}

#[derive(Serialize)]
struct TimingRow<'a> {
    query_id: usize,
    method: &'a str,
    time_s: f64,
}

/// Per-trial wall-clock times and per-method means, as JSON.
pub fn timings_json(report: &BenchmarkReport) -> String {
    let trials: Vec<TimingRow> =
        report.records.iter().map(|r| TimingRow { query_id: r.query_id, method: &r.method, time_s: r.time_s }).collect();
    let value = serde_json::json!({ "methods": report.timings, "trials": trials });
    let mut text = serde_json::to_string_pretty(&value).expect("timings serialize");
    text.push('\n');
    text
}

/// Per-method aggregates plus the run parameters, as JSON.
pub fn summary_json(report: &BenchmarkReport, run: &serde_json::Value) -> String {
    let value = serde_json::json!({ "run": run, "aggregates": report.aggregates });
    let mut text = serde_json::to_string_pretty(&value).expect("summary serializes");
    text.push('\n');
    text
}

/// Two columns, `offset_fraction success_rate`, after a header comment.
pub fn format_sweep(curve: &[SweepPoint]) -> String {
    let mut out = String::from("# offset_fraction success_rate\n");
    for p in curve {
        let _ = writeln!(out, "{:.6} {:.6}", p.offset_fraction, p.success_rate);
    }
    out
}
