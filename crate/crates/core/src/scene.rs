//! Synthetic ground truth: a camera moving in front of a wall with an
//! ellipsoid "human" between them.
//!
//! Per frame the generator renders ground-truth depth, the ellipsoid-only
//! (SMPL stand-in) depth, a shaded grayscale image, and a monocular depth
//! `d_mono = (gt - b) / s` under a hidden per-frame `(s, b)`, plus noise and
//! constant-bias outliers. Hidden `(s, b)` lie on a 1/64 grid and clean mono
//! depths on a 1/1024 m grid, and ground truth is defined as `s * mono + b`,
//! so every stored value is exact in `f32` and noise-free scenes satisfy the
//! linear model exactly.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::depth::DepthMap;
use crate::error::{Error, Result};
use crate::eval::{Pose, Trajectory};
use crate::geometry::{Image, Intrinsics};
use crate::io::{self, KvDoc};
use crate::rng::SeededRng;

const SCALE_GRID: f64 = 64.0;
const DEPTH_GRID: f64 = 1024.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub focal: f64,
    pub cx: f64,
    pub cy: f64,
    pub frames: usize,
    /// Seconds between frames.
    pub frame_interval: f64,
    /// World-frame wall plane `z = plane_depth`.
    pub plane_depth: f64,
    pub ellipsoid_center: [f64; 3],
    pub ellipsoid_radii: [f64; 3],
    /// Lateral sway of the camera path in meters.
    pub path_amplitude: f64,
    /// Total yaw over the sequence in degrees.
    pub path_yaw_deg: f64,
    /// Camera drift per frame in meters.
    pub path_velocity: [f64; 3],
    /// Half-width of the uniform noise added to mono depth.
    pub noise: f64,
    pub outlier_fraction: f64,
    /// Added to mono depth at outlier pixels.
    pub outlier_bias: f64,
    pub scale_range: [f64; 2],
    pub offset_range: [f64; 2],
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            width: 64,
            height: 64,
            focal: 64.0,
            cx: 31.5,
            cy: 31.5,
            frames: 8,
            frame_interval: 0.1,
            plane_depth: 6.0,
            ellipsoid_center: [0.0, 0.2, 3.5],
            ellipsoid_radii: [0.35, 0.8, 0.3],
            path_amplitude: 0.3,
            path_yaw_deg: 10.0,
            path_velocity: [0.02, 0.0, 0.01],
            noise: 1e-4,
            outlier_fraction: 0.02,
            outlier_bias: 3.0,
            scale_range: [0.4, 2.5],
            offset_range: [-1.0, 1.0],
        }
    }
}

fn take_floats<const N: usize>(doc: &mut KvDoc, key: &str, slot: &mut [f64; N]) -> Result<()> {
    let Some(text) = doc.take_str(key) else {
        return Ok(());
    };
    let parts: Vec<f64> = text
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| {
            Error::Config(format!(
                "{key}: expected {N} comma-separated numbers, got {text:?}"
            ))
        })?;
    *slot = parts.try_into().map_err(|_| {
        Error::Config(format!(
            "{key}: expected {N} comma-separated numbers, got {text:?}"
        ))
    })?;
    Ok(())
}

impl SceneSpec {
    pub fn parse(text: &str) -> Result<Self> {
        let mut doc = KvDoc::parse(text)?;
        let mut s = SceneSpec::default();
        doc.take_into("width", &mut s.width)?;
        doc.take_into("height", &mut s.height)?;
        doc.take_into("focal", &mut s.focal)?;
        s.cx = (s.width as f64 - 1.0) / 2.0;
        s.cy = (s.height as f64 - 1.0) / 2.0;
        doc.take_into("cx", &mut s.cx)?;
        doc.take_into("cy", &mut s.cy)?;
        doc.take_into("frames", &mut s.frames)?;
        doc.take_into("frame_interval", &mut s.frame_interval)?;
        doc.take_into("plane_depth", &mut s.plane_depth)?;
        take_floats(&mut doc, "ellipsoid.center", &mut s.ellipsoid_center)?;
        take_floats(&mut doc, "ellipsoid.radii", &mut s.ellipsoid_radii)?;
        doc.take_into("path.amplitude", &mut s.path_amplitude)?;
        doc.take_into("path.yaw_deg", &mut s.path_yaw_deg)?;
        take_floats(&mut doc, "path.velocity", &mut s.path_velocity)?;
        doc.take_into("noise", &mut s.noise)?;
        doc.take_into("outlier_fraction", &mut s.outlier_fraction)?;
        doc.take_into("outlier_bias", &mut s.outlier_bias)?;
        take_floats(&mut doc, "hidden.scale", &mut s.scale_range)?;
        take_floats(&mut doc, "hidden.offset", &mut s.offset_range)?;
        doc.finish()?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::from(e).at_path(path))?;
        Self::parse(&text).map_err(|e| e.at_path(path))
    }

    pub fn intrinsics(&self) -> Result<Intrinsics> {
        Intrinsics::new(self.focal, self.cx, self.cy)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Spec(m));
        if self.width == 0 || self.height == 0 {
            return fail("image size must be at least 1x1".into());
        }
        self.intrinsics().map_err(|e| Error::Spec(e.to_string()))?;
        if self.frames < 2 {
            return fail(format!("need at least 2 frames, got {}", self.frames));
        }
        if !(self.frame_interval > 0.0) {
            return fail("frame_interval must be positive".into());
        }
        if self.ellipsoid_radii.iter().any(|r| !(*r > 0.0)) {
            return fail(format!(
                "ellipsoid radii must be positive, got {:?}",
                self.ellipsoid_radii
            ));
        }
        if !(self.noise >= 0.0) || !(0.0..=1.0).contains(&self.outlier_fraction) {
            return fail("noise must be >= 0 and outlier_fraction in [0, 1]".into());
        }
        let [s_lo, s_hi] = self.scale_range;
        if !(s_lo > 0.0 && s_hi >= s_lo) || !(self.offset_range[1] >= self.offset_range[0]) {
            return fail("hidden.scale must be positive and ordered; hidden.offset ordered".into());
        }
        let r_max = self.ellipsoid_radii.iter().cloned().fold(0.0, f64::max);
        let center = Vector3::from(self.ellipsoid_center);
        for k in 0..self.frames {
            let pose = self.camera_pose(k);
            let local = pose.rotation.inverse() * (center - pose.translation);
            if local.z - r_max <= 0.0 {
                return fail(format!(
                    "ellipsoid is not fully in front of the camera at frame {k}"
                ));
            }
            let wall = self.plane_depth - pose.translation.z;
            if wall <= local.z + r_max {
                return fail(format!(
                    "wall does not lie behind the ellipsoid at frame {k}"
                ));
            }
        }
        Ok(())
    }

    /// Camera-to-world pose of frame `k`.
    pub fn camera_pose(&self, k: usize) -> Pose {
        let phase = 2.0 * PI * k as f64 / self.frames as f64;
        let v = Vector3::from(self.path_velocity);
        let sway = Vector3::new(phase.sin(), 0.5 * (1.0 - phase.cos()), 0.0) * self.path_amplitude;
        let yaw = self.path_yaw_deg.to_radians() * k as f64 / (self.frames - 1) as f64;
        Pose {
            timestamp: k as f64 * self.frame_interval,
            rotation: UnitQuaternion::from_axis_angle(&Vector3::y_axis(), yaw),
            translation: v * k as f64 + sway,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HiddenFit {
    pub scale: f64,
    pub offset: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneFrame {
    pub gt: DepthMap,
    pub smpl: DepthMap,
    pub mono: DepthMap,
    pub image: Image,
    pub hidden: HiddenFit,
    pub outlier_pixels: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub spec: SceneSpec,
    pub intrinsics: Intrinsics,
    pub frames: Vec<SceneFrame>,
    pub trajectory: Trajectory,
}

enum Hit {
    Wall { t: f64, point: Vector3<f64> },
    Human { t: f64, cosine: f64 },
}

fn trace(spec: &SceneSpec, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<Hit> {
    let center = Vector3::from(spec.ellipsoid_center);
    let radii = Vector3::from(spec.ellipsoid_radii);
    let o = (origin - center).component_div(&radii);
    let d = dir.component_div(&radii);
    let (a, b, c) = (d.dot(&d), 2.0 * o.dot(&d), o.dot(&o) - 1.0);
    let disc = b * b - 4.0 * a * c;
    if disc >= 0.0 {
        let t = (-b - disc.sqrt()) / (2.0 * a);
        if t > 0.0 {
            let p = origin + dir * t;
            let normal = (p - center)
                .component_div(&radii.component_mul(&radii))
                .normalize();
            return Some(Hit::Human {
                t,
                cosine: normal.dot(&dir.normalize()).abs(),
            });
        }
    }
    if dir.z > 0.0 {
        let t = (spec.plane_depth - origin.z) / dir.z;
        if t > 0.0 {
            return Some(Hit::Wall {
                t,
                point: origin + dir * t,
            });
        }
    }
    None
}

fn snap(v: f64, grid: f64) -> f64 {
    (v * grid).round() / grid
}

/// Render and corrupt every frame. Deterministic in `seed`.
pub fn generate_scene(spec: &SceneSpec, seed: u64) -> Result<Scene> {
    spec.validate()?;
    let k = spec.intrinsics()?;
    let (w, h) = (spec.width, spec.height);
    let master = SeededRng::new(seed);
    let mut frames = Vec::with_capacity(spec.frames);
    let mut poses = Vec::with_capacity(spec.frames);
    for f in 0..spec.frames {
        let mut rng = master.fork(f as u64);
        let pose = spec.camera_pose(f);
        let scale = snap(
            rng.uniform(spec.scale_range[0], spec.scale_range[1]),
            SCALE_GRID,
        )
        .max(1.0 / SCALE_GRID);
        let offset = snap(
            rng.uniform(spec.offset_range[0], spec.offset_range[1]),
            SCALE_GRID,
        );

        let mut gt = DepthMap::invalid(w, h)?;
        let mut smpl = DepthMap::invalid(w, h)?;
        let mut mono = DepthMap::invalid(w, h)?;
        let mut shade = vec![0.0; w * h];
        let mut outlier_pixels = 0;
        for v in 0..h {
            for u in 0..w {
                let ray = Vector3::new(
                    (u as f64 - k.cx) / k.focal,
                    (v as f64 - k.cy) / k.focal,
                    1.0,
                );
                let dir = pose.rotation * ray;
                let hit = trace(spec, &pose.translation, &dir);
                let (t, human) = match &hit {
                    Some(Hit::Human { t, cosine }) => {
                        shade[v * w + u] = 0.2 + 0.7 * cosine;
                        (*t, true)
                    }
                    Some(Hit::Wall { t, point }) => {
                        let checker =
                            ((point.x * 2.0).floor() + (point.y * 2.0).floor()).rem_euclid(2.0);
                        shade[v * w + u] = 0.3 + 0.4 * checker;
                        (*t, false)
                    }
                    None => {
                        shade[v * w + u] = 0.1;
                        continue;
                    }
                };
                let clean = snap((t - offset) / scale, DEPTH_GRID);
                let depth = scale * clean + offset;
                if !(clean > 0.0 && depth > 0.0) {
                    continue;
                }
                gt.set(u, v, depth);
                if human {
                    smpl.set(u, v, depth);
                }
                let mut m = clean;
                if spec.noise > 0.0 {
                    m += rng.uniform(-spec.noise, spec.noise);
                }
                if spec.outlier_fraction > 0.0 && rng.next_f64() < spec.outlier_fraction {
                    m += spec.outlier_bias;
                    outlier_pixels += 1;
                }
                mono.set(u, v, f64::from(m as f32));
            }
        }
        frames.push(SceneFrame {
            gt,
            smpl,
            mono,
            image: Image::new(w, h, shade.iter().map(|&v| f64::from(v as f32)).collect())?,
            hidden: HiddenFit { scale, offset },
            outlier_pixels,
        });
        poses.push(pose);
    }
    Ok(Scene {
        spec: spec.clone(),
        intrinsics: k,
        frames,
        trajectory: Trajectory::new(poses)?,
    })
}

/// Noisy linear pairs `y = scale * x + offset` with a fixed fraction of
/// `y` values shifted by `outlier_bias`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairSpec {
    pub n: usize,
    pub scale: f64,
    pub offset: f64,
    pub x_range: [f64; 2],
    /// Half-width of the uniform noise added to `y`.
    pub noise: f64,
    pub outlier_fraction: f64,
    pub outlier_bias: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearPairs {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub outlier: Vec<bool>,
}

pub fn linear_pairs(spec: &PairSpec, rng: &mut SeededRng) -> LinearPairs {
    let x: Vec<f64> = (0..spec.n)
        .map(|_| rng.uniform(spec.x_range[0], spec.x_range[1]))
        .collect();
    let mut y: Vec<f64> = x
        .iter()
        .map(|&xi| {
            let e = if spec.noise > 0.0 {
                rng.uniform(-spec.noise, spec.noise)
            } else {
                0.0
            };
            spec.scale * xi + spec.offset + e
        })
        .collect();
    let mut outlier = vec![false; spec.n];
    let k = (spec.outlier_fraction * spec.n as f64).round() as usize;
    for i in rng.choose_indices(spec.n, k) {
        y[i] += spec.outlier_bias;
        outlier[i] = true;
    }
    LinearPairs { x, y, outlier }
}

/// Per-frame ground truth recorded next to a scene bundle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameTruth {
    pub name: String,
    pub timestamp: f64,
    pub hidden_scale: f64,
    pub hidden_offset: f64,
    pub human_pixels: usize,
    pub outlier_pixels: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub seed: u64,
    pub intrinsics: Intrinsics,
    pub spec: SceneSpec,
    pub frames: Vec<FrameTruth>,
}

pub const BUNDLE_DIRS: [&str; 4] = ["gt", "smpl", "mono", "image"];
pub const SIDECAR_FILE: &str = "scene.json";
pub const TRAJECTORY_FILE: &str = "trajectory.txt";

pub fn frame_name(index: usize) -> String {
    format!("{index:04}.pfm")
}

/// Write `gt/`, `smpl/`, `mono/`, `image/` PFMs, the TUM trajectory and the
/// JSON sidecar into `dir`.
pub fn write_bundle(scene: &Scene, seed: u64, dir: &Path) -> Result<()> {
    for sub in BUNDLE_DIRS {
        let p = dir.join(sub);
        fs::create_dir_all(&p).map_err(|e| Error::from(e).at_path(&p))?;
    }
    let mut truths = Vec::with_capacity(scene.frames.len());
    for (i, (f, pose)) in scene
        .frames
        .iter()
        .zip(scene.trajectory.poses())
        .enumerate()
    {
        let name = frame_name(i);
        io::write_pfm(dir.join("gt").join(&name), &f.gt)?;
        io::write_pfm(dir.join("smpl").join(&name), &f.smpl)?;
        io::write_pfm(dir.join("mono").join(&name), &f.mono)?;
        io::write_pfm_image(dir.join("image").join(&name), &f.image)?;
        truths.push(FrameTruth {
            name,
            timestamp: pose.timestamp,
            hidden_scale: f.hidden.scale,
            hidden_offset: f.hidden.offset,
            human_pixels: f.smpl.valid_count(),
            outlier_pixels: f.outlier_pixels,
        });
    }
    io::write_tum(dir.join(TRAJECTORY_FILE), &scene.trajectory)?;
    let sidecar = Sidecar {
        seed,
        intrinsics: scene.intrinsics,
        spec: scene.spec.clone(),
        frames: truths,
    };
    let path = dir.join(SIDECAR_FILE);
    let json = serde_json::to_string_pretty(&sidecar)?;
    fs::write(&path, json + "\n").map_err(|e| Error::from(e).at_path(&path))
}

pub fn read_sidecar(dir: &Path) -> Result<Sidecar> {
    let path = dir.join(SIDECAR_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::from(e).at_path(&path))?;
    serde_json::from_str(&text).map_err(|e| Error::from(e).at_path(&path))
}

/// Sorted `*.pfm` files of a directory.
pub fn list_pfm(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::from(e).at_path(dir))? {
        let path = entry.map_err(|e| Error::from(e).at_path(dir))?.path();
        if path.extension().is_some_and(|e| e == "pfm") {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}
