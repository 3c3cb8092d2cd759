//! Pinhole rasterizer for the tip camera.
//!
//! Fiducials are spheres drawn as flat discs whose pixel radius is
//! `focal * radius / depth`. Disc edges are antialiased with a one-pixel
//! linear coverage ramp so the image varies continuously with camera pose;
//! discs are painted far to near so nearer fiducials cover farther ones.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{sub, Pose, Vec3};

/// Illuminance ratio between the bright test condition and training
/// (341.4 lx vs 155.4 lx).
pub const BRIGHT_ILLUMINATION: f64 = 341.4 / 155.4;

/// Depth below which a fiducial is treated as behind the camera.
const NEAR_PLANE: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("unknown scene variant {0:?}")]
    UnknownVariant(String),
    #[error("image io: {0}")]
    Io(#[from] std::io::Error),
    #[error("png encode: {0}")]
    Encode(#[from] png::EncodingError),
    #[error("png decode: {0}")]
    Decode(#[from] png::DecodingError),
    #[error("unsupported png layout: {0}")]
    Format(String),
}

/// RGB raster, row-major, channels interleaved, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TipImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl TipImage {
    pub const CHANNELS: usize = 3;

    pub fn filled(width: usize, height: usize, color: [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&color);
        }
        TipImage {
            width,
            height,
            data,
        }
    }

    pub fn pixel(&self, row: usize, col: usize) -> [f64; 3] {
        let i = (row * self.width + col) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    fn pixel_mut(&mut self, row: usize, col: usize) -> &mut [f64] {
        let i = (row * self.width + col) * 3;
        &mut self.data[i..i + 3]
    }

    /// Multiplies by `factor` and clamps into `[0, 1]`.
    pub fn illuminate(&mut self, factor: f64) {
        if factor == 1.0 {
            return;
        }
        for v in &mut self.data {
            *v = (*v * factor).min(1.0).max(0.0);
        }
    }

    /// 8-bit sample values (`round(v * 255)`).
    pub fn to_bytes(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }

    pub fn from_bytes(width: usize, height: usize, bytes: &[u8]) -> Self {
        TipImage {
            width,
            height,
            data: bytes.iter().map(|b| f64::from(*b) / 255.0).collect(),
        }
    }

    /// Snaps every sample to the 8-bit grid, as the camera would deliver it.
    pub fn quantized(&self) -> Self {
        Self::from_bytes(self.width, self.height, &self.to_bytes())
    }

    /// Channel-major `[3, H, W]` copy, the network input layout.
    pub fn to_chw(&self) -> Vec<f64> {
        let hw = self.width * self.height;
        let mut out = vec![0.0; 3 * hw];
        for p in 0..hw {
            for c in 0..3 {
                out[c * hw + p] = self.data[p * 3 + c];
            }
        }
        out
    }

    /// Writes an 8-bit RGB PNG.
    pub fn save_png(&self, path: &Path) -> Result<(), RenderError> {
        let w = BufWriter::new(File::create(path)?);
        let mut enc = png::Encoder::new(w, self.width as u32, self.height as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header()?;
        writer.write_image_data(&self.to_bytes())?;
        Ok(())
    }

    pub fn load_png(path: &Path) -> Result<Self, RenderError> {
        let bytes = read_png_bytes(path)?;
        Ok(Self::from_bytes(bytes.0, bytes.1, &bytes.2))
    }
}

/// Raw `(width, height, rgb8)` contents of an RGB PNG.
pub fn read_png_bytes(path: &Path) -> Result<(usize, usize, Vec<u8>), RenderError> {
    let decoder = png::Decoder::new(File::open(path)?);
    let mut reader = decoder.read_info()?;
    let mut buf = vec![0; reader.output_buffer_size()];
    let info = reader.next_frame(&mut buf)?;
    if info.color_type != png::ColorType::Rgb || info.bit_depth != png::BitDepth::Eight {
        return Err(RenderError::Format(format!(
            "{:?}/{:?}, expected 8-bit RGB",
            info.color_type, info.bit_depth
        )));
    }
    buf.truncate(info.buffer_size());
    Ok((info.width as usize, info.height as usize, buf))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fiducial {
    pub center: Vec3,
    pub radius: f64,
    pub color: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Background {
    Solid { color: [f64; 3] },
    /// Image-space pattern alternating two colors. Pattern 0: vertical
    /// stripes, pattern 1: checkerboard; `cell` is the period half-width in
    /// pixels.
    TwoTone {
        a: [f64; 3],
        b: [f64; 3],
        pattern: u32,
        cell: usize,
    },
}

impl Background {
    fn color_at(&self, row: usize, col: usize) -> [f64; 3] {
        match *self {
            Background::Solid { color } => color,
            Background::TwoTone { a, b, pattern, cell } => {
                let cell = cell.max(1);
                let odd = match pattern {
                    0 => (col / cell) % 2 == 1,
                    _ => ((col / cell) + (row / cell)) % 2 == 1,
                };
                if odd {
                    b
                } else {
                    a
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub fiducials: Vec<Fiducial>,
    pub background: Background,
    pub illumination: f64,
}

/// Height of the target floor below the gantry plane (m, world z down).
pub const FLOOR_Z: f64 = 0.45;

impl Scene {
    /// Six fiducials on the floor, placed without symmetry so that every
    /// workspace pose sees a distinct arrangement.
    pub fn training() -> Self {
        let f = |x: f64, y: f64, radius: f64, color: [f64; 3]| Fiducial {
            center: [x, y, FLOOR_Z],
            radius,
            color,
        };
        Scene {
            fiducials: vec![
                f(0.22, 0.10, 0.045, [0.45, 0.08, 0.08]),
                f(0.40, 0.02, 0.050, [0.08, 0.42, 0.10]),
                f(0.33, 0.27, 0.050, [0.10, 0.12, 0.45]),
                f(0.53, 0.19, 0.055, [0.44, 0.40, 0.06]),
                f(0.19, 0.37, 0.045, [0.40, 0.08, 0.42]),
                f(0.46, 0.43, 0.050, [0.06, 0.40, 0.42]),
            ],
            background: Background::Solid {
                color: [0.20, 0.20, 0.20],
            },
            illumination: 1.0,
        }
    }

    /// Four extra fiducials at floor positions that no training fiducial
    /// occupies.
    pub fn new_targets() -> Vec<Fiducial> {
        let f = |x: f64, y: f64, radius: f64, color: [f64; 3]| Fiducial {
            center: [x, y, FLOOR_Z],
            radius,
            color,
        };
        vec![
            f(0.09, 0.22, 0.040, [0.45, 0.25, 0.05]),
            f(0.62, 0.04, 0.045, [0.30, 0.30, 0.45]),
            f(0.28, -0.09, 0.040, [0.45, 0.45, 0.45]),
            f(0.63, 0.34, 0.050, [0.05, 0.25, 0.20]),
        ]
    }

    pub fn validate(&self) -> Result<(), RenderError> {
        if !(self.illumination > 0.0 && self.illumination.is_finite()) {
            return Err(RenderError::InvalidScene("illumination must be > 0".into()));
        }
        for (i, f) in self.fiducials.iter().enumerate() {
            if !(f.radius > 0.0) {
                return Err(RenderError::InvalidScene(format!(
                    "fiducial {i} radius must be > 0"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub focal_px: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Default for CameraIntrinsics {
    fn default() -> Self {
        Self::square(64)
    }
}

impl CameraIntrinsics {
    /// `size`×`size` image with a ~100° horizontal field of view.
    pub fn square(size: usize) -> Self {
        let s = size as f64;
        CameraIntrinsics {
            focal_px: 0.42 * s,
            cx: s / 2.0,
            cy: s / 2.0,
            width: size,
            height: size,
        }
    }

    pub fn validate(&self) -> Result<(), RenderError> {
        if !(self.focal_px > 0.0) {
            return Err(RenderError::InvalidIntrinsics("focal must be > 0".into()));
        }
        if !(self.cx >= 0.0
            && self.cx <= self.width as f64
            && self.cy >= 0.0
            && self.cy <= self.height as f64)
        {
            return Err(RenderError::InvalidIntrinsics(
                "principal point outside the image".into(),
            ));
        }
        Ok(())
    }
}

/// A fiducial after projection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectedDisc {
    pub u: f64,
    pub v: f64,
    pub radius_px: f64,
    pub depth: f64,
    pub color: [f64; 3],
}

/// Projects a fiducial; `None` when it is behind the camera.
pub fn project(pose: &Pose, f: &Fiducial, intr: &CameraIntrinsics) -> Option<ProjectedDisc> {
    let rt = pose.rotation().transpose();
    let c = rt.apply(sub(f.center, pose.position));
    if c[2] <= NEAR_PLANE {
        return None;
    }
    Some(ProjectedDisc {
        u: intr.cx + intr.focal_px * c[0] / c[2],
        v: intr.cy + intr.focal_px * c[1] / c[2],
        radius_px: intr.focal_px * f.radius / c[2],
        depth: c[2],
        color: f.color,
    })
}

impl ProjectedDisc {
    /// Fraction of pixel `(row, col)` covered by the disc.
    pub fn coverage(&self, row: usize, col: usize) -> f64 {
        let du = col as f64 + 0.5 - self.u;
        let dv = row as f64 + 0.5 - self.v;
        let d = (du * du + dv * dv).sqrt();
        (self.radius_px + 0.5 - d).clamp(0.0, 1.0)
    }

    /// Whether any part of the disc lands on the image.
    pub fn visible(&self, intr: &CameraIntrinsics) -> bool {
        let r = self.radius_px + 0.5;
        self.u + r > 0.0
            && self.u - r < intr.width as f64
            && self.v + r > 0.0
            && self.v - r < intr.height as f64
    }
}

pub fn render(pose: &Pose, scene: &Scene, intr: &CameraIntrinsics) -> TipImage {
    let (w, h) = (intr.width, intr.height);
    let mut img = TipImage {
        width: w,
        height: h,
        data: Vec::with_capacity(w * h * 3),
    };
    for row in 0..h {
        for col in 0..w {
            img.data.extend_from_slice(&scene.background.color_at(row, col));
        }
    }
    let mut discs: Vec<ProjectedDisc> = scene
        .fiducials
        .iter()
        .filter_map(|f| project(pose, f, intr))
        .filter(|d| d.visible(intr))
        .collect();
    // far first; stable so equal depths keep scene order
    discs.sort_by(|a, b| b.depth.total_cmp(&a.depth));
    for d in &discs {
        let r = d.radius_px + 1.0;
        let r0 = (d.v - r).floor().max(0.0) as usize;
        let r1 = ((d.v + r).ceil().max(0.0) as usize).min(h);
        let c0 = (d.u - r).floor().max(0.0) as usize;
        let c1 = ((d.u + r).ceil().max(0.0) as usize).min(w);
        for row in r0..r1 {
            for col in c0..c1 {
                let a = d.coverage(row, col);
                if a <= 0.0 {
                    continue;
                }
                let px = img.pixel_mut(row, col);
                for c in 0..3 {
                    px[c] = (1.0 - a) * px[c] + a * d.color[c];
                }
            }
        }
    }
    img.illuminate(scene.illumination);
    img
}

/// Number of fiducials whose disc lands on the image.
pub fn visible_count(pose: &Pose, scene: &Scene, intr: &CameraIntrinsics) -> usize {
    scene
        .fiducials
        .iter()
        .filter_map(|f| project(pose, f, intr))
        .filter(|d| d.visible(intr))
        .count()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SceneVariant {
    Train,
    NewTargets,
    Bright,
    Background2,
}

impl std::str::FromStr for SceneVariant {
    type Err = RenderError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(SceneVariant::Train),
            "new_targets" => Ok(SceneVariant::NewTargets),
            "bright" => Ok(SceneVariant::Bright),
            "background2" => Ok(SceneVariant::Background2),
            other => Err(RenderError::UnknownVariant(other.to_string())),
        }
    }
}

/// The second background: a two-tone checkerboard in warmer colors.
pub fn second_background() -> Background {
    Background::TwoTone {
        a: [0.32, 0.26, 0.18],
        b: [0.22, 0.18, 0.12],
        pattern: 1,
        cell: 8,
    }
}

pub fn scene_variant(base: &Scene, kind: SceneVariant) -> Scene {
    let mut s = base.clone();
    match kind {
        SceneVariant::Train => {}
        SceneVariant::NewTargets => s.fiducials.extend(Scene::new_targets()),
        SceneVariant::Bright => s.illumination *= BRIGHT_ILLUMINATION,
        SceneVariant::Background2 => s.background = second_background(),
    }
    s
}

/// String-keyed form of [`scene_variant`].
pub fn scene_variants(base: &Scene, kind: &str) -> Result<Scene, RenderError> {
    Ok(scene_variant(base, kind.parse()?))
}
