//! Quasi-static forward kinematics of a BR² soft arm hanging from an
//! X/Y/θ gantry.
//!
//! The arm is modeled with piecewise constant curvature: each segment is a
//! screw motion with constant body angular rate `(0, κ, τ)` about its own
//! frame, i.e. a circular arc (κ) carrying a uniform axial twist (τ). With no
//! twist this is the classic planar PCC arc. The world frame has `z` pointing
//! down, toward the target floor; the gantry plane sits at `z = base_height`.
//!
//! Default gains are artifact choices, not measured BR² data: bending spans
//! roughly 10° to 50° of tip deflection over the training pressure range and
//! the rotation channel twists the arm by up to ±90°.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{add, Pose, RotationMatrix, Vec3};
use crate::seed;

pub const CONFIG_VERSION: u32 = 1;

/// kPa per psi.
pub const KPA_PER_PSI: f64 = 6.894_757;

#[derive(Debug, Error)]
pub enum ArmError {
    #[error("actuation channel {channel} = {value} outside [{min}, {max}]")]
    OutOfRange {
        channel: Channel,
        value: f64,
        min: f64,
        max: f64,
    },
    #[error("invalid arm configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid disturbance: {0}")]
    InvalidDisturbance(String),
    #[error("invalid actuation ranges: {0}")]
    InvalidRanges(String),
    #[error("config file: {0}")]
    Io(#[from] std::io::Error),
    #[error("config parse: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    B,
    R,
    T,
    X,
    Y,
}

impl Channel {
    pub const ALL: [Channel; 5] = [Channel::B, Channel::R, Channel::T, Channel::X, Channel::Y];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Channel::B => "b",
            Channel::R => "r",
            Channel::T => "t",
            Channel::X => "x",
            Channel::Y => "y",
        }
    }
}

impl std::fmt::Display for Channel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Bending pressure `b` (kPa), signed rotation pressure `r` (kPa, CW > 0),
/// base angle `t` (rad) and gantry position `x`, `y` (m).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ActuationVector {
    pub b: f64,
    pub r: f64,
    pub t: f64,
    pub x: f64,
    pub y: f64,
}

impl ActuationVector {
    pub fn new(b: f64, r: f64, t: f64, x: f64, y: f64) -> Self {
        ActuationVector { b, r, t, x, y }
    }

    pub fn to_array(self) -> [f64; 5] {
        [self.b, self.r, self.t, self.x, self.y]
    }

    pub fn from_array(v: [f64; 5]) -> Self {
        ActuationVector::new(v[0], v[1], v[2], v[3], v[4])
    }

    pub fn get(&self, ch: Channel) -> f64 {
        self.to_array()[ch.index()]
    }

    pub fn set(&mut self, ch: Channel, value: f64) {
        let mut v = self.to_array();
        v[ch.index()] = value;
        *self = ActuationVector::from_array(v);
    }
}

/// One channel of the actuation envelope. Grid levels are evenly spaced
/// between `min` and `max` and rounded to `decimals`, which is also the
/// precision labels are written with.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelRange {
    pub min: f64,
    pub max: f64,
    pub step: f64,
    pub decimals: u32,
}

impl ChannelRange {
    pub fn level_count(&self) -> usize {
        ((self.max - self.min) / self.step).round() as usize + 1
    }

    pub fn levels(&self) -> Vec<f64> {
        let n = self.level_count();
        (0..n)
            .map(|k| {
                let v = self.min + (self.max - self.min) * k as f64 / (n - 1) as f64;
                round_to(v, self.decimals)
            })
            .collect()
    }

    pub fn clamp(&self, v: f64) -> f64 {
        v.clamp(self.min, self.max)
    }

    pub fn span(&self) -> f64 {
        self.max - self.min
    }

    fn validate(&self, ch: Channel) -> Result<(), ArmError> {
        if !(self.min < self.max) || !(self.step > 0.0) {
            return Err(ArmError::InvalidRanges(format!(
                "channel {ch}: need min < max and step > 0"
            )));
        }
        let steps = self.span() / self.step;
        // the psi-to-kPa conversion leaves the rounded step slightly off
        if (steps - steps.round()).abs() > 0.05 {
            return Err(ArmError::InvalidRanges(format!(
                "channel {ch}: step {} does not divide span {}",
                self.step,
                self.span()
            )));
        }
        Ok(())
    }
}

pub fn round_to(v: f64, decimals: u32) -> f64 {
    let p = 10f64.powi(decimals as i32);
    let r = (v * p).round() / p;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActuationRanges {
    pub b: ChannelRange,
    pub r: ChannelRange,
    pub t: ChannelRange,
    pub x: ChannelRange,
    pub y: ChannelRange,
}

impl Default for ActuationRanges {
    /// The training envelope: b 14–22 psi, r ±18 psi (2 psi steps), t ±6° in
    /// 2° steps, x 14–18 cm and y 14–20 cm in 2 cm steps.
    fn default() -> Self {
        let t_max = round_to(6f64.to_radians(), 4);
        ActuationRanges {
            b: ChannelRange {
                min: 96.5,
                max: 151.7,
                step: 13.8,
                decimals: 1,
            },
            r: ChannelRange {
                min: -124.1,
                max: 124.1,
                step: 13.8,
                decimals: 1,
            },
            t: ChannelRange {
                min: -t_max,
                max: t_max,
                step: round_to(2f64.to_radians(), 4),
                decimals: 4,
            },
            x: ChannelRange {
                min: 0.14,
                max: 0.18,
                step: 0.02,
                decimals: 2,
            },
            y: ChannelRange {
                min: 0.14,
                max: 0.20,
                step: 0.02,
                decimals: 2,
            },
        }
    }
}

impl ActuationRanges {
    pub fn channel(&self, ch: Channel) -> &ChannelRange {
        match ch {
            Channel::B => &self.b,
            Channel::R => &self.r,
            Channel::T => &self.t,
            Channel::X => &self.x,
            Channel::Y => &self.y,
        }
    }

    pub fn validate(&self) -> Result<(), ArmError> {
        for ch in Channel::ALL {
            self.channel(ch).validate(ch)?;
        }
        Ok(())
    }

    pub fn minima(&self) -> ActuationVector {
        ActuationVector::from_array(Channel::ALL.map(|c| self.channel(c).min))
    }

    pub fn maxima(&self) -> ActuationVector {
        ActuationVector::from_array(Channel::ALL.map(|c| self.channel(c).max))
    }

    pub fn check(&self, a: &ActuationVector) -> Result<(), ArmError> {
        const SLACK: f64 = 1e-9;
        for ch in Channel::ALL {
            let r = self.channel(ch);
            let v = a.get(ch);
            if !v.is_finite() || v < r.min - SLACK || v > r.max + SLACK {
                return Err(ArmError::OutOfRange {
                    channel: ch,
                    value: v,
                    min: r.min,
                    max: r.max,
                });
            }
        }
        Ok(())
    }
}

/// Clips every channel into the envelope.
pub fn clamp_actuation(a: &ActuationVector, ranges: &ActuationRanges) -> ActuationVector {
    ActuationVector::from_array(Channel::ALL.map(|c| ranges.channel(c).clamp(a.get(c))))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArmConfig {
    pub config_version: u32,
    /// Arm length L (m).
    pub length_m: f64,
    /// Curvature per kPa above the threshold, (1/m)/kPa.
    pub bend_gain: f64,
    /// Total axial twist per kPa of rotation pressure, rad/kPa.
    pub twist_gain: f64,
    /// Bending pressure below which the arm stays straight (kPa).
    pub bend_threshold_kpa: f64,
    /// Extra curvature per kg of distributed load, (1/m)/kg.
    pub load_droop_gain: f64,
    /// Height of the gantry plane (m, world z points down).
    pub base_height_m: f64,
    /// Camera frame relative to the arm tip frame.
    pub camera_mount: Pose,
}

impl Default for ArmConfig {
    fn default() -> Self {
        let length_m = 0.25;
        let bend_threshold_kpa = 12.0 * KPA_PER_PSI;
        let max_bend = 50f64.to_radians();
        let ranges = ActuationRanges::default();
        ArmConfig {
            config_version: CONFIG_VERSION,
            length_m,
            bend_gain: max_bend / (length_m * (ranges.b.max - bend_threshold_kpa)),
            twist_gain: std::f64::consts::FRAC_PI_2 / ranges.r.max,
            bend_threshold_kpa,
            load_droop_gain: 57.0,
            base_height_m: 0.0,
            camera_mount: Pose::IDENTITY,
        }
    }
}

impl ArmConfig {
    pub fn validate(&self) -> Result<(), ArmError> {
        if self.config_version != CONFIG_VERSION {
            return Err(ArmError::InvalidConfig(format!(
                "config_version {} (expected {CONFIG_VERSION})",
                self.config_version
            )));
        }
        if !(self.length_m > 0.0 && self.length_m.is_finite()) {
            return Err(ArmError::InvalidConfig("length_m must be > 0".into()));
        }
        for (name, v) in [
            ("bend_gain", self.bend_gain),
            ("twist_gain", self.twist_gain),
            ("bend_threshold_kpa", self.bend_threshold_kpa),
            ("load_droop_gain", self.load_droop_gain),
            ("base_height_m", self.base_height_m),
        ] {
            if !v.is_finite() {
                return Err(ArmError::InvalidConfig(format!("{name} must be finite")));
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("arm config serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self, ArmError> {
        let cfg: ArmConfig = toml::from_str(text).map_err(|e| ArmError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ArmError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), ArmError> {
        std::fs::write(path, self.to_toml())?;
        Ok(())
    }

    /// Curvature from bending pressure alone.
    pub fn bend_curvature(&self, b: f64) -> f64 {
        self.bend_gain * (b - self.bend_threshold_kpa).max(0.0)
    }

    /// Twist rate along the arm (rad/m).
    pub fn twist_rate(&self, r: f64) -> f64 {
        self.twist_gain * r / self.length_m
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Disturbance {
    #[default]
    None,
    UniformLoad { mass_kg: f64 },
    /// The middle `constrained_fraction` of the arc length cannot bend.
    Diminution { constrained_fraction: f64 },
    /// Gaussian perturbation of (b, r, t) before kinematics; σ in kPa, kPa, rad.
    ActuationNoise { sigma: [f64; 3] },
}

impl Disturbance {
    /// Six 1.4 g rings.
    pub fn six_rings() -> Self {
        Disturbance::UniformLoad {
            mass_kg: 6.0 * 1.4e-3,
        }
    }

    pub fn validate(&self) -> Result<(), ArmError> {
        match *self {
            Disturbance::None => Ok(()),
            Disturbance::UniformLoad { mass_kg } if mass_kg >= 0.0 && mass_kg.is_finite() => Ok(()),
            Disturbance::UniformLoad { .. } => {
                Err(ArmError::InvalidDisturbance("mass must be >= 0".into()))
            }
            Disturbance::Diminution {
                constrained_fraction: f,
            } if f > 0.0 && f < 1.0 => Ok(()),
            Disturbance::Diminution { .. } => Err(ArmError::InvalidDisturbance(
                "constrained fraction must lie in (0, 1)".into(),
            )),
            Disturbance::ActuationNoise { sigma }
                if sigma.iter().all(|s| *s >= 0.0 && s.is_finite()) =>
            {
                Ok(())
            }
            Disturbance::ActuationNoise { .. } => {
                Err(ArmError::InvalidDisturbance("sigma must be >= 0".into()))
            }
        }
    }
}

/// Below this rotation angle over a segment the closed form switches to its
/// Taylor expansion.
const SMALL_ANGLE: f64 = 1e-4;

fn hat(w: Vec3) -> [[f64; 3]; 3] {
    [[0.0, -w[2], w[1]], [w[2], 0.0, -w[0]], [-w[1], w[0], 0.0]]
}

fn mat_mul(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
        }
    }
    out
}

/// Combines `a I + b W + c W²` and applies it to `e_z` / returns the matrix.
fn poly(a: f64, b: f64, c: f64, w: &[[f64; 3]; 3], w2: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut m = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let id = if i == j { a } else { 0.0 };
            m[i][j] = id + b * w[i][j] + c * w2[i][j];
        }
    }
    m
}

/// Closed-form end frame of a constant-rate segment of length `s` with body
/// angular rate `(0, kappa, tau)` and unit forward speed along body `z`.
pub(crate) fn segment_exact(kappa: f64, tau: f64, s: f64) -> (RotationMatrix, Vec3) {
    let w = [0.0, kappa, tau];
    let wn = (kappa * kappa + tau * tau).sqrt();
    let wm = hat(w);
    let wm2 = mat_mul(&wm, &wm);
    let th = wn * s;
    let (sin, cos) = th.sin_cos();
    let rot = poly(1.0, sin / wn, (1.0 - cos) / (wn * wn), &wm, &wm2);
    let v = poly(s, (1.0 - cos) / (wn * wn), (s - sin / wn) / (wn * wn), &wm, &wm2);
    (RotationMatrix(rot), [v[0][2], v[1][2], v[2][2]])
}

/// Series form of [`segment_exact`] for small total rotation.
pub(crate) fn segment_series(kappa: f64, tau: f64, s: f64) -> (RotationMatrix, Vec3) {
    let w = [0.0, kappa, tau];
    let w2n = kappa * kappa + tau * tau;
    let wm = hat(w);
    let wm2 = mat_mul(&wm, &wm);
    let s2 = s * s;
    let s3 = s2 * s;
    let rot = poly(
        1.0,
        s - w2n * s3 / 6.0,
        s2 / 2.0 - w2n * s2 * s2 / 24.0,
        &wm,
        &wm2,
    );
    let v = poly(
        s,
        s2 / 2.0 - w2n * s2 * s2 / 24.0,
        s3 / 6.0 - w2n * s3 * s2 / 120.0,
        &wm,
        &wm2,
    );
    (RotationMatrix(rot), [v[0][2], v[1][2], v[2][2]])
}

fn segment(kappa: f64, tau: f64, s: f64) -> (RotationMatrix, Vec3) {
    if (kappa * kappa + tau * tau).sqrt() * s < SMALL_ANGLE {
        segment_series(kappa, tau, s)
    } else {
        segment_exact(kappa, tau, s)
    }
}

/// One constant-rate piece of the arm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArcSegment {
    pub length: f64,
    pub curvature: f64,
    pub twist_rate: f64,
}

/// Arc segments for an actuation after the disturbance is applied.
pub fn arm_segments(
    a: &ActuationVector,
    cfg: &ArmConfig,
    d: &Disturbance,
) -> Vec<ArcSegment> {
    let mut kappa = cfg.bend_curvature(a.b);
    if let Disturbance::UniformLoad { mass_kg } = d {
        kappa += cfg.load_droop_gain * mass_kg;
    }
    let tau = cfg.twist_rate(a.r);
    let l = cfg.length_m;
    match *d {
        Disturbance::Diminution {
            constrained_fraction: f,
        } => {
            let free = 0.5 * (1.0 - f) * l;
            vec![
                ArcSegment {
                    length: free,
                    curvature: kappa,
                    twist_rate: tau,
                },
                ArcSegment {
                    length: f * l,
                    curvature: 0.0,
                    twist_rate: tau,
                },
                ArcSegment {
                    length: free,
                    curvature: kappa,
                    twist_rate: tau,
                },
            ]
        }
        _ => vec![ArcSegment {
            length: l,
            curvature: kappa,
            twist_rate: tau,
        }],
    }
}

/// Pose of the arm base on the gantry.
pub fn base_pose(a: &ActuationVector, cfg: &ArmConfig) -> (RotationMatrix, Vec3) {
    (RotationMatrix::rot_z(a.t), [a.x, a.y, cfg.base_height_m])
}

/// Tip frame (before the camera mount) for an already-disturbed actuation.
pub fn tip_frame(
    a: &ActuationVector,
    cfg: &ArmConfig,
    d: &Disturbance,
) -> (RotationMatrix, Vec3) {
    let (mut rot, mut pos) = base_pose(a, cfg);
    for seg in arm_segments(a, cfg, d) {
        let (r, p) = segment(seg.curvature, seg.twist_rate, seg.length);
        pos = add(pos, rot.apply(p));
        rot = rot.mul(&r);
    }
    (rot, pos)
}

/// Tip-camera pose for actuation `a`.
///
/// `rng_seed` only matters for [`Disturbance::ActuationNoise`].
pub fn forward_kinematics(
    a: &ActuationVector,
    cfg: &ArmConfig,
    d: &Disturbance,
    rng_seed: u64,
) -> Result<Pose, ArmError> {
    ActuationRanges::default().check(a)?;
    forward_kinematics_unchecked(a, cfg, d, rng_seed)
}

/// Same as [`forward_kinematics`] against caller-supplied ranges.
pub fn forward_kinematics_in(
    a: &ActuationVector,
    ranges: &ActuationRanges,
    cfg: &ArmConfig,
    d: &Disturbance,
    rng_seed: u64,
) -> Result<Pose, ArmError> {
    ranges.check(a)?;
    forward_kinematics_unchecked(a, cfg, d, rng_seed)
}

/// Applies the actuation-noise disturbance, if any.
pub fn effective_actuation(a: &ActuationVector, d: &Disturbance, rng_seed: u64) -> ActuationVector {
    match d {
        Disturbance::ActuationNoise { sigma } => {
            let mut rng = seed::rng(rng_seed);
            let mut out = *a;
            out.b += gaussian(&mut rng, sigma[0]);
            out.r += gaussian(&mut rng, sigma[1]);
            out.t += gaussian(&mut rng, sigma[2]);
            out
        }
        _ => *a,
    }
}

fn gaussian<R: Rng>(rng: &mut R, sigma: f64) -> f64 {
    if sigma == 0.0 {
        // keep the stream advancing identically regardless of sigma
        let _: f64 = rng.gen();
        return 0.0;
    }
    Normal::new(0.0, sigma).expect("sigma validated").sample(rng)
}

fn forward_kinematics_unchecked(
    a: &ActuationVector,
    cfg: &ArmConfig,
    d: &Disturbance,
    rng_seed: u64,
) -> Result<Pose, ArmError> {
    cfg.validate()?;
    d.validate()?;
    let a_eff = effective_actuation(a, d, rng_seed);
    let (rot, pos) = tip_frame(&a_eff, cfg, d);
    let tip = Pose::from_rotation(pos, &rot);
    Ok(tip.compose(&cfg.camera_mount))
}

/// Angle between the tip tangent and the base axis.
pub fn tip_bend_angle(a: &ActuationVector, cfg: &ArmConfig, d: &Disturbance) -> f64 {
    let (base, _) = base_pose(a, cfg);
    let (tip, _) = tip_frame(a, cfg, d);
    let axis = base.column(2);
    let tangent = tip.column(2);
    crate::geometry::dot(axis, tangent).clamp(-1.0, 1.0).acos()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum SampleMode {
    /// Full Cartesian product of grid levels, keeping every `stride`-th level
    /// per channel (b, r, t, x, y).
    Grid { stride: [usize; 5] },
    UniformRandom { count: usize },
}

impl SampleMode {
    pub const FULL_GRID: SampleMode = SampleMode::Grid {
        stride: [1, 1, 1, 1, 1],
    };
}

fn thinned(levels: Vec<f64>, stride: usize) -> Vec<f64> {
    levels.into_iter().step_by(stride.max(1)).collect()
}

/// Enumerates (grid, lexicographic with `b` slowest and `y` fastest) or
/// draws (uniform) actuation vectors.
pub fn workspace_sample(ranges: &ActuationRanges, mode: SampleMode, seed: u64) -> Vec<ActuationVector> {
    match mode {
        SampleMode::Grid { stride } => {
            let lv: Vec<Vec<f64>> = Channel::ALL
                .iter()
                .map(|c| thinned(ranges.channel(*c).levels(), stride[c.index()]))
                .collect();
            let mut out = Vec::with_capacity(lv.iter().map(Vec::len).product());
            for &b in &lv[0] {
                for &r in &lv[1] {
                    for &t in &lv[2] {
                        for &x in &lv[3] {
                            for &y in &lv[4] {
                                out.push(ActuationVector::new(b, r, t, x, y));
                            }
                        }
                    }
                }
            }
            out
        }
        SampleMode::UniformRandom { count } => {
            let mut rng = seed::rng(seed);
            (0..count)
                .map(|_| {
                    ActuationVector::from_array(Channel::ALL.map(|c| {
                        let r = ranges.channel(c);
                        rng.gen_range(r.min..=r.max)
                    }))
                })
                .collect()
        }
    }
}

/// Number of grid points a thinned grid produces.
pub fn grid_count(ranges: &ActuationRanges, stride: [usize; 5]) -> usize {
    Channel::ALL
        .iter()
        .map(|c| {
            let n = ranges.channel(*c).level_count();
            n.div_ceil(stride[c.index()].max(1))
        })
        .product()
}
