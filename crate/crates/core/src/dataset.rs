//! Self-annotated image dataset: every image is labeled with the actuation
//! that produced it and the resulting camera pose.
//!
//! On-disk layout:
//!
//! ```text
//! <root>/images/img00000.png ...
//! <root>/actuations.csv   index,b,r,t,x,y
//! <root>/poses.csv        index,p_x,p_y,p_z,q0,q1,q2,q3
//! <root>/split.json       train/validation/test index lists
//! <root>/norm.json        label min/max from the training split
//! <root>/manifest.json    generation settings
//! ```

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arm_sim::{
    forward_kinematics_in, grid_count, workspace_sample, ActuationRanges, ActuationVector, ArmConfig,
    ArmError, Disturbance, SampleMode,
};
use crate::geometry::{GeometryError, Pose};
use crate::norm::{ChannelNorm, NormError};
use crate::render::{render, CameraIntrinsics, RenderError, Scene, TipImage};
use crate::seed;

/// Version stamped into every JSON file written here.
pub const SCHEMA_VERSION: u32 = 1;

pub const ACTUATION_HEADER: [&str; 6] = ["index", "b", "r", "t", "x", "y"];
pub const POSE_HEADER: [&str; 8] = ["index", "p_x", "p_y", "p_z", "q0", "q1", "q2", "q3"];

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path} line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },
    #[error("{path}: {message}")]
    Json { path: PathBuf, message: String },
    #[error("{path}: schema version {found}, expected {expected}")]
    Schema {
        path: PathBuf,
        found: u32,
        expected: u32,
    },
    #[error("output directory {0} is not empty")]
    NotEmpty(PathBuf),
    #[error("inconsistent dataset: {0}")]
    Inconsistent(String),
    #[error(transparent)]
    Arm(#[from] ArmError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Norm(#[from] NormError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// The full 7980-pose grid.
    Paper,
    /// 2400 poses drawn uniformly over the actuation ranges.
    Reduced,
}

/// Sample seed used by [`GenerateConfig::preset`].
pub const REDUCED_SAMPLE_SEED: u64 = 3;

impl Preset {
    pub fn sample_mode(self) -> SampleMode {
        match self {
            Preset::Paper => SampleMode::FULL_GRID,
            Preset::Reduced => SampleMode::UniformRandom { count: 2400 },
        }
    }

    pub fn split_plan(self) -> SplitPlan {
        match self {
            Preset::Paper => SplitPlan::Fixed {
                train: 4910,
                validation: 1676,
            },
            Preset::Reduced => SplitPlan::Proportional {
                weights: [4910.0, 1676.0, 2394.0],
            },
        }
    }
}

impl std::str::FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "paper" => Ok(Preset::Paper),
            "reduced" => Ok(Preset::Reduced),
            other => Err(format!("unknown preset {other:?} (expected paper or reduced)")),
        }
    }
}

/// How sample indices are divided between train, validation and test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SplitPlan {
    /// Exact train and validation counts; test takes the remainder.
    Fixed { train: usize, validation: usize },
    /// Train/validation/test in proportion to `weights` (rounded; test
    /// takes the remainder).
    Proportional { weights: [f64; 3] },
}

impl SplitPlan {
    pub fn sizes(&self, n: usize) -> Result<(usize, usize, usize), DatasetError> {
        match *self {
            SplitPlan::Fixed { train, validation } => {
                if train + validation > n {
                    return Err(DatasetError::Inconsistent(format!(
                        "split {train}+{validation} exceeds {n} samples"
                    )));
                }
                Ok((train, validation, n - train - validation))
            }
            SplitPlan::Proportional { weights } => {
                let total: f64 = weights.iter().sum();
                if !(total > 0.0) || weights.iter().any(|w| *w < 0.0) {
                    return Err(DatasetError::Inconsistent(format!("bad split weights {weights:?}")));
                }
                let train = (n as f64 * weights[0] / total).round() as usize;
                let val = ((n as f64 * weights[1] / total).round() as usize).min(n - train);
                Ok((train, val, n - train - val))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub schema_version: u32,
    pub seed: u64,
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitManifest {
    /// Seeded uniform shuffle of `0..n`, cut into the plan's sizes. Each
    /// list is returned in ascending order.
    pub fn draw(n: usize, plan: &SplitPlan, seed: u64) -> Result<Self, DatasetError> {
        let (tr, va, _) = plan.sizes(n)?;
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut seed::rng(seed::derive(seed, "split")));
        let mut train = idx[..tr].to_vec();
        let mut validation = idx[tr..tr + va].to_vec();
        let mut test = idx[tr + va..].to_vec();
        train.sort_unstable();
        validation.sort_unstable();
        test.sort_unstable();
        Ok(SplitManifest {
            schema_version: SCHEMA_VERSION,
            seed,
            train,
            validation,
            test,
        })
    }

    /// Checks the three lists are disjoint and cover `0..n`.
    pub fn validate(&self, n: usize) -> Result<(), DatasetError> {
        let mut seen = vec![false; n];
        for &i in self.train.iter().chain(&self.validation).chain(&self.test) {
            if i >= n || seen[i] {
                return Err(DatasetError::Inconsistent(format!(
                    "split index {i} out of range or repeated"
                )));
            }
            seen[i] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(DatasetError::Inconsistent("split does not cover every sample".into()));
        }
        Ok(())
    }
}

/// Label scaling frozen from the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationSpec {
    pub schema_version: u32,
    pub actuation: ChannelNorm,
    pub pose: ChannelNorm,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub index: usize,
    pub actuation: ActuationVector,
    pub pose: Pose,
}

impl Sample {
    pub fn image_name(index: usize) -> String {
        format!("img{index:05}.png")
    }

    pub fn image_path(&self, root: &Path) -> PathBuf {
        root.join("images").join(Self::image_name(self.index))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateConfig {
    pub sample_mode: SampleMode,
    /// Seed for random sample modes.
    pub sample_seed: u64,
    pub split_plan: SplitPlan,
    pub split_seed: u64,
    pub ranges: ActuationRanges,
    pub arm: ArmConfig,
    pub scene: Scene,
    pub intrinsics: CameraIntrinsics,
}

impl GenerateConfig {
    pub fn preset(preset: Preset, split_seed: u64) -> Self {
        GenerateConfig {
            sample_mode: preset.sample_mode(),
            sample_seed: REDUCED_SAMPLE_SEED,
            split_plan: preset.split_plan(),
            split_seed,
            ranges: ActuationRanges::default(),
            arm: ArmConfig::default(),
            scene: Scene::training(),
            intrinsics: CameraIntrinsics::default(),
        }
    }

    /// Number of samples this configuration produces.
    pub fn sample_count(&self) -> usize {
        match self.sample_mode {
            SampleMode::Grid { stride } => grid_count(&self.ranges, stride),
            SampleMode::UniformRandom { count } => count,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub count: usize,
    pub config: GenerateConfig,
    /// Training pairs with pixel-identical images but different actuations.
    pub image_collisions: usize,
}

/// A dataset read back from disk.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: DatasetManifest,
    pub samples: Vec<Sample>,
    pub split: SplitManifest,
    pub norm: NormalizationSpec,
}

/// Renders and labels the dataset under `out`, which must be absent or
/// empty. On failure the partially written directory is removed.
pub fn generate(out: &Path, cfg: &GenerateConfig) -> Result<Dataset, DatasetError> {
    if out.exists() && fs::read_dir(out).map_err(io_err(out))?.next().is_some() {
        return Err(DatasetError::NotEmpty(out.to_path_buf()));
    }
    let result = generate_into(out, cfg);
    if result.is_err() {
        let _ = fs::remove_dir_all(out);
    }
    result
}

fn generate_into(out: &Path, cfg: &GenerateConfig) -> Result<Dataset, DatasetError> {
    cfg.ranges.validate()?;
    cfg.arm.validate()?;
    cfg.scene.validate()?;
    cfg.intrinsics.validate()?;
    let images = out.join("images");
    fs::create_dir_all(&images).map_err(io_err(&images))?;

    let actuations = workspace_sample(&cfg.ranges, cfg.sample_mode, cfg.sample_seed);
    let mut samples = Vec::with_capacity(actuations.len());
    let mut rasters = Vec::with_capacity(actuations.len());
    for (index, a) in actuations.into_iter().enumerate() {
        let pose = forward_kinematics_in(&a, &cfg.ranges, &cfg.arm, &Disturbance::None, 0)?;
        let img = render(&pose, &cfg.scene, &cfg.intrinsics);
        let sample = Sample {
            index,
            actuation: a,
            pose,
        };
        img.save_png(&sample.image_path(out))?;
        rasters.push(img.to_bytes());
        samples.push(sample);
    }

    let split = SplitManifest::draw(samples.len(), &cfg.split_plan, cfg.split_seed)?;
    let norm = fit_normalization(&samples, &split.train)?;
    let image_collisions = collision_audit(&samples, &rasters, &split.train).len();

    write_labels(&samples, &out.join("actuations.csv"), &out.join("poses.csv"))?;
    write_json(&out.join("split.json"), &split)?;
    write_json(&out.join("norm.json"), &norm)?;
    let manifest = DatasetManifest {
        schema_version: SCHEMA_VERSION,
        count: samples.len(),
        config: cfg.clone(),
        image_collisions,
    };
    write_json(&out.join("manifest.json"), &manifest)?;
    Ok(Dataset {
        root: out.to_path_buf(),
        manifest,
        samples,
        split,
        norm,
    })
}

/// Min/max of actuation and pose labels over the listed samples.
pub fn fit_normalization(samples: &[Sample], indices: &[usize]) -> Result<NormalizationSpec, DatasetError> {
    let acts: Vec<[f64; 5]> = indices.iter().map(|i| samples[*i].actuation.to_array()).collect();
    let poses: Vec<[f64; 7]> = indices.iter().map(|i| samples[*i].pose.to_array()).collect();
    Ok(NormalizationSpec {
        schema_version: SCHEMA_VERSION,
        actuation: ChannelNorm::fit(acts.iter().map(|v| v.as_slice()))?,
        pose: ChannelNorm::fit(poses.iter().map(|v| v.as_slice()))?,
    })
}

/// Pairs `(i, j)` among `indices` whose 8-bit images are identical while
/// their actuations differ.
pub fn collision_audit(samples: &[Sample], rasters: &[Vec<u8>], indices: &[usize]) -> Vec<(usize, usize)> {
    let mut first: HashMap<&[u8], usize> = HashMap::new();
    let mut out = Vec::new();
    for &i in indices {
        match first.get(rasters[i].as_slice()) {
            Some(&j) if samples[j].actuation != samples[i].actuation => out.push((j, i)),
            Some(_) => {}
            None => {
                first.insert(&rasters[i], i);
            }
        }
    }
    out
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), DatasetError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| DatasetError::Json {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, DatasetError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| DatasetError::Json {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let found = value.get("schema_version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
    if found != SCHEMA_VERSION {
        return Err(DatasetError::Schema {
            path: path.to_path_buf(),
            found,
            expected: SCHEMA_VERSION,
        });
    }
    serde_json::from_value(value).map_err(|e| DatasetError::Json {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Writes the two label files. Numbers use the shortest representation
/// that parses back to the same `f64`.
pub fn write_labels(samples: &[Sample], actuations: &Path, poses: &Path) -> Result<(), DatasetError> {
    let mut a = String::from("index,b,r,t,x,y\n");
    let mut p = String::from("index,p_x,p_y,p_z,q0,q1,q2,q3\n");
    for s in samples {
        a.push_str(&s.index.to_string());
        for v in s.actuation.to_array() {
            a.push(',');
            a.push_str(&v.to_string());
        }
        a.push('\n');
        p.push_str(&s.index.to_string());
        for v in s.pose.to_array() {
            p.push(',');
            p.push_str(&v.to_string());
        }
        p.push('\n');
    }
    let write = |path: &Path, text: &str| -> Result<(), DatasetError> {
        let mut f = fs::File::create(path).map_err(io_err(path))?;
        f.write_all(text.as_bytes()).map_err(io_err(path))
    };
    write(actuations, &a)?;
    write(poses, &p)
}

fn read_rows<const N: usize>(path: &Path, header: [&str; N]) -> Result<Vec<(usize, Vec<f64>)>, DatasetError> {
    let parse_err = |line: u64, message: String| DatasetError::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)
        .map_err(|e| parse_err(0, e.to_string()))?;
    let got: Vec<String> = rdr
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if got != header {
        return Err(parse_err(1, format!("header {got:?}, expected {header:?}")));
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != N {
            return Err(parse_err(line, format!("{} fields, expected {N}", rec.len())));
        }
        let index: usize = rec[0]
            .trim()
            .parse()
            .map_err(|e| parse_err(line, format!("index {:?}: {e}", &rec[0])))?;
        let mut vals = Vec::with_capacity(N - 1);
        for (k, field) in rec.iter().enumerate().skip(1) {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|e| parse_err(line, format!("column {}: {field:?}: {e}", header[k])))?;
            vals.push(v);
        }
        rows.push((index, vals));
    }
    Ok(rows)
}

/// Reads the two label files back into samples.
pub fn read_labels(actuations: &Path, poses: &Path) -> Result<Vec<Sample>, DatasetError> {
    let acts = read_rows(actuations, ACTUATION_HEADER)?;
    let poses_rows = read_rows(poses, POSE_HEADER)?;
    if acts.len() != poses_rows.len() {
        return Err(DatasetError::Inconsistent(format!(
            "{} actuation rows vs {} pose rows",
            acts.len(),
            poses_rows.len()
        )));
    }
    let mut out = Vec::with_capacity(acts.len());
    for ((ia, a), (ip, p)) in acts.into_iter().zip(poses_rows) {
        if ia != ip {
            return Err(DatasetError::Inconsistent(format!(
                "row order differs: actuation index {ia} vs pose index {ip}"
            )));
        }
        out.push(Sample {
            index: ia,
            actuation: ActuationVector::from_array(a.try_into().expect("5 values")),
            pose: Pose::from_array(p.try_into().expect("7 values"))?,
        });
    }
    Ok(out)
}

impl Dataset {
    pub fn open(root: &Path) -> Result<Self, DatasetError> {
        let manifest: DatasetManifest = read_json(&root.join("manifest.json"))?;
        let split: SplitManifest = read_json(&root.join("split.json"))?;
        let norm: NormalizationSpec = read_json(&root.join("norm.json"))?;
        let samples = read_labels(&root.join("actuations.csv"), &root.join("poses.csv"))?;
        if samples.len() != manifest.count {
            return Err(DatasetError::Inconsistent(format!(
                "manifest lists {} samples, labels have {}",
                manifest.count,
                samples.len()
            )));
        }
        split.validate(samples.len())?;
        Ok(Dataset {
            root: root.to_path_buf(),
            manifest,
            samples,
            split,
            norm,
        })
    }

    pub fn load_image(&self, index: usize) -> Result<TipImage, DatasetError> {
        Ok(TipImage::load_png(&self.samples[index].image_path(&self.root))?)
    }

    /// Channel-major pixel values of the listed images, concatenated.
    pub fn load_inputs(&self, indices: &[usize]) -> Result<Vec<f64>, DatasetError> {
        let mut out = Vec::new();
        for &i in indices {
            out.extend(self.load_image(i)?.to_chw());
        }
        Ok(out)
    }

    /// Recomputes every pose from its actuation and reports the largest
    /// deviation (position in m, orientation in rad).
    pub fn max_label_drift(&self) -> Result<(f64, f64), DatasetError> {
        let cfg = &self.manifest.config;
        let mut worst = (0.0f64, 0.0f64);
        for s in &self.samples {
            let p = forward_kinematics_in(&s.actuation, &cfg.ranges, &cfg.arm, &Disturbance::None, 0)?;
            let dp = crate::geometry::norm(crate::geometry::sub(p.position, s.pose.position));
            let dr = p.orientation.angle_to(&s.pose.orientation);
            worst = (worst.0.max(dp), worst.1.max(dr));
        }
        Ok(worst)
    }
}
