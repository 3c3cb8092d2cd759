//! Actuation error metric, tip errors, run summaries and histograms.

use serde::{Deserialize, Serialize};

use crate::arm_sim::ActuationVector;

/// Per-channel resolution used by [`mse_a`]. Channels are in kPa (b, r),
/// radians (t) and meters (x, y).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricUnits {
    /// Smallest meaningful change of each channel.
    pub resolution: [f64; 5],
    /// Decimal places kept before differencing.
    pub decimals: u32,
}

impl Default for MetricUnits {
    fn default() -> Self {
        MetricUnits {
            resolution: [0.1; 5],
            decimals: 1,
        }
    }
}

/// Threshold below which a run counts as converged.
pub const CONVERGENCE_THRESHOLD: f64 = 5.0;
/// Histogram bin width for translation errors, in centimeters.
pub const TRANSLATION_BIN_CM: f64 = 0.5;
/// Histogram bin width for rotation errors, in radians.
pub const ROTATION_BIN_RAD: f64 = 0.05;

fn round_dp(v: f64, decimals: u32) -> f64 {
    let s = 10f64.powi(decimals as i32);
    (v * s).round() / s
}

/// Mean over the five channels of the squared, resolution-scaled
/// difference between rounded values.
pub fn mse_a(observed: &ActuationVector, target: &ActuationVector, u: &MetricUnits) -> f64 {
    let (o, t) = (observed.to_array(), target.to_array());
    (0..5)
        .map(|i| {
            let d = (round_dp(o[i], u.decimals) - round_dp(t[i], u.decimals)) / u.resolution[i];
            d * d
        })
        .sum::<f64>()
        / 5.0
}

/// Final state of one servo run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub iterations: usize,
    pub converged: bool,
    /// Gate value (predicted current vs predicted target) at the last step.
    pub mse_a: f64,
    pub translation_cm: f64,
    pub rotation_rad: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_width: f64,
    /// `counts[i]` holds values in `[i*w, (i+1)*w)`.
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn build(values: &[f64], bin_width: f64) -> Self {
        assert!(bin_width > 0.0, "bin width must be positive");
        let mut counts = Vec::new();
        for &v in values {
            let i = (v.max(0.0) / bin_width).floor() as usize;
            if counts.len() <= i {
                counts.resize(i + 1, 0);
            }
            counts[i] += 1;
        }
        Histogram { bin_width, counts }
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    /// `bin_start,bin_end,count` rows, one per bin.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("bin_start,bin_end,count\n");
        for (i, c) in self.counts.iter().enumerate() {
            let lo = i as f64 * self.bin_width;
            s.push_str(&format!("{},{},{c}\n", lo, lo + self.bin_width));
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub n: usize,
    pub converged: usize,
    /// Runs that stopped on the iteration budget rather than converging.
    pub outliers: usize,
    pub avg_mse_a: f64,
    pub avg_translation_cm: f64,
    pub avg_rotation_rad: f64,
    pub median_translation_cm: f64,
    pub mse_a: Vec<f64>,
    pub translation_cm: Vec<f64>,
    pub rotation_rad: Vec<f64>,
    pub iterations: Vec<usize>,
    pub translation_hist: Histogram,
    pub rotation_hist: Histogram,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        (s[n / 2 - 1] + s[n / 2]) / 2.0
    }
}

/// Aggregates final-iteration values. Returns `None` for an empty batch.
pub fn summarize(runs: &[RunOutcome]) -> Option<RunSummary> {
    if runs.is_empty() {
        return None;
    }
    let mse: Vec<f64> = runs.iter().map(|r| r.mse_a).collect();
    let tr: Vec<f64> = runs.iter().map(|r| r.translation_cm).collect();
    let rot: Vec<f64> = runs.iter().map(|r| r.rotation_rad).collect();
    let converged = runs.iter().filter(|r| r.converged).count();
    Some(RunSummary {
        n: runs.len(),
        converged,
        outliers: runs.len() - converged,
        avg_mse_a: mean(&mse),
        avg_translation_cm: mean(&tr),
        avg_rotation_rad: mean(&rot),
        median_translation_cm: median(&tr),
        translation_hist: Histogram::build(&tr, TRANSLATION_BIN_CM),
        rotation_hist: Histogram::build(&rot, ROTATION_BIN_RAD),
        mse_a: mse,
        translation_cm: tr,
        rotation_rad: rot,
        iterations: runs.iter().map(|r| r.iterations).collect(),
    })
}

impl RunSummary {
    pub fn convergence_rate(&self) -> f64 {
        self.converged as f64 / self.n as f64
    }

    pub const TABLE_HEADER: &'static str = "method,n,converged,avg_mse_a,avg_dist_cm,avg_rot_rad";

    /// One table row without a trailing newline.
    pub fn table_row(&self, method: &str) -> String {
        format!(
            "{method},{},{},{},{},{}",
            self.n, self.converged, self.avg_mse_a, self.avg_translation_cm, self.avg_rotation_rad
        )
    }
}
