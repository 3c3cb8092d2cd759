//! Proportional visual-servo loop: predict the actuation behind the current
//! and the target image, then step the applied actuation by the gained
//! difference.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arm_sim::{
    clamp_actuation, forward_kinematics_in, ActuationRanges, ActuationVector, ArmConfig,
    ArmError, Disturbance,
};
use crate::geometry::{rotation_error, translation_error, Pose};
use crate::metrics::{mse_a, MetricUnits, RunOutcome, CONVERGENCE_THRESHOLD};
use crate::neural::{Model, NeuralError, Tensor};
use crate::render::{render, CameraIntrinsics, Scene, TipImage};
use crate::seed;

pub const TRACE_SCHEMA_VERSION: u32 = 1;
pub const MAX_ITERATIONS: usize = 15;

#[derive(Debug, Error)]
pub enum ServoError {
    #[error("gains must be > 0, got ({lambda_r}, {lambda_s})")]
    BadGains { lambda_r: f64, lambda_s: f64 },
    #[error(transparent)]
    Arm(#[from] ArmError),
    #[error("predictor: {0}")]
    Predictor(String),
    #[error(transparent)]
    Neural(#[from] NeuralError),
}

/// `lambda_r` drives (t, x, y); `lambda_s` drives (b, r).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GainSchedule {
    pub lambda_r: f64,
    pub lambda_s: f64,
}

impl Default for GainSchedule {
    fn default() -> Self {
        GainSchedule {
            lambda_r: 0.6,
            lambda_s: 0.7,
        }
    }
}

impl GainSchedule {
    pub fn new(lambda_r: f64, lambda_s: f64) -> Result<Self, ServoError> {
        let g = GainSchedule { lambda_r, lambda_s };
        g.validate()?;
        Ok(g)
    }

    pub fn uniform(lambda: f64) -> Result<Self, ServoError> {
        Self::new(lambda, lambda)
    }

    pub fn validate(&self) -> Result<(), ServoError> {
        if self.lambda_r > 0.0 && self.lambda_s > 0.0 && self.lambda_r.is_finite() && self.lambda_s.is_finite() {
            Ok(())
        } else {
            Err(ServoError::BadGains {
                lambda_r: self.lambda_r,
                lambda_s: self.lambda_s,
            })
        }
    }

    /// Gain per channel in (b, r, t, x, y) order.
    pub fn per_channel(&self) -> [f64; 5] {
        [self.lambda_s, self.lambda_s, self.lambda_r, self.lambda_r, self.lambda_r]
    }
}

/// Unclamped update `a_rc - λ (a_pc - a_pt)`.
pub fn control_update(a_rc: &ActuationVector, a_pc: &ActuationVector, a_pt: &ActuationVector, g: &GainSchedule) -> ActuationVector {
    let (rc, pc, pt) = (a_rc.to_array(), a_pc.to_array(), a_pt.to_array());
    let lam = g.per_channel();
    ActuationVector::from_array(std::array::from_fn(|i| rc[i] - lam[i] * (pc[i] - pt[i])))
}

/// [`control_update`] clamped into `ranges`.
pub fn control_step(
    a_rc: &ActuationVector,
    a_pc: &ActuationVector,
    a_pt: &ActuationVector,
    g: &GainSchedule,
    ranges: &ActuationRanges,
) -> ActuationVector {
    clamp_actuation(&control_update(a_rc, a_pc, a_pt, g), ranges)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Converged,
    Budget,
    Error,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StoppingRule {
    pub threshold: f64,
    pub max_iterations: usize,
}

impl Default for StoppingRule {
    fn default() -> Self {
        StoppingRule {
            threshold: CONVERGENCE_THRESHOLD,
            max_iterations: MAX_ITERATIONS,
        }
    }
}

impl StoppingRule {
    /// `None` means keep going. `iteration` counts control updates applied
    /// so far.
    pub fn check(&self, mse_a: f64, iteration: usize) -> Option<StopReason> {
        if mse_a < self.threshold {
            Some(StopReason::Converged)
        } else if iteration >= self.max_iterations {
            Some(StopReason::Budget)
        } else {
            None
        }
    }
}

/// Default-threshold form of [`StoppingRule::check`].
pub fn stopping_rule(mse_a: f64, iteration: usize) -> Option<StopReason> {
    StoppingRule::default().check(mse_a, iteration)
}

/// What a predictor sees: the camera image, plus the commanded actuation
/// that produced it (used only by the oracle).
pub struct Observation<'a> {
    pub image: &'a TipImage,
    pub commanded: &'a ActuationVector,
}

pub trait Predictor {
    fn predict(&self, obs: &Observation) -> Result<ActuationVector, ServoError>;
}

/// Returns the commanded actuation, optionally perturbed by Gaussian noise
/// that is a fixed function of the actuation and the seed.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct OraclePredictor {
    pub sigma: [f64; 5],
    pub seed: u64,
}

impl OraclePredictor {
    pub fn exact() -> Self {
        Self::default()
    }
}

impl Predictor for OraclePredictor {
    fn predict(&self, obs: &Observation) -> Result<ActuationVector, ServoError> {
        let a = obs.commanded.to_array();
        if self.sigma.iter().all(|s| *s == 0.0) {
            return Ok(*obs.commanded);
        }
        let key = a.iter().fold(self.seed, |h, v| seed::derive_index(h, v.to_bits()));
        let mut rng = seed::rng(key);
        let mut out = a;
        for (o, s) in out.iter_mut().zip(self.sigma) {
            *o += s * rand_distr::Distribution::<f64>::sample(&rand_distr::StandardNormal, &mut rng);
        }
        Ok(ActuationVector::from_array(out))
    }
}

fn image_tensor(img: &TipImage) -> Result<Tensor, ServoError> {
    Ok(Tensor::new(vec![1, 3, img.height, img.width], img.to_chw())?)
}

fn single_output(model: &Model, input: Tensor) -> Result<Vec<f64>, ServoError> {
    let out = model.net.predict(&input)?;
    match &model.output_norm {
        Some(n) => n.denormalize(&out.data).map_err(|e| ServoError::Predictor(e.to_string())),
        None => Ok(out.data),
    }
}

fn to_actuation(v: Vec<f64>) -> Result<ActuationVector, ServoError> {
    let arr: [f64; 5] = v
        .try_into()
        .map_err(|v: Vec<f64>| ServoError::Predictor(format!("expected 5 outputs, got {}", v.len())))?;
    Ok(ActuationVector::from_array(arr))
}

/// Image to actuation in one network.
#[derive(Debug, Clone)]
pub struct IntegratedPredictor {
    pub model: Model,
}

impl Predictor for IntegratedPredictor {
    fn predict(&self, obs: &Observation) -> Result<ActuationVector, ServoError> {
        to_actuation(single_output(&self.model, image_tensor(obs.image)?)?)
    }
}

/// Image to pose, then pose to actuation.
#[derive(Debug, Clone)]
pub struct ModularPredictor {
    pub pose_model: Model,
    pub actuation_model: Model,
}

impl ModularPredictor {
    pub fn predict_pose(&self, img: &TipImage) -> Result<Vec<f64>, ServoError> {
        single_output(&self.pose_model, image_tensor(img)?)
    }
}

impl Predictor for ModularPredictor {
    fn predict(&self, obs: &Observation) -> Result<ActuationVector, ServoError> {
        let pose = self.predict_pose(obs.image)?;
        let input = match &self.actuation_model.input_norm {
            Some(n) => n.normalize(&pose).map_err(|e| ServoError::Predictor(e.to_string()))?,
            None => pose,
        };
        let n = input.len();
        to_actuation(single_output(&self.actuation_model, Tensor::new(vec![1, n], input)?)?)
    }
}

/// The simulated arm and camera.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimContext {
    pub arm: ArmConfig,
    pub ranges: ActuationRanges,
    pub scene: Scene,
    pub intrinsics: CameraIntrinsics,
    pub disturbance: Disturbance,
    /// Seed for stochastic disturbances.
    pub seed: u64,
}

impl SimContext {
    pub fn new(scene: Scene, intrinsics: CameraIntrinsics) -> Self {
        SimContext {
            arm: ArmConfig::default(),
            ranges: ActuationRanges::default(),
            scene,
            intrinsics,
            disturbance: Disturbance::None,
            seed: 0,
        }
    }

    /// Settled tip pose for a commanded actuation. `step` keys the
    /// disturbance noise so every settle draws independently.
    pub fn settle(&self, a: &ActuationVector, step: u64) -> Result<Pose, ServoError> {
        Ok(forward_kinematics_in(a, &self.ranges, &self.arm, &self.disturbance, seed::derive_index(self.seed, step))?)
    }

    /// 8-bit camera frame at `pose`.
    pub fn capture(&self, pose: &Pose) -> TipImage {
        render(pose, &self.scene, &self.intrinsics).quantized()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServoStep {
    /// Control updates applied before this observation.
    pub k: usize,
    pub applied: ActuationVector,
    pub predicted_current: ActuationVector,
    /// Gate metric: predicted current vs predicted target.
    pub mse_a: f64,
    /// Applied vs predicted target.
    pub mse_a_applied: f64,
    pub pose: Pose,
    pub translation_cm: f64,
    pub rotation_rad: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServoTrace {
    pub schema_version: u32,
    pub gains: GainSchedule,
    pub initial: ActuationVector,
    pub target: ActuationVector,
    pub target_pose: Pose,
    pub predicted_target: ActuationVector,
    pub steps: Vec<ServoStep>,
    pub stop: StopReason,
    pub error: Option<String>,
}

impl ServoTrace {
    /// Control updates applied in total.
    pub fn iterations(&self) -> usize {
        self.steps.last().map_or(0, |s| s.k)
    }

    pub fn outcome(&self) -> RunOutcome {
        let last = self.steps.last();
        RunOutcome {
            iterations: self.iterations(),
            converged: self.stop == StopReason::Converged,
            mse_a: last.map_or(f64::NAN, |s| s.mse_a),
            translation_cm: last.map_or(f64::NAN, |s| s.translation_cm),
            rotation_rad: last.map_or(f64::NAN, |s| s.rotation_rad),
        }
    }

    pub const CSV_HEADER: &'static str = "run,iterations,stop,mse_a,mse_a_applied,translation_cm,rotation_rad";

    /// Row for the runs-summary CSV, without a trailing newline.
    pub fn csv_row(&self, run: usize) -> String {
        let stop = match self.stop {
            StopReason::Converged => "converged",
            StopReason::Budget => "budget",
            StopReason::Error => "error",
        };
        match self.steps.last() {
            Some(s) => format!(
                "{run},{},{stop},{},{},{},{}",
                s.k, s.mse_a, s.mse_a_applied, s.translation_cm, s.rotation_rad
            ),
            None => format!("{run},0,{stop},,,,"),
        }
    }

    /// `run,iteration,translation_cm,rotation_rad` rows, one per step.
    pub fn error_rows(&self, run: usize) -> Vec<String> {
        self.steps
            .iter()
            .map(|s| format!("{run},{},{},{}", s.k, s.translation_cm, s.rotation_rad))
            .collect()
    }
}

/// A target configuration and the image the camera sees there.
#[derive(Debug, Clone)]
pub struct Target {
    pub actuation: ActuationVector,
    pub pose: Pose,
    pub image: TipImage,
}

impl Target {
    pub fn capture(actuation: ActuationVector, ctx: &SimContext) -> Result<Self, ServoError> {
        // the target frame uses its own disturbance draw
        let pose = ctx.settle(&actuation, u64::MAX)?;
        Ok(Target {
            actuation,
            pose,
            image: ctx.capture(&pose),
        })
    }
}

/// Runs the loop from `initial` until the stopping rule fires. Predictor
/// failures end the trace with [`StopReason::Error`].
pub fn run_servo(
    initial: ActuationVector,
    target: &Target,
    predictor: &dyn Predictor,
    ctx: &SimContext,
    gains: &GainSchedule,
    stop: &StoppingRule,
    units: &MetricUnits,
) -> Result<ServoTrace, ServoError> {
    gains.validate()?;
    ctx.ranges.check(&initial)?;
    let mut trace = ServoTrace {
        schema_version: TRACE_SCHEMA_VERSION,
        gains: *gains,
        initial,
        target: target.actuation,
        target_pose: target.pose,
        predicted_target: target.actuation,
        steps: Vec::new(),
        stop: StopReason::Error,
        error: None,
    };
    let a_pt = match predictor.predict(&Observation {
        image: &target.image,
        commanded: &target.actuation,
    }) {
        Ok(a) => a,
        Err(e) => {
            trace.error = Some(e.to_string());
            return Ok(trace);
        }
    };
    trace.predicted_target = a_pt;
    let mut a_rc = initial;
    for k in 0.. {
        let pose = ctx.settle(&a_rc, k as u64)?;
        let image = ctx.capture(&pose);
        let a_pc = match predictor.predict(&Observation {
            image: &image,
            commanded: &a_rc,
        }) {
            Ok(a) => a,
            Err(e) => {
                trace.error = Some(e.to_string());
                return Ok(trace);
            }
        };
        let m = mse_a(&a_pc, &a_pt, units);
        trace.steps.push(ServoStep {
            k,
            applied: a_rc,
            predicted_current: a_pc,
            mse_a: m,
            mse_a_applied: mse_a(&a_rc, &a_pt, units),
            pose,
            translation_cm: translation_error(&pose, &target.pose),
            rotation_rad: rotation_error(&pose.rotation(), &target.pose.rotation()),
        });
        if let Some(reason) = stop.check(m, k) {
            trace.stop = reason;
            break;
        }
        a_rc = control_step(&a_rc, &a_pc, &a_pt, gains, &ctx.ranges);
    }
    Ok(trace)
}

/// A uniformly drawn actuation inside `ranges`.
pub fn random_actuation(ranges: &ActuationRanges, seed: u64) -> ActuationVector {
    use rand::Rng;
    let mut rng = seed::rng(seed);
    ActuationVector::from_array(crate::arm_sim::Channel::ALL.map(|c| {
        let r = ranges.channel(c);
        rng.gen_range(r.min..=r.max)
    }))
}

/// `n` seeded (initial, target) actuation pairs.
pub fn episode_pairs(ranges: &ActuationRanges, root: u64, n: usize) -> Vec<(ActuationVector, ActuationVector)> {
    let initial = seed::derive(root, "initial");
    let target = seed::derive(root, "target");
    (0..n as u64)
        .map(|i| {
            (
                random_actuation(ranges, seed::derive_index(initial, i)),
                random_actuation(ranges, seed::derive_index(target, i)),
            )
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainCell {
    pub lambda_r: f64,
    pub lambda_s: f64,
    pub iterations: Vec<usize>,
    pub converged: usize,
    pub mean_iterations: f64,
}

/// Mean iterations-to-stop and convergence count for every gain pair.
pub fn gain_sweep(
    lambda_r: &[f64],
    lambda_s: &[f64],
    episodes: &[(ActuationVector, ActuationVector)],
    predictor: &dyn Predictor,
    ctx: &SimContext,
    stop: &StoppingRule,
    units: &MetricUnits,
) -> Result<Vec<GainCell>, ServoError> {
    let targets = episodes
        .iter()
        .map(|(_, t)| Target::capture(*t, ctx))
        .collect::<Result<Vec<_>, _>>()?;
    let mut cells = Vec::with_capacity(lambda_r.len() * lambda_s.len());
    for &lr in lambda_r {
        for &ls in lambda_s {
            let g = GainSchedule::new(lr, ls)?;
            let mut iterations = Vec::with_capacity(episodes.len());
            let mut converged = 0;
            for ((init, _), target) in episodes.iter().zip(&targets) {
                let t = run_servo(*init, target, predictor, ctx, &g, stop, units)?;
                converged += usize::from(t.stop == StopReason::Converged);
                iterations.push(t.iterations());
            }
            let mean_iterations = iterations.iter().sum::<usize>() as f64 / iterations.len().max(1) as f64;
            cells.push(GainCell {
                lambda_r: lr,
                lambda_s: ls,
                iterations,
                converged,
                mean_iterations,
            });
        }
    }
    Ok(cells)
}

/// Iterations the exact geometric decay `e_k = (1-λ)^k e_0` needs before the
/// unrounded scaled error drops below the threshold, capped at the budget.
pub fn geometric_iterations(
    initial: &ActuationVector,
    target: &ActuationVector,
    g: &GainSchedule,
    stop: &StoppingRule,
    units: &MetricUnits,
) -> usize {
    let (a, t) = (initial.to_array(), target.to_array());
    let e0: [f64; 5] = std::array::from_fn(|i| a[i] - t[i]);
    let lam = g.per_channel();
    for k in 0..stop.max_iterations {
        let m = (0..5)
            .map(|i| ((1.0 - lam[i]).powi(k as i32) * e0[i] / units.resolution[i]).powi(2))
            .sum::<f64>()
            / 5.0;
        if m < stop.threshold {
            return k;
        }
    }
    stop.max_iterations
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::render::Scene;
    use proptest::prelude::*;

    fn ctx() -> SimContext {
        SimContext::new(Scene::training(), CameraIntrinsics::square(16))
    }

    fn v(a: [f64; 5]) -> ActuationVector {
        ActuationVector::from_array(a)
    }

    #[test]
    fn gains_must_be_positive() {
        assert!(GainSchedule::new(0.0, 0.7).is_err());
        assert!(GainSchedule::new(0.6, -1.0).is_err());
        assert_eq!(GainSchedule::default().per_channel(), [0.7, 0.7, 0.6, 0.6, 0.6]);
    }

    #[test]
    fn control_step_cases() {
        let r = ActuationRanges::default();
        let a = v([120.0, 10.0, 0.01, 0.16, 0.17]);
        let g = GainSchedule::new(0.3, 0.9).unwrap();
        assert_eq!(control_step(&a, &a, &a, &g, &r), a);
        let t = v([110.0, -40.0, -0.05, 0.15, 0.19]);
        assert_eq!(control_step(&a, &a, &t, &GainSchedule::uniform(1.0).unwrap(), &r), t);
        // 10 kPa error on b with gain 0.6 leaves 4 kPa
        let t = v([110.0, 10.0, 0.01, 0.16, 0.17]);
        let next = control_update(&a, &a, &t, &GainSchedule::uniform(0.6).unwrap());
        assert!((next.b - t.b - 4.0).abs() < 1e-12);
    }

    #[test]
    fn clamped_update_stays_in_envelope() {
        let r = ActuationRanges::default();
        let a = r.maxima();
        let next = control_step(&a, &r.minima(), &r.maxima(), &GainSchedule::uniform(1.2).unwrap(), &r);
        assert_eq!(next, r.maxima());
    }

    #[test]
    fn stopping_rule_cases() {
        assert_eq!(stopping_rule(4.99, 3), Some(StopReason::Converged));
        assert_eq!(stopping_rule(80.0, 15), Some(StopReason::Budget));
        assert_eq!(stopping_rule(5.0, 1), None);
    }

    #[test]
    fn oracle_one_step_at_unit_gain() {
        let c = ctx();
        let (init, tgt) = episode_pairs(&c.ranges, 3, 1)[0];
        let target = Target::capture(tgt, &c).unwrap();
        let g = GainSchedule::uniform(1.0).unwrap();
        let t = run_servo(init, &target, &OraclePredictor::exact(), &c, &g, &StoppingRule::default(), &MetricUnits::default()).unwrap();
        assert_eq!(t.stop, StopReason::Converged);
        assert_eq!(t.iterations(), 1);
        assert_eq!(t.steps.last().unwrap().mse_a, 0.0);
        assert!(t.steps.last().unwrap().translation_cm < 1e-9);
    }

    #[test]
    fn oracle_trace_decays_geometrically() {
        let c = ctx();
        let g = GainSchedule::new(0.6, 0.6).unwrap();
        let units = MetricUnits::default();
        let stop = StoppingRule {
            threshold: 0.0,
            max_iterations: 8,
        };
        for (init, tgt) in episode_pairs(&c.ranges, 11, 5) {
            let target = Target::capture(tgt, &c).unwrap();
            let t = run_servo(init, &target, &OraclePredictor::exact(), &c, &g, &stop, &units).unwrap();
            for w in t.steps.windows(2) {
                let e0 = w[0].applied.to_array();
                let e1 = w[1].applied.to_array();
                for i in 0..5 {
                    let want = 0.4 * (e0[i] - tgt.to_array()[i]);
                    let got = e1[i] - tgt.to_array()[i];
                    assert!((got - want).abs() < 1e-9 * (1.0 + want.abs()));
                }
            }
            // MSE is non-increasing when nothing clamps
            for w in t.steps.windows(2) {
                assert!(w[1].mse_a <= w[0].mse_a);
            }
        }
    }

    #[test]
    fn budget_caps_iterations() {
        let c = ctx();
        let (init, tgt) = episode_pairs(&c.ranges, 5, 1)[0];
        let target = Target::capture(tgt, &c).unwrap();
        let noisy = OraclePredictor {
            sigma: [30.0, 80.0, 0.0, 0.0, 0.0],
            seed: 1,
        };
        let t = run_servo(init, &target, &noisy, &c, &GainSchedule::default(), &StoppingRule::default(), &MetricUnits::default()).unwrap();
        assert_eq!(t.stop, StopReason::Budget);
        assert_eq!(t.iterations(), MAX_ITERATIONS);
        assert_eq!(t.steps.len(), MAX_ITERATIONS + 1);
    }

    struct Failing;
    impl Predictor for Failing {
        fn predict(&self, _: &Observation) -> Result<ActuationVector, ServoError> {
            Err(ServoError::Predictor("boom".into()))
        }
    }

    #[test]
    fn predictor_failure_ends_trace() {
        let c = ctx();
        let (init, tgt) = episode_pairs(&c.ranges, 5, 1)[0];
        let target = Target::capture(tgt, &c).unwrap();
        let t = run_servo(init, &target, &Failing, &c, &GainSchedule::default(), &StoppingRule::default(), &MetricUnits::default()).unwrap();
        assert_eq!(t.stop, StopReason::Error);
        assert!(t.error.unwrap().contains("boom"));
    }

    #[test]
    fn geometric_iterations_oracle() {
        let units = MetricUnits::default();
        let stop = StoppingRule::default();
        let a = v([120.0, 10.0, 0.0, 0.16, 0.16]);
        let mut t = a;
        t.b += 10.0;
        // 10 kPa = 100 resolution steps: (1/5)(100 * 0.5^k)^2 < 5 -> 0.5^k < 0.05 -> k = 5
        assert_eq!(geometric_iterations(&a, &t, &GainSchedule::uniform(0.5).unwrap(), &stop, &units), 5);
        assert_eq!(geometric_iterations(&a, &t, &GainSchedule::uniform(1.0).unwrap(), &stop, &units), 1);
    }

    #[test]
    fn oracle_noise_is_a_fixed_function() {
        let p = OraclePredictor {
            sigma: [1.0; 5],
            seed: 9,
        };
        let img = TipImage::filled(1, 1, [0.0; 3]);
        let a = v([120.0, 10.0, 0.0, 0.16, 0.16]);
        let obs = Observation {
            image: &img,
            commanded: &a,
        };
        assert_eq!(p.predict(&obs).unwrap(), p.predict(&obs).unwrap());
        assert_ne!(p.predict(&obs).unwrap(), a);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn fixed_point_for_any_gains(lr in 0.01f64..1.5, ls in 0.01f64..1.5, seed in any::<u64>()) {
            let r = ActuationRanges::default();
            let a = random_actuation(&r, seed);
            let p = random_actuation(&r, seed ^ 1);
            let g = GainSchedule::new(lr, ls).unwrap();
            prop_assert_eq!(control_step(&a, &p, &p, &g, &r), a);
        }

        #[test]
        fn applied_never_leaves_envelope(lam in 0.1f64..1.5, seed in any::<u64>()) {
            let r = ActuationRanges::default();
            let a = random_actuation(&r, seed);
            let pc = random_actuation(&r, seed ^ 2);
            let pt = random_actuation(&r, seed ^ 3);
            let next = control_step(&a, &pc, &pt, &GainSchedule::uniform(lam).unwrap(), &r);
            prop_assert!(r.check(&next).is_ok());
        }
    }
}
