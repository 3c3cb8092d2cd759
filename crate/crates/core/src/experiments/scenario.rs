//! Scenario definitions: run counts, scene and disturbance changes, episode
//! draws and the config-diff audit.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::config::{ExperimentConfig, Pipeline};
use super::ExperimentError;
use crate::arm_sim::{ActuationVector, Disturbance};
use crate::dataset::GenerateConfig;
use crate::render::{project, scene_variant, Scene, SceneVariant};
use crate::seed;
use crate::servo::{episode_pairs, random_actuation, SimContext};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    IntegratedN30,
    ModularN15,
    NewTargetsN6,
    LightingN10,
    DiminutionN10,
    UniformLoadN10,
    BackgroundChangeN5,
    GainSweep,
}

impl Scenario {
    pub const ALL: [Scenario; 8] = [
        Scenario::IntegratedN30,
        Scenario::ModularN15,
        Scenario::NewTargetsN6,
        Scenario::LightingN10,
        Scenario::DiminutionN10,
        Scenario::UniformLoadN10,
        Scenario::BackgroundChangeN5,
        Scenario::GainSweep,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::IntegratedN30 => "integrated_n30",
            Scenario::ModularN15 => "modular_n15",
            Scenario::NewTargetsN6 => "new_targets_n6",
            Scenario::LightingN10 => "lighting_n10",
            Scenario::DiminutionN10 => "diminution_n10",
            Scenario::UniformLoadN10 => "uniform_load_n10",
            Scenario::BackgroundChangeN5 => "background_change_n5",
            Scenario::GainSweep => "gain_sweep",
        }
    }

    /// Episode count at paper scale. The gain sweep has no published
    /// count; 20 episodes per gain pair is an artifact choice.
    pub fn paper_runs(self) -> usize {
        match self {
            Scenario::IntegratedN30 => 30,
            Scenario::ModularN15 => 15,
            Scenario::NewTargetsN6 => 6,
            Scenario::LightingN10 | Scenario::DiminutionN10 | Scenario::UniformLoadN10 => 10,
            Scenario::BackgroundChangeN5 => 5,
            Scenario::GainSweep => 20,
        }
    }

    pub fn pipeline(self) -> Pipeline {
        match self {
            Scenario::ModularN15 => Pipeline::Modular,
            _ => Pipeline::Integrated,
        }
    }

    /// Top-level fields of [`SimContext`] (dotted paths) this scenario may
    /// change relative to the baseline.
    pub fn declared_changes(self) -> &'static [&'static str] {
        match self {
            Scenario::IntegratedN30 | Scenario::ModularN15 | Scenario::GainSweep => &[],
            Scenario::NewTargetsN6 => &["scene.fiducials"],
            Scenario::LightingN10 => &["scene.illumination"],
            Scenario::DiminutionN10 | Scenario::UniformLoadN10 => &["disturbance"],
            Scenario::BackgroundChangeN5 => &["scene.background"],
        }
    }
}

impl std::fmt::Display for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Scenario {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Scenario::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| format!("unknown scenario {s:?}"))
    }
}

/// The simulator the training data came from, with no disturbance.
pub fn baseline_context(data: &GenerateConfig, root_seed: u64) -> SimContext {
    SimContext {
        arm: data.arm.clone(),
        ranges: data.ranges.clone(),
        scene: data.scene.clone(),
        intrinsics: data.intrinsics,
        disturbance: Disturbance::None,
        seed: seed::derive(root_seed, "sim"),
    }
}

/// Baseline with the scenario's scene or disturbance change applied.
pub fn scenario_context(cfg: &ExperimentConfig, scenario: Scenario, baseline: &SimContext) -> SimContext {
    let mut ctx = baseline.clone();
    match scenario {
        Scenario::IntegratedN30 | Scenario::ModularN15 | Scenario::GainSweep => {}
        Scenario::NewTargetsN6 => ctx.scene = scene_variant(&baseline.scene, SceneVariant::NewTargets),
        Scenario::LightingN10 => ctx.scene.illumination = baseline.scene.illumination * cfg.lighting_factor,
        Scenario::DiminutionN10 => {
            ctx.disturbance = Disturbance::Diminution {
                constrained_fraction: cfg.diminution_fraction,
            }
        }
        Scenario::UniformLoadN10 => ctx.disturbance = Disturbance::six_rings(),
        Scenario::BackgroundChangeN5 => ctx.scene = scene_variant(&baseline.scene, SceneVariant::Background2),
    }
    ctx
}

/// Dotted paths of every leaf that differs between two serialized values.
/// Arrays of different length report the array path itself.
pub fn config_diff(a: &Value, b: &Value) -> Vec<String> {
    fn walk(path: &str, a: &Value, b: &Value, out: &mut Vec<String>) {
        let join = |k: &str| if path.is_empty() { k.to_string() } else { format!("{path}.{k}") };
        match (a, b) {
            (Value::Object(x), Value::Object(y)) => {
                let mut keys: Vec<&String> = x.keys().chain(y.keys()).collect();
                keys.sort();
                keys.dedup();
                for k in keys {
                    match (x.get(k), y.get(k)) {
                        (Some(u), Some(v)) => walk(&join(k), u, v, out),
                        _ => out.push(join(k)),
                    }
                }
            }
            (Value::Array(x), Value::Array(y)) if x.len() == y.len() => {
                for (i, (u, v)) in x.iter().zip(y).enumerate() {
                    walk(&format!("{path}[{i}]"), u, v, out);
                }
            }
            _ if a != b => out.push(path.to_string()),
            _ => {}
        }
    }
    let mut out = Vec::new();
    walk("", a, b, &mut out);
    out
}

fn covered(path: &str, declared: &[&str]) -> bool {
    declared.iter().any(|d| {
        path == *d
            || path
                .strip_prefix(d)
                .is_some_and(|rest| rest.starts_with('.') || rest.starts_with('['))
    })
}

/// Differences between the scenario context and the baseline. Fails if any
/// difference falls outside the scenario's declared changes.
pub fn audit(scenario: Scenario, baseline: &SimContext, ctx: &SimContext) -> Result<Vec<String>, ExperimentError> {
    let a = serde_json::to_value(baseline).map_err(|e| ExperimentError::Format(e.to_string()))?;
    let b = serde_json::to_value(ctx).map_err(|e| ExperimentError::Format(e.to_string()))?;
    let diff = config_diff(&a, &b);
    let undeclared: Vec<&String> = diff
        .iter()
        .filter(|p| !covered(p, scenario.declared_changes()))
        .collect();
    if !undeclared.is_empty() {
        return Err(ExperimentError::Audit(format!(
            "{scenario} changes undeclared fields {undeclared:?}"
        )));
    }
    Ok(diff)
}

/// Does any fiducial added by the new-targets variant land on the target
/// frame?
fn new_fiducial_visible(ctx: &SimContext, baseline_scene: &Scene, target: &ActuationVector) -> Result<bool, ExperimentError> {
    let pose = ctx.settle(target, u64::MAX)?;
    Ok(ctx.scene.fiducials[baseline_scene.fiducials.len()..]
        .iter()
        .filter_map(|f| project(&pose, f, &ctx.intrinsics))
        .any(|d| d.visible(&ctx.intrinsics)))
}

/// Seeded (initial, target) pairs. All scenarios share one episode stream,
/// so equal counts give equal starts and targets. In the new-targets
/// scenario the first half of the targets are redrawn until a new fiducial
/// is in view.
pub fn episodes(
    cfg: &ExperimentConfig,
    scenario: Scenario,
    ctx: &SimContext,
    baseline: &SimContext,
) -> Result<Vec<(ActuationVector, ActuationVector)>, ExperimentError> {
    let n = cfg.run_count(scenario);
    let mut pairs = episode_pairs(&ctx.ranges, seed::derive(cfg.seed, "episodes"), n);
    if scenario == Scenario::NewTargetsN6 {
        let stream = seed::derive(cfg.seed, "episodes.new_targets");
        let mut draw = 0u64;
        for pair in pairs.iter_mut().take(n / 2) {
            loop {
                let t = random_actuation(&ctx.ranges, seed::derive_index(stream, draw));
                draw += 1;
                if new_fiducial_visible(ctx, &baseline.scene, &t)? {
                    pair.1 = t;
                    break;
                }
                if draw > 10_000 {
                    return Err(ExperimentError::Config(
                        "no target configuration sees a new fiducial".into(),
                    ));
                }
            }
        }
    }
    Ok(pairs)
}
