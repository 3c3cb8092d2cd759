//! Generate, train and run: the steps behind each CLI subcommand.

use std::fs;
use std::path::{Path, PathBuf};

use super::config::{ExperimentConfig, Pipeline, PredictorKind};
use super::report::{self, ExperimentReport, GainSweepResult, Timing};
use super::scenario::{self, Scenario};
use super::ExperimentError;
use crate::arm_sim::{ActuationVector, SampleMode};
use crate::dataset::{self, Dataset, GenerateConfig, SplitPlan};
use crate::metrics::{summarize, MetricUnits};
use crate::neural::{evaluate, train, vsnet1_spec, vsnet2_spec, p2anet_spec, Model, NetSpec, Network, Samples, TrainConfig, TrainReport};
use crate::norm::ChannelNorm;
use crate::render::{scene_variant, CameraIntrinsics, SceneVariant};
use crate::seed;
use crate::servo::{
    run_servo, GainSchedule, IntegratedPredictor, ModularPredictor, OraclePredictor, Predictor, ServoTrace, SimContext, StoppingRule, Target,
};

/// Progress sink for long-running steps.
pub type Log<'a> = &'a mut dyn FnMut(&str);

/// Network names, also used as checkpoint file stems.
pub const VSNET1: &str = "vsnet1";
pub const VSNET2: &str = "vsnet2";
pub const P2ANET: &str = "p2anet";
pub const VSNET1_BACKGROUND: &str = "vsnet1_background2";

/// Where everything lives under the output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub out: PathBuf,
    pub dataset: PathBuf,
    pub background_dataset: PathBuf,
    pub models: PathBuf,
    pub experiments: PathBuf,
}

impl Layout {
    pub fn new(out: &Path, cfg: &ExperimentConfig) -> Self {
        Layout {
            out: out.to_path_buf(),
            dataset: out.join(&cfg.paths.dataset),
            background_dataset: out.join(&cfg.paths.background_dataset),
            models: out.join(&cfg.paths.models),
            experiments: out.join(&cfg.paths.experiments),
        }
    }

    pub fn checkpoint(&self, net: &str) -> PathBuf {
        self.models.join(format!("{net}.ssnn"))
    }

    pub fn train_report(&self, net: &str) -> PathBuf {
        self.models.join(format!("{net}_train.json"))
    }

    pub fn scenario_dir(&self, s: Scenario) -> PathBuf {
        self.experiments.join(s.name())
    }
}

/// Dataset settings for the configured preset, seeded from the root seed.
pub fn generate_config(cfg: &ExperimentConfig) -> GenerateConfig {
    let mut g = GenerateConfig::preset(cfg.preset, seed::derive(cfg.seed, "split"));
    g.sample_seed = seed::derive(cfg.seed, "samples");
    if let Some(count) = cfg.samples {
        g.sample_mode = SampleMode::UniformRandom { count };
    }
    g.intrinsics = CameraIntrinsics::square(cfg.image_size);
    g
}

/// Second-background images for the fine-tune pass: 80% train, 20%
/// validation.
pub fn background_config(cfg: &ExperimentConfig) -> GenerateConfig {
    let mut g = generate_config(cfg);
    g.scene = scene_variant(&g.scene, SceneVariant::Background2);
    g.sample_mode = SampleMode::UniformRandom {
        count: cfg.fine_tune.images,
    };
    g.sample_seed = seed::derive(cfg.seed, "samples.background2");
    g.split_seed = seed::derive(cfg.seed, "split.background2");
    let train = cfg.fine_tune.images * 4 / 5;
    g.split_plan = SplitPlan::Fixed {
        train,
        validation: cfg.fine_tune.images - train,
    };
    g
}

fn prepare_dir(dir: &Path, force: bool) -> Result<(), ExperimentError> {
    if force && dir.exists() {
        fs::remove_dir_all(dir).map_err(ExperimentError::io(dir))?;
    }
    Ok(())
}

/// Renders the dataset. An existing non-empty directory is an error unless
/// `force` is set, in which case it is replaced.
pub fn cmd_generate(cfg: &ExperimentConfig, layout: &Layout, force: bool) -> Result<Dataset, ExperimentError> {
    prepare_dir(&layout.dataset, force)?;
    Ok(dataset::generate(&layout.dataset, &generate_config(cfg))?)
}

/// What a network learns to predict from an image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageTarget {
    Actuation,
    Pose,
}

/// Images and normalized labels for the listed samples.
pub fn image_samples(ds: &Dataset, indices: &[usize], target: ImageTarget, norm: &ChannelNorm) -> Result<Samples, ExperimentError> {
    let intr = ds.manifest.config.intrinsics;
    let inputs = ds.load_inputs(indices)?;
    let mut targets = Vec::with_capacity(indices.len() * norm.len());
    for &i in indices {
        let s = &ds.samples[i];
        let raw = match target {
            ImageTarget::Actuation => s.actuation.to_array().to_vec(),
            ImageTarget::Pose => s.pose.to_array().to_vec(),
        };
        targets.extend(norm.normalize(&raw).map_err(|e| ExperimentError::Format(e.to_string()))?);
    }
    Ok(Samples::new(vec![3, intr.height, intr.width], inputs, norm.len(), targets)?)
}

/// Normalized pose to normalized actuation pairs.
pub fn pose_samples(ds: &Dataset, indices: &[usize]) -> Result<Samples, ExperimentError> {
    let mut inputs = Vec::with_capacity(indices.len() * 7);
    let mut targets = Vec::with_capacity(indices.len() * 5);
    let fmt = |e: crate::norm::NormError| ExperimentError::Format(e.to_string());
    for &i in indices {
        let s = &ds.samples[i];
        inputs.extend(ds.norm.pose.normalize(&s.pose.to_array()).map_err(fmt)?);
        targets.extend(ds.norm.actuation.normalize(&s.actuation.to_array()).map_err(fmt)?);
    }
    Ok(Samples::new(vec![7], inputs, 5, targets)?)
}

/// A trained model and its loss history.
#[derive(Debug, Clone)]
pub struct Trained {
    pub model: Model,
    pub report: TrainReport,
}

/// Per-split data for one network.
struct Splits {
    train: Samples,
    validation: Samples,
    test: Samples,
}

struct Fit<'a> {
    name: &'a str,
    net: Network,
    init_seed: u64,
    config: TrainConfig,
    input_norm: Option<ChannelNorm>,
    output_norm: Option<ChannelNorm>,
}

fn fit(f: Fit, data: &Splits, log: Log) -> Result<Trained, ExperimentError> {
    let Fit {
        name,
        mut net,
        init_seed,
        config,
        input_norm,
        output_norm,
    } = f;
    let every = (config.epochs / 10).max(1);
    let val = (!data.validation.is_empty()).then_some(&data.validation);
    let mut report = train(&mut net, &data.train, val, &config, |e, t, v| {
        if e % every == 0 || e == config.epochs {
            log(&format!("{name} epoch {e}/{} train {t:.5} val {v:.5}", config.epochs));
        }
    })
    .map_err(|source| ExperimentError::Training {
        network: name.to_string(),
        source,
    })?;
    if !data.test.is_empty() {
        report.test_loss = Some(evaluate(&net, &data.test, config.batch_size)?);
    }
    Ok(Trained {
        model: Model {
            net,
            input_norm,
            output_norm,
            init_seed,
            train: Some(config),
        },
        report,
    })
}

fn image_splits(ds: &Dataset, target: ImageTarget, norm: &ChannelNorm) -> Result<Splits, ExperimentError> {
    Ok(Splits {
        train: image_samples(ds, &ds.split.train, target, norm)?,
        validation: image_samples(ds, &ds.split.validation, target, norm)?,
        test: image_samples(ds, &ds.split.test, target, norm)?,
    })
}

fn image_shape(ds: &Dataset) -> [usize; 3] {
    let intr = ds.manifest.config.intrinsics;
    [3, intr.height, intr.width]
}

fn new_net(spec: NetSpec, seed: u64) -> Result<Network, ExperimentError> {
    Ok(Network::new(spec, seed)?)
}

/// VSNet1: image to actuation.
pub fn train_integrated(cfg: &ExperimentConfig, ds: &Dataset, log: Log) -> Result<Trained, ExperimentError> {
    let data = image_splits(ds, ImageTarget::Actuation, &ds.norm.actuation)?;
    let init_seed = cfg.init_seed(VSNET1);
    fit(
        Fit {
            name: VSNET1,
            net: new_net(vsnet1_spec(image_shape(ds), &cfg.channels), init_seed)?,
            init_seed,
            config: cfg.train_config(VSNET1),
            input_norm: None,
            output_norm: Some(ds.norm.actuation.clone()),
        },
        &data,
        log,
    )
}

/// VSNet2 (image to pose), then P2ANet (pose to actuation) trained on the
/// dataset's pose labels.
pub fn train_modular(cfg: &ExperimentConfig, ds: &Dataset, log: Log) -> Result<(Trained, Trained), ExperimentError> {
    let data = image_splits(ds, ImageTarget::Pose, &ds.norm.pose)?;
    let init_seed = cfg.init_seed(VSNET2);
    let pose = fit(
        Fit {
            name: VSNET2,
            net: new_net(vsnet2_spec(image_shape(ds), &cfg.channels), init_seed)?,
            init_seed,
            config: cfg.train_config(VSNET2),
            input_norm: None,
            output_norm: Some(ds.norm.pose.clone()),
        },
        &data,
        log,
    )?;
    drop(data);
    let data = Splits {
        train: pose_samples(ds, &ds.split.train)?,
        validation: pose_samples(ds, &ds.split.validation)?,
        test: pose_samples(ds, &ds.split.test)?,
    };
    let init_seed = cfg.init_seed(P2ANET);
    // Weight penalties belong to the image networks' dense layers; P2ANet
    // regularizes through batch norm and dropout only.
    let mut config = cfg.train_config(P2ANET);
    config.l1 = 0.0;
    config.l2 = 0.0;
    let actuation = fit(
        Fit {
            name: P2ANET,
            net: new_net(p2anet_spec(), init_seed)?,
            init_seed,
            config,
            input_norm: Some(ds.norm.pose.clone()),
            output_norm: Some(ds.norm.actuation.clone()),
        },
        &data,
        log,
    )?;
    Ok((pose, actuation))
}

/// Retrains the dense head of an image-to-actuation model on the
/// second-background set with the convolutional backbone frozen.
pub fn fine_tune(cfg: &ExperimentConfig, base: &Model, bg: &Dataset, log: Log) -> Result<Trained, ExperimentError> {
    let norm = base
        .output_norm
        .clone()
        .ok_or_else(|| ExperimentError::Format("model to fine-tune has no output normalization".into()))?;
    let data = image_splits(bg, ImageTarget::Actuation, &norm)?;
    let mut net = base.net.clone();
    net.freeze_first(net.spec().backbone_len());
    let config = TrainConfig {
        epochs: cfg.fine_tune.epochs,
        initial_lr: cfg.fine_tune.initial_lr,
        ..cfg.train_config(VSNET1_BACKGROUND)
    };
    fit(
        Fit {
            name: VSNET1_BACKGROUND,
            net,
            init_seed: base.init_seed,
            config,
            input_norm: None,
            output_norm: Some(norm),
        },
        &data,
        log,
    )
}

fn save_trained(layout: &Layout, name: &str, t: &Trained) -> Result<Vec<PathBuf>, ExperimentError> {
    fs::create_dir_all(&layout.models).map_err(ExperimentError::io(&layout.models))?;
    let ckpt = layout.checkpoint(name);
    t.model.save(&ckpt)?;
    let rep = layout.train_report(name);
    report::write_json(&rep, &t.report)?;
    Ok(vec![ckpt, rep])
}

fn open_dataset(root: &Path) -> Result<Dataset, ExperimentError> {
    if !root.join("manifest.json").exists() {
        return Err(ExperimentError::Io {
            path: root.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "no dataset here (run `softservo generate` first)"),
        });
    }
    Ok(Dataset::open(root)?)
}

/// Trains the chosen pipeline and writes checkpoints plus training reports.
/// For the integrated pipeline the second-background fine-tune runs too when
/// enabled and the background scenario is configured.
pub fn cmd_train(cfg: &ExperimentConfig, layout: &Layout, pipeline: Pipeline, force: bool, log: Log) -> Result<Vec<PathBuf>, ExperimentError> {
    let ds = open_dataset(&layout.dataset)?;
    let mut written = Vec::new();
    match pipeline {
        Pipeline::Integrated => {
            let t = train_integrated(cfg, &ds, log)?;
            written.extend(save_trained(layout, VSNET1, &t)?);
            if cfg.fine_tune.enabled && cfg.scenarios.contains(&Scenario::BackgroundChangeN5) {
                prepare_dir(&layout.background_dataset, force)?;
                if !layout.background_dataset.join("manifest.json").exists() {
                    dataset::generate(&layout.background_dataset, &background_config(cfg))?;
                }
                let bg = open_dataset(&layout.background_dataset)?;
                let ft = fine_tune(cfg, &t.model, &bg, log)?;
                written.extend(save_trained(layout, VSNET1_BACKGROUND, &ft)?);
            }
        }
        Pipeline::Modular => {
            let (pose, act) = train_modular(cfg, &ds, log)?;
            written.extend(save_trained(layout, VSNET2, &pose)?);
            written.extend(save_trained(layout, P2ANET, &act)?);
        }
    }
    Ok(written)
}

fn load_model(layout: &Layout, net: &str) -> Result<Model, ExperimentError> {
    let path = layout.checkpoint(net);
    if !path.exists() {
        return Err(ExperimentError::MissingCheckpoint(path));
    }
    Ok(Model::load(&path)?)
}

/// The predictor a scenario runs with.
pub fn load_predictor(cfg: &ExperimentConfig, layout: &Layout, scenario: Scenario) -> Result<Box<dyn Predictor>, ExperimentError> {
    if cfg.predictor == PredictorKind::Oracle || scenario == Scenario::GainSweep {
        return Ok(Box::new(OraclePredictor::exact()));
    }
    Ok(match scenario.pipeline() {
        Pipeline::Modular => Box::new(ModularPredictor {
            pose_model: load_model(layout, VSNET2)?,
            actuation_model: load_model(layout, P2ANET)?,
        }),
        Pipeline::Integrated => {
            let name = if scenario == Scenario::BackgroundChangeN5 && cfg.fine_tune.enabled {
                VSNET1_BACKGROUND
            } else {
                VSNET1
            };
            Box::new(IntegratedPredictor {
                model: load_model(layout, name)?,
            })
        }
    })
}

/// One servo run per episode.
pub fn run_episodes(
    episodes: &[(ActuationVector, ActuationVector)],
    predictor: &dyn Predictor,
    ctx: &SimContext,
    gains: &GainSchedule,
) -> Result<Vec<ServoTrace>, ExperimentError> {
    let (stop, units) = (StoppingRule::default(), MetricUnits::default());
    episodes
        .iter()
        .map(|(init, target)| {
            let t = Target::capture(*target, ctx)?;
            Ok(run_servo(*init, &t, predictor, ctx, gains, &stop, &units)?)
        })
        .collect()
}

/// Runs one scenario with `predictor` and returns the report and traces.
pub fn run_scenario(
    cfg: &ExperimentConfig,
    data: &GenerateConfig,
    scenario: Scenario,
    predictor: &dyn Predictor,
) -> Result<(ExperimentReport, Vec<ServoTrace>), ExperimentError> {
    let baseline = scenario::baseline_context(data, cfg.seed);
    let ctx = scenario::scenario_context(cfg, scenario, &baseline);
    let audit = scenario::audit(scenario, &baseline, &ctx)?;
    let episodes = scenario::episodes(cfg, scenario, &ctx, &baseline)?;
    let predictor_kind = if scenario == Scenario::GainSweep {
        PredictorKind::Oracle
    } else {
        cfg.predictor
    };
    let mut report = ExperimentReport::new(cfg, scenario, predictor_kind, ctx.clone(), audit);
    if scenario == Scenario::GainSweep {
        report.gain_sweep = Some(GainSweepResult::measure(&cfg.gain_sweep.lambdas, &episodes, predictor, &ctx, &cfg.gains)?);
        return Ok((report, Vec::new()));
    }
    let traces = run_episodes(&episodes, predictor, &ctx, &cfg.gains)?;
    let outcomes: Vec<_> = traces.iter().map(ServoTrace::outcome).collect();
    report.summary = summarize(&outcomes);
    report.traces = (0..traces.len()).map(report::trace_name).collect();
    Ok((report, traces))
}

/// Runs a scenario against the checkpoints under `layout` and writes its
/// report directory. Wall time goes to a separate `timing.json` so the
/// report itself stays reproducible. Returns the report and the files
/// written.
pub fn cmd_experiment(cfg: &ExperimentConfig, layout: &Layout, scenario: Scenario) -> Result<(ExperimentReport, Vec<PathBuf>), ExperimentError> {
    let start = std::time::Instant::now();
    let ds = open_dataset(&layout.dataset)?;
    let predictor = load_predictor(cfg, layout, scenario)?;
    let (report, traces) = run_scenario(cfg, &ds.manifest.config, scenario, predictor.as_ref())?;
    let dir = layout.scenario_dir(scenario);
    let mut written = report::write_scenario(&dir, &report, &traces)?;
    let timing = dir.join("timing.json");
    report::write_json(
        &timing,
        &Timing {
            wall_seconds: start.elapsed().as_secs_f64(),
        },
    )?;
    written.push(timing);
    Ok((report, written))
}

/// A single debugging episode: the `index`-th episode of `scenario`.
pub fn cmd_servo(cfg: &ExperimentConfig, layout: &Layout, scenario: Scenario, index: usize) -> Result<ServoTrace, ExperimentError> {
    let ds = open_dataset(&layout.dataset)?;
    let predictor = load_predictor(cfg, layout, scenario)?;
    let baseline = scenario::baseline_context(&ds.manifest.config, cfg.seed);
    let ctx = scenario::scenario_context(cfg, scenario, &baseline);
    let episodes = scenario::episodes(cfg, scenario, &ctx, &baseline)?;
    let pair = episodes.get(index).ok_or_else(|| {
        ExperimentError::Config(format!("{scenario} has {} episodes, index {index} requested", episodes.len()))
    })?;
    let mut traces = run_episodes(std::slice::from_ref(pair), predictor.as_ref(), &ctx, &cfg.gains)?;
    Ok(traces.remove(0))
}
