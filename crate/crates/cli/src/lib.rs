//! Command-line pipelines over the simulation toolkit: dataset generation,
//! training, rollout, evaluation, inverse design, and SDF property checks.
//!
//! Every command is deterministic given its config file; no wall-clock or
//! unseeded randomness reaches any output.

pub mod commands;
pub mod config;
pub mod manifest;

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

use sdfsim_core::graph_net::Variant;

#[derive(Debug)]
pub enum CliError {
    /// Bad configuration or arguments (exit code 2).
    Config(String),
    /// Numeric divergence during simulation/training/design (exit code 3).
    Numeric(String),
    /// Filesystem or format errors (exit code 4).
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::Io(_) => 4,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Numeric(m) => write!(f, "numeric error: {m}"),
            CliError::Io(m) => write!(f, "io error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum VariantArg {
    Sdf,
    Particles,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Variant {
        match v {
            VariantArg::Sdf => Variant::SdfFeatures,
            VariantArg::Particles => Variant::BoundaryParticles,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Toggle {
    On,
    Off,
}

impl Toggle {
    fn is_on(self) -> bool {
        self == Toggle::On
    }
}

#[derive(Parser, Debug)]
#[command(name = "sdfsim", about = "Particle fluid simulation with implicit surfaces")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Rayon worker threads (default: all cores). Thread count never
    /// changes numeric results.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate oracle trajectories and a dataset manifest.
    GenData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Override the dataset master seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train the simulator on a generated dataset.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Resume from a checkpoint directory.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Override the training seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the model variant from the config.
        #[arg(long)]
        variant: Option<VariantArg>,
    },
    /// Roll the model out against one oracle trajectory.
    Rollout {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
        /// Post-step surface projection of penetrating particles.
        #[arg(long, default_value = "off")]
        projection: Toggle,
        /// Require the checkpoint to use this variant.
        #[arg(long)]
        variant: Option<VariantArg>,
    },
    /// Evaluate rollouts over a test manifest and emit metric reports.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Near-surface threshold; defaults to the config evaluation alpha.
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long, default_value = "off")]
        projection: Toggle,
        #[arg(long)]
        variant: Option<VariantArg>,
    },
    /// Optimize the funnel design through model rollouts.
    Design {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Override the design scene seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run SDF property suites on a shape document or baked grid.
    SdfCheck {
        #[arg(long)]
        sdf: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
    },
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        // A failure here means a pool already exists (tests); thread count
        // never affects results, so it is safe to continue.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match cli.command {
        Command::GenData { config, out, seed } => {
            let mut cfg = config::ExperimentConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.dataset.scenes.master_seed = s;
            }
            commands::cmd_gen_data(&cfg, &out)?;
            Ok(())
        }
        Command::Train {
            config,
            manifest,
            out,
            resume,
            seed,
            variant,
        } => {
            let mut cfg = config::ExperimentConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.training.train.seed = s;
            }
            if let Some(v) = variant {
                cfg.model.variant = v.into();
                match cfg.model.variant {
                    Variant::SdfFeatures => cfg.model.boundary_particle_count = 0,
                    Variant::BoundaryParticles => {
                        if cfg.model.boundary_particle_count == 0 {
                            cfg.model.boundary_particle_count = 500;
                        }
                    }
                }
            }
            commands::cmd_train(&cfg, &manifest, &out, resume.as_deref())?;
            Ok(())
        }
        Command::Rollout {
            checkpoint,
            truth,
            out,
            steps,
            projection,
            variant,
        } => {
            commands::cmd_rollout(
                &checkpoint,
                &truth,
                &out,
                steps,
                projection.is_on(),
                variant.map(Into::into),
            )?;
            Ok(())
        }
        Command::Eval {
            checkpoint,
            manifest,
            out,
            alpha,
            config,
            steps,
            projection,
            variant,
        } => {
            let alpha = match (alpha, config) {
                (Some(a), _) => a,
                (None, Some(path)) => config::ExperimentConfig::load(&path)?.evaluation.alpha,
                (None, None) => {
                    return Err(CliError::Config(
                        "eval needs --alpha or --config to supply the threshold".into(),
                    ))
                }
            };
            commands::cmd_eval(
                &checkpoint,
                &manifest,
                &out,
                alpha,
                steps,
                projection.is_on(),
                variant.map(Into::into),
            )?;
            Ok(())
        }
        Command::Design {
            config,
            checkpoint,
            out,
            seed,
        } => {
            let mut cfg = config::ExperimentConfig::load(&config)?;
            if let Some(s) = seed {
                if let Some(d) = cfg.design.as_mut() {
                    d.scene.seed = s;
                }
            }
            commands::cmd_design(&cfg, &checkpoint, &out)?;
            Ok(())
        }
        Command::SdfCheck { sdf, out, samples } => {
            commands::cmd_sdf_check(&sdf, out.as_deref(), samples)?;
            Ok(())
        }
    }
}

/// Small, fast configurations for tests.
#[doc(hidden)]
pub mod test_support {
    use glam::DVec3;
    use sdfsim_core::design::{DesignScene, DesignTask};
    use sdfsim_core::geom::Aabb;
    use sdfsim_core::graph_net::{ModelConfig, Variant};
    use sdfsim_core::reference_sim::{DatasetConfig, ShapeKind, SizeRange, SphConfig};
    use sdfsim_core::training::TrainConfig;

    use crate::config::{
        DatasetSection, DesignSection, EvalSection, ExperimentConfig, TrainingSection,
    };

    pub fn small_config() -> ExperimentConfig {
        let spacing = 0.06;
        let scenes = DatasetConfig {
            master_seed: 11,
            count: 2,
            container: Aabb::new(DVec3::new(-0.5, -0.5, 0.0), DVec3::new(0.5, 0.5, 2.0)),
            particle_spacing: spacing,
            shapes: vec![ShapeKind::Sphere, ShapeKind::Box],
            object_size: SizeRange { min: 0.1, max: 0.16 },
            fluid_block_extent: DVec3::new(0.24, 0.24, 0.2),
            drop_height: 0.55,
            max_retries: 16,
        };
        let test_scenes = DatasetConfig {
            master_seed: 1213,
            count: 1,
            ..scenes.clone()
        };
        let design_scene = DesignScene {
            fluid_block: Aabb::new(
                DVec3::new(-0.07, -0.07, 0.78),
                DVec3::new(0.07, 0.07, 0.88),
            ),
            particle_spacing: 0.045,
            ..DesignScene::desk_default()
        };
        let mut task = DesignTask::bowl(&design_scene);
        task.rollout_steps = 3;
        task.optimizer_steps = 2;
        ExperimentConfig {
            version: 1,
            dataset: DatasetSection {
                scenes,
                oracle: SphConfig::for_spacing(spacing),
                n_frames: 60,
                substeps: 5,
            },
            model: ModelConfig {
                hidden_dim: 16,
                num_blocks: 2,
                ..ModelConfig::desk_default(1.5 * spacing, Variant::SdfFeatures)
            },
            training: TrainingSection {
                train: TrainConfig {
                    total_steps: 20,
                    batch_size: 1,
                    ..TrainConfig::desk_default(2.0 * spacing)
                },
                checkpoint_every: 10,
            },
            evaluation: EvalSection {
                test_scenes,
                alpha: 2.0 * spacing,
                max_steps: Some(8),
            },
            design: Some(DesignSection {
                scene: design_scene,
                task,
                initial_opening: 0.24,
                initial_throat: 0.09,
            }),
        }
    }
}
