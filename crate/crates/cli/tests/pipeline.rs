//! End-to-end exercises of every CLI verb on a small, fast configuration.

use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use clap::Parser;

use sdfsim_cli::commands::{cmd_design, cmd_eval, cmd_gen_data, cmd_rollout, cmd_sdf_check, cmd_train};
use sdfsim_cli::config::ExperimentConfig;
use sdfsim_cli::manifest::DatasetManifest;
use sdfsim_cli::test_support::small_config;
use sdfsim_cli::{Cli, CliError};
use sdfsim_core::graph_net::{ModelParams, Variant};
use sdfsim_core::metrics::evaluate;
use sdfsim_core::reference_sim::read_trajectory;
use sdfsim_core::sdf::{bake_grid, SdfNode};

struct Fixture {
    #[allow(dead_code)]
    dir: tempfile::TempDir,
    root: PathBuf,
    config: ExperimentConfig,
    config_path: PathBuf,
    data_dir: PathBuf,
    checkpoint: PathBuf,
}

fn fixture() -> &'static Fixture {
    static FIXTURE: OnceLock<Fixture> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let dir = tempfile::tempdir().expect("tempdir");
        let root = dir.path().to_path_buf();
        let config = small_config();
        let config_path = root.join("config.json");
        std::fs::write(&config_path, serde_json::to_string_pretty(&config).unwrap()).unwrap();
        let data_dir = root.join("data");
        cmd_gen_data(&config, &data_dir).expect("gen-data");
        let checkpoint = root.join("model");
        cmd_train(&config, &data_dir.join("manifest.json"), &checkpoint, None).expect("train");
        Fixture {
            dir,
            root,
            config,
            config_path,
            data_dir,
            checkpoint,
        }
    })
}

fn file_bytes(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("reading {}: {e}", path.display()))
}

#[test]
fn gen_data_writes_files_and_manifest() {
    let fx = fixture();
    let manifest = DatasetManifest::load(&fx.data_dir.join("manifest.json")).unwrap();
    assert_eq!(manifest.entries.len(), 2);
    for entry in manifest.ok_entries() {
        assert!(fx.data_dir.join(&entry.file).exists());
        assert!(entry.scene.is_some());
        assert!(entry.n_particles > 0);
    }
    // Manifest scene specs round-trip through serialization.
    let text = serde_json::to_string(&manifest).unwrap();
    let back: DatasetManifest = serde_json::from_str(&text).unwrap();
    for (a, b) in manifest.entries.iter().zip(&back.entries) {
        assert_eq!(a.scene, b.scene);
    }
}

#[test]
fn gen_data_rerun_is_bit_identical() {
    let fx = fixture();
    let again = fx.root.join("data_again");
    cmd_gen_data(&fx.config, &again).unwrap();
    let manifest = DatasetManifest::load(&again.join("manifest.json")).unwrap();
    for entry in manifest.ok_entries() {
        assert_eq!(
            file_bytes(&fx.data_dir.join(&entry.file)),
            file_bytes(&again.join(&entry.file)),
            "trajectory {} differs between runs",
            entry.index
        );
    }
    assert_eq!(
        file_bytes(&fx.data_dir.join("manifest.json")),
        file_bytes(&again.join("manifest.json"))
    );
}

#[test]
fn train_smoke_and_resume_reproduce_bit_for_bit() {
    let fx = fixture();
    // The fixture trained 20 steps with a checkpoint at step 10; resuming
    // from it must land exactly where the uninterrupted run did.
    let half_dir = fx.checkpoint.join("checkpoints/step_000010");
    assert!(half_dir.join("params.gnnp").exists());

    let resumed_dir = fx.root.join("model_resumed");
    cmd_train(
        &fx.config,
        &fx.data_dir.join("manifest.json"),
        &resumed_dir,
        Some(&half_dir),
    )
    .unwrap();
    assert_eq!(
        file_bytes(&fx.checkpoint.join("params.gnnp")),
        file_bytes(&resumed_dir.join("params.gnnp")),
        "resumed run must match the uninterrupted run bit for bit"
    );

    let curve = std::fs::read_to_string(fx.checkpoint.join("loss.csv")).unwrap();
    assert!(curve.starts_with("step,loss,near_surface_loss\n"));
    assert_eq!(curve.lines().count(), 1 + fx.config.training.train.total_steps);
}

#[test]
fn train_rejects_mismatched_checkpoint_config() {
    let fx = fixture();
    let mut other = fx.config.clone();
    other.model.hidden_dim *= 2;
    let err = cmd_train(
        &other,
        &fx.data_dir.join("manifest.json"),
        &fx.root.join("model_bad"),
        Some(&fx.checkpoint),
    )
    .unwrap_err();
    assert!(matches!(err, CliError::Config(_)));
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn train_rejects_foreign_manifest() {
    let fx = fixture();
    let mut other = fx.config.clone();
    other.dataset.scenes.master_seed += 99;
    let err = cmd_train(
        &other,
        &fx.data_dir.join("manifest.json"),
        &fx.root.join("model_bad2"),
        None,
    )
    .unwrap_err();
    assert!(matches!(err, CliError::Config(_)));
}

#[test]
fn variant_flag_switches_graph_construction() {
    let fx = fixture();
    let out = fx.root.join("model_particles");
    let cli = Cli::try_parse_from([
        "sdfsim",
        "train",
        "--config",
        fx.config_path.to_str().unwrap(),
        "--manifest",
        fx.data_dir.join("manifest.json").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--variant",
        "particles",
    ])
    .unwrap();
    sdfsim_cli::run(cli).unwrap();
    let mut f = std::fs::File::open(out.join("params.gnnp")).unwrap();
    let params = ModelParams::read_from(&mut f).unwrap();
    assert_eq!(params.config.variant, Variant::BoundaryParticles);
    assert!(params.config.boundary_particle_count > 0);
    // And the eval-side variant guard rejects the wrong expectation.
    let err = cmd_rollout(
        &out,
        &fx.data_dir.join("traj_0000.ftrj"),
        &fx.root.join("never.ftrj"),
        Some(2),
        false,
        Some(Variant::SdfFeatures),
    )
    .unwrap_err();
    assert!(matches!(err, CliError::Config(_)));
}

#[test]
fn rollout_writes_a_readable_trajectory() {
    let fx = fixture();
    let out = fx.root.join("pred.ftrj");
    let pred = cmd_rollout(
        &fx.checkpoint,
        &fx.data_dir.join("traj_0000.ftrj"),
        &out,
        Some(5),
        false,
        Some(Variant::SdfFeatures),
    )
    .unwrap();
    let window = fx.config.model.history_len + 1;
    assert_eq!(pred.frames.len(), window + 5);
    let reread = read_trajectory(&mut std::fs::File::open(&out).unwrap()).unwrap();
    assert_eq!(reread.frames.len(), pred.frames.len());
}

#[test]
fn eval_emits_exact_csv_columns_and_zero_for_identical_trajectories() {
    let fx = fixture();
    // A real model eval produces the pinned CSV header and parseable rows.
    let test_dir = fx.root.join("testset");
    let mut test_cfg = fx.config.clone();
    test_cfg.dataset.scenes = fx.config.evaluation.test_scenes.clone();
    cmd_gen_data(&test_cfg, &test_dir).unwrap();
    let outcome = cmd_eval(
        &fx.checkpoint,
        &test_dir.join("manifest.json"),
        &fx.root.join("eval_out"),
        fx.config.evaluation.alpha,
        fx.config.evaluation.max_steps,
        false,
        None,
    )
    .unwrap();
    let mut lines = outcome.csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "scene_id,chamfer,chamfer_surface,number_inside,mean_sdf_inside"
    );
    let row = lines.next().unwrap();
    assert_eq!(row.split(',').count(), 5);

    // An oracle trajectory scored against itself is exactly zero.
    let truth = read_trajectory(
        &mut std::fs::File::open(test_dir.join("traj_0000.ftrj")).unwrap(),
    )
    .unwrap();
    let report = evaluate(
        &truth,
        &truth,
        &truth.scene.scene_node(),
        fx.config.evaluation.alpha,
    )
    .unwrap();
    assert_eq!(report.chamfer, 0.0);
    assert_eq!(report.chamfer_surface, 0.0);
}

#[test]
fn design_zero_lr_and_log_shape() {
    let fx = fixture();
    let mut cfg = fx.config.clone();
    {
        let section = cfg.design.as_mut().unwrap();
        section.task.learning_rate = 0.0;
        section.task.optimizer_steps = 2;
        section.task.rollout_steps = 2;
    }
    let out = fx.root.join("design_out");
    let state = cmd_design(&cfg, &fx.checkpoint, &out).unwrap();
    let section = cfg.design.as_ref().unwrap();
    assert_eq!(state.opening_radius, section.initial_opening);
    assert_eq!(state.throat_radius, section.initial_throat);

    let log = std::fs::read_to_string(out.join("design_log.csv")).unwrap();
    assert!(log.starts_with("step,opening_radius,throat_radius,reward\n"));
    assert_eq!(log.lines().count(), 1 + 2);

    let doc = std::fs::read_to_string(out.join("final_design.json")).unwrap();
    let node = SdfNode::from_document(&doc).unwrap();
    assert!(matches!(node, SdfNode::Transformed { .. }));
}

#[test]
fn sdf_check_passes_primitives_and_flags_corrupted_grids() {
    let fx = fixture();
    let sphere_path = fx.root.join("sphere.json");
    std::fs::write(&sphere_path, SdfNode::sphere(0.7).to_document()).unwrap();
    let report = cmd_sdf_check(&sphere_path, None, 2_000).unwrap();
    assert!(report.passed, "sphere must pass: {:?}", report.checks);

    // Bake a sphere, corrupt a band of samples, and expect located
    // violations.
    let mut grid = bake_grid(
        &SdfNode::sphere(0.7),
        glam::DVec3::splat(-1.0),
        2.0 / 24.0,
        [25, 25, 25],
    )
    .unwrap();
    for v in grid.values.iter_mut().skip(3_000).take(600) {
        *v += 0.35;
    }
    let grid_path = fx.root.join("corrupt.gsdf");
    grid.write_to(&mut std::fs::File::create(&grid_path).unwrap()).unwrap();
    let report_path = fx.root.join("grid_report.json");
    let report = cmd_sdf_check(&grid_path, Some(&report_path), 2_000).unwrap();
    assert!(!report.passed);
    let text = std::fs::read_to_string(&report_path).unwrap();
    let parsed: serde_json::Value = serde_json::from_str(&text).unwrap();
    let any_examples = parsed["checks"]
        .as_array()
        .unwrap()
        .iter()
        .any(|c| !c["violation_examples"].as_array().unwrap().is_empty());
    assert!(any_examples, "violations must carry example points");
}

#[test]
fn config_rejects_unknown_keys_and_bad_version() {
    let fx = fixture();
    let mut v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&fx.config_path).unwrap()).unwrap();
    v["training"]["mystery"] = serde_json::json!(true);
    let bad = fx.root.join("bad_config.json");
    std::fs::write(&bad, serde_json::to_string(&v).unwrap()).unwrap();
    let err = ExperimentConfig::load(&bad).unwrap_err();
    assert!(matches!(err, CliError::Config(_)));
    assert_eq!(err.exit_code(), 2);

    let mut v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&fx.config_path).unwrap()).unwrap();
    v["version"] = serde_json::json!(99);
    std::fs::write(&bad, serde_json::to_string(&v).unwrap()).unwrap();
    assert!(matches!(
        ExperimentConfig::load(&bad).unwrap_err(),
        CliError::Config(_)
    ));
}
