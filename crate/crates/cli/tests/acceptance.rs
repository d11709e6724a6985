//! Acceptance criterion: every pipeline command produces bit-identical
//! outputs under repeated runs with fixed seeds.

use std::path::Path;

use sdfsim_cli::commands::{cmd_design, cmd_gen_data, cmd_rollout, cmd_train};
use sdfsim_cli::test_support::small_config;

fn file_bytes(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("reading {}: {e}", path.display()))
}

fn report(name: &str, pass: bool, details: &str) {
    println!("[{}] {name}: {details}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "{name}: {details}");
}

#[test]
fn criterion_pipeline_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let config = small_config();

    // gen-data twice.
    let data_a = root.join("data_a");
    let data_b = root.join("data_b");
    cmd_gen_data(&config, &data_a).unwrap();
    cmd_gen_data(&config, &data_b).unwrap();
    let mut gen_identical =
        file_bytes(&data_a.join("manifest.json")) == file_bytes(&data_b.join("manifest.json"));
    for i in 0..config.dataset.scenes.count {
        let name = format!("traj_{i:04}.ftrj");
        gen_identical &= file_bytes(&data_a.join(&name)) == file_bytes(&data_b.join(&name));
    }

    // train twice.
    let model_a = root.join("model_a");
    let model_b = root.join("model_b");
    cmd_train(&config, &data_a.join("manifest.json"), &model_a, None).unwrap();
    cmd_train(&config, &data_a.join("manifest.json"), &model_b, None).unwrap();
    let train_identical = file_bytes(&model_a.join("params.gnnp"))
        == file_bytes(&model_b.join("params.gnnp"))
        && file_bytes(&model_a.join("loss.csv")) == file_bytes(&model_b.join("loss.csv"));

    // rollout twice.
    let pred_a = root.join("pred_a.ftrj");
    let pred_b = root.join("pred_b.ftrj");
    let truth = data_a.join("traj_0000.ftrj");
    cmd_rollout(&model_a, &truth, &pred_a, Some(6), false, None).unwrap();
    cmd_rollout(&model_a, &truth, &pred_b, Some(6), false, None).unwrap();
    let rollout_identical = file_bytes(&pred_a) == file_bytes(&pred_b);

    // design twice.
    let design_a = root.join("design_a");
    let design_b = root.join("design_b");
    cmd_design(&config, &model_a, &design_a).unwrap();
    cmd_design(&config, &model_a, &design_b).unwrap();
    let design_identical = file_bytes(&design_a.join("design_log.csv"))
        == file_bytes(&design_b.join("design_log.csv"))
        && file_bytes(&design_a.join("final_design.json"))
            == file_bytes(&design_b.join("final_design.json"));

    report(
        "pipeline determinism",
        gen_identical && train_identical && rollout_identical && design_identical,
        &format!(
            "gen-data {gen_identical}, train {train_identical}, rollout {rollout_identical}, design {design_identical}"
        ),
    );
}
