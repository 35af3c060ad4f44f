//! Helpers shared by the integration suites: a small three-omics synthetic
//! spec, a fast run configuration, and CLI invocation plumbing.

#![allow(dead_code)]

use std::path::Path;

pub fn balmo_bin() -> &'static str {
    env!("CARGO_BIN_EXE_balmo")
}

pub fn run_cli(args: &[&str]) -> std::process::Output {
    std::process::Command::new(balmo_bin())
        .args(args)
        .output()
        .expect("balmo binary runs")
}

/// 60-sample, 4-class, three-modality spec: strong / weak / low-information.
pub fn tiny_spec_toml() -> &'static str {
    r#"
class_counts = [18, 12, 18, 12]
class_names = ["c0", "c1", "c2", "c3"]
latent_dim = 6
seed = 7

[[modalities]]
name = "rppa"
feature_dim = 12
snr = 1.4
class_margin = 1.0
shared_coeff = 0.7

[[modalities]]
name = "mrna"
feature_dim = 12
snr = 0.8
class_margin = 0.5
shared_coeff = 0.6

[[modalities]]
name = "cnv"
feature_dim = 10
snr = 0.2
class_margin = 0.05
shared_coeff = 0.05
"#
}

pub fn tiny_config_toml(spec_path: &Path) -> String {
    format!(
        r#"
seed = 21

[dataset]
kind = "synthetic"
spec = "{spec}"

[reduction]
method = "pca"
target_dim = 100

[snf]
mu = 0.5
k_neighbors = 6
iterations = 8
convergence_tol = 1e-6

[adjacency]
avg_edges_per_node = 4.0

[encoder]
hidden_dims = [8]
representation_dim = 8

[train]
epochs = 15
learning_rate = 0.05
momentum = 0.9

[distill]
alpha1 = 1.0
alpha2 = 0.5
alpha3 = 0.5
epochs = 15
learning_rate = 0.05
momentum = 0.9
temperature = 1.0

[balance_train]
epochs = 12
learning_rate = 0.05
momentum = 0.9

[balance]
alpha = 0.25
beta = 0.1
gamma = 1.5
reweight_interval = 3

[baseline]
repeats = 2
epochs = 60
learning_rate = 0.5
l2 = 0.0001

[split]
train = 0.6
val = 0.2
test = 0.2
"#,
        spec = spec_path.display()
    )
}

/// Runs the whole stage chain into `out`, asserting each command succeeds.
pub fn full_chain(config: &Path, out: &Path) {
    let out_s = out.to_str().unwrap();
    let cfg_s = config.to_str().unwrap();
    for args in [
        vec!["fuse", "--config", cfg_s, "--out", out_s],
        vec![
            "train-unimodal",
            "--modality",
            "all",
            "--edges",
            "fused",
            "--config",
            cfg_s,
            "--out",
            out_s,
        ],
        vec!["distill", "--config", cfg_s, "--out", out_s],
        vec!["train-balanced", "--config", cfg_s, "--out", out_s],
        vec!["baseline", "--config", cfg_s, "--out", out_s],
    ] {
        let output = run_cli(&args);
        assert!(
            output.status.success(),
            "{:?} failed: {}",
            args,
            String::from_utf8_lossy(&output.stderr)
        );
    }
    let ckpt = out.join("balance.ckpt.json");
    let output = run_cli(&[
        "evaluate",
        ckpt.to_str().unwrap(),
        "--config",
        cfg_s,
        "--out",
        out_s,
    ]);
    assert!(
        output.status.success(),
        "evaluate failed: {}",
        String::from_utf8_lossy(&output.stderr)
    );
}

/// Parses a `key = value` report into pairs.
pub fn parse_kv(text: &str) -> Vec<(String, String)> {
    text.lines()
        .filter_map(|line| {
            line.split_once(" = ")
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        })
        .collect()
}

pub fn kv_value(pairs: &[(String, String)], key: &str) -> Option<String> {
    pairs.iter().find(|(k, _)| k == key).map(|(_, v)| v.clone())
}
