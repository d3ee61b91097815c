use std::process::{Command, Output};

fn mixattn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mixattn"))
        .args(args)
        .env_remove("MIXATTN_OUT_DIR")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn flops_single_model() {
    let o = mixattn(&["flops", "--model", "llama3.2-1b", "--vl", "728:64"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let rows: Vec<Vec<&str>> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').collect())
        .collect();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0][1], "vanilla");
    assert_eq!(rows[1][1], "himix-dedicated");
    let total = |r: &[&str]| r[7].parse::<f64>().unwrap();
    let ratio = total(&rows[1]) / total(&rows[0]);
    assert!((0.07..=0.12).contains(&ratio), "{ratio}");
}

#[test]
fn flops_full_grid() {
    for preset in ["grid", "paper"] {
        let o = mixattn(&["flops", "--all", "--ratios", preset]);
        assert!(o.status.success());
        assert_eq!(stdout(&o).lines().count(), 1 + 40);
    }
}

#[test]
fn flops_json_parses() {
    let o = mixattn(&[
        "flops",
        "--model",
        "Qwen2-0.5B",
        "--format",
        "json",
        "--variants",
        "himix-uniform",
    ]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let rows = v.as_array().unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0]["variant"], "himix-uniform");
    assert_eq!(rows[0]["N"], 728);
}

#[test]
fn unknown_model_lists_the_registry() {
    let o = mixattn(&["flops", "--model", "gpt-9"]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(
        err.contains("gpt-9") && err.contains("TinyLlama-1.1B"),
        "{err}"
    );
}

#[test]
fn bad_arguments_exit_one() {
    assert_eq!(
        mixattn(&["flops", "--model", "qwen2-0.5b", "--vl", "728:0"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(
        mixattn(&["equiv", "--n-vision", "250", "--n-language", "10"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(mixattn(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(mixattn(&["--help"]).status.code(), Some(0));
}

#[test]
fn output_dir_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_mixattn"))
        .args(["flops", "--model", "qwen2-0.5b"])
        .env("MIXATTN_OUT_DIR", dir.path())
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(o.stdout.is_empty());
    let text = std::fs::read_to_string(dir.path().join("flops.csv")).unwrap();
    assert_eq!(text.lines().count(), 3);

    let explicit = dir.path().join("x.csv");
    let o = mixattn(&[
        "flops",
        "--model",
        "qwen2-0.5b",
        "-o",
        explicit.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    assert!(explicit.exists());
    let missing = dir.path().join("nope/x.csv");
    assert_eq!(
        mixattn(&[
            "flops",
            "--model",
            "qwen2-0.5b",
            "-o",
            missing.to_str().unwrap()
        ])
        .status
        .code(),
        Some(1)
    );
}

#[test]
fn equiv_passes_with_positions_off() {
    for layers in ["1", "2"] {
        let o = mixattn(&["equiv", "--trials", "5", "--layers", layers]);
        assert!(o.status.success(), "{}", stdout(&o));
        assert!(stdout(&o).contains("PASS"));
    }
}

#[test]
fn equiv_positions_on_is_an_expected_failure() {
    let o = mixattn(&["equiv", "--trials", "2", "--pe", "on"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("expected failure"));
}

#[test]
fn check_grad_passes() {
    let o = mixattn(&["check-grad", "--samples", "2", "--coords", "4"]);
    assert!(o.status.success(), "{}", stdout(&o));
    let text = stdout(&o);
    assert!(
        text.contains("w_vk") && text.lines().last().unwrap().starts_with("PASS"),
        "{text}"
    );
}

#[test]
fn probe_emits_csv() {
    let o = mixattn(&["probe", "--layers", "3"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert_eq!(
        text.lines().next().unwrap(),
        "layer,modality,mean_cos,excluded_tokens"
    );
    assert_eq!(text.lines().count(), 1 + 2 * 3);
    let o = mixattn(&[
        "probe",
        "--variant",
        "himix-dedicated",
        "--layers",
        "2",
        "--reference",
        "pre-connector",
    ]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).lines().count(), 1 + 2);
}

#[test]
fn short_training_run_reports_and_saves() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("m.ckpt");
    let report = dir.path().join("r.json");
    let o = mixattn(&[
        "train",
        "--layers",
        "1",
        "--d-model",
        "16",
        "--patches",
        "4",
        "--classes",
        "3",
        "--samples",
        "64",
        "--held-out",
        "32",
        "--epochs",
        "2",
        "--min-accuracy",
        "0",
        "--save",
        ckpt.to_str().unwrap(),
        "-o",
        report.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(v["epoch_loss"].as_array().unwrap().len(), 2);
    assert!(v["vision_ablated_accuracy"].is_number());
    assert!(mixattn::decoder::load_checkpoint(&ckpt).is_ok());
}

#[test]
fn unmet_accuracy_exits_two() {
    let o = mixattn(&[
        "train",
        "--layers",
        "1",
        "--d-model",
        "8",
        "--patches",
        "4",
        "--classes",
        "3",
        "--samples",
        "16",
        "--held-out",
        "16",
        "--epochs",
        "1",
        "--min-accuracy",
        "1.01",
    ]);
    assert_eq!(o.status.code(), Some(2));
}
