use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SYNTH: &str = r#"
[data]
source_classes = [0, 1]
target_classes = [2, 3]

[data.corpus]
kind = "synth_blobs"
classes = 4
per_class = 60
image_size = 12
seed = 3

[pretrain]
epochs = 2
batch_size = 10
lr = 0.05

[adopt]
init = { mode = "zero" }

[finetune]
mode = "fast"
alpha = 0.1
beta = 0.01
batch_size = 4
max_steps = 21
seeds = [1, 2, 3]

[output]
dir = "runs"
"#;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fast-transfer"))
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("fast-transfer-cli-{}-{name}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn run(cmd: &mut Command) -> Output {
    let out = cmd.output().unwrap();
    assert!(
        out.status.success(),
        "stdout:\n{}\nstderr:\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn read(p: &Path) -> String {
    fs::read_to_string(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

#[test]
fn finetune_writes_one_deterministic_directory_per_seed() {
    let dir = scratch("finetune");
    let cfg = dir.join("synth.toml");
    fs::write(&cfg, SYNTH).unwrap();
    run(bin().arg("finetune").arg("--config").arg(&cfg).args(["--jobs", "2"]));
    for seed in 1..=3 {
        let run_dir = dir.join(format!("runs/seed-{seed}"));
        for f in ["metrics.csv", "adp.csv", "metadata.json", "best.json"] {
            assert!(run_dir.join(f).is_file(), "{f} missing for seed {seed}");
        }
        assert_eq!(read(&run_dir.join("config.toml")), SYNTH);
        assert!(read(&run_dir.join("adp.csv")).starts_with("step,target_top1,target_top5,source_top1,best_val_step,w_fro,theta_dist\n"));
    }
    assert!(dir.join("runs/pretrained.json").is_file());

    let again = dir.join("again");
    run(bin().arg("finetune").arg("--config").arg(&cfg).arg("--out").arg(&again).args(["--seeds", "2", "--jobs", "1"]));
    for f in ["metrics.csv", "adp.csv"] {
        assert_eq!(read(&dir.join("runs/seed-2").join(f)), read(&again.join("seed-2").join(f)), "{f} differs");
    }
    assert!(!again.join("seed-1").exists());

    let report = dir.join("report");
    run(bin().arg("report").arg(dir.join("runs")).arg(&again).arg("--out").arg(&report));
    let svg = read(&report.join("adp.svg"));
    assert_eq!(svg.matches("<polyline").count(), 4, "two methods on target and source panels");
    assert!(read(&report.join("aggregate-runs.csv")).lines().nth(1).unwrap().starts_with("1,3,"));
    assert!(read(&report.join("convergence.csv")).contains("std_undefined"));
}

#[test]
fn pretrain_then_finetune_reuses_the_named_checkpoint() {
    let dir = scratch("pretrain");
    let cfg = dir.join("synth.toml");
    let text = SYNTH.replace("dir = \"runs\"", "dir = \"runs\"\ncheckpoint = \"source.json\"");
    fs::write(&cfg, &text).unwrap();
    let missing = bin().arg("finetune").arg("--config").arg(&cfg).output().unwrap();
    assert!(!missing.status.success());
    assert!(String::from_utf8_lossy(&missing.stderr).contains("does not exist"));

    run(bin().arg("pretrain").arg("--config").arg(&cfg));
    let ckpt = read(&dir.join("source.json"));
    let out = run(bin().arg("finetune").arg("--config").arg(&cfg).args(["--seeds", "5"]));
    assert!(String::from_utf8_lossy(&out.stdout).contains("using checkpoint"));
    assert_eq!(read(&dir.join("source.json")), ckpt);
    assert!(dir.join("runs/seed-5/adp.csv").is_file());
}

#[test]
fn bad_configs_fail_with_a_located_diagnostic() {
    let dir = scratch("bad");
    let cfg = dir.join("bad.toml");
    fs::write(&cfg, SYNTH.replace("max_steps = 21", "max_steps = 21\nlearning_rate = 1")).unwrap();
    let out = bin().arg("finetune").arg("--config").arg(&cfg).output().unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("learning_rate") && err.contains("line"), "{err}");

    fs::write(&cfg, SYNTH.replace("seeds = [1, 2, 3]", "seeds = []")).unwrap();
    let out = bin().arg("finetune").arg("--config").arg(&cfg).output().unwrap();
    assert!(!out.status.success());

    let out = bin().args(["report", "--out"]).arg(dir.join("r")).arg(dir.join("nothing")).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn verify_passes_on_a_fresh_checkout() {
    let out = run(bin().arg("verify"));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(!text.contains("[FAIL]"), "{text}");
    for id in 1..=7 {
        assert!(text.contains(&format!("criterion {id:>2} [PASS]")), "{text}");
    }
}
