use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn drs(root: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_drs"))
        .args(args)
        .env("DRS_OUTPUT_ROOT", root)
        .output()
        .unwrap()
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(format!("{name}.toml"));
    fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

const SMALL_DQN: &str = r#"
[dqn]
warmup_steps = 100
eval_every = 500
eval_episodes = 3
hidden = [16]
"#;

#[test]
fn missing_config_exits_4_and_names_the_path() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nope.toml");
    let out = drs(tmp.path(), &["learn-reward", missing.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains(missing.to_str().unwrap()));
}

#[test]
fn typo_in_config_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "typo",
        "name = \"t\"\nphase = \"reuse_reward\"\nenv = \"nav-test\"\nseeds = [0]\ntotal_steps = 0\nreward = \"sparse\"\nalpah = 0.3\n",
    );
    let out = drs(tmp.path(), &["reuse-reward", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    assert!(fs::read_dir(tmp.path()).unwrap().count() == 1, "nothing but the config is written");
}

#[test]
fn learned_reward_flows_into_reuse_and_mismatch_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let learn = write_config(
        tmp.path(),
        "learn",
        &format!(
            "name = \"kd\"\nphase = \"learn_reward\"\nenv = \"keydoor-train\"\nseeds = [4]\ntotal_steps = 600\nreward = \"drs\"\ndemos = 5\n{SMALL_DQN}"
        ),
    );
    let out = drs(tmp.path(), &["learn-reward", &learn]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = tmp.path().join("kd-seed4");
    for f in ["manifest.toml", "curve.csv", "reward_bank.drsw", "policy.drsw"] {
        assert!(run.join(f).exists(), "{f}");
    }
    let ckpt = tmp.path().join("kd-seed{seed}").join("reward_bank.drsw");
    let reuse_body = |env: &str| {
        format!(
            "name = \"r\"\nphase = \"reuse_reward\"\nenv = \"{env}\"\nseeds = [4]\ntotal_steps = 300\nreward = \"drs\"\nreward_checkpoint = \"{}\"\n{SMALL_DQN}",
            ckpt.display()
        )
    };
    let ok = write_config(tmp.path(), "reuse", &reuse_body("keydoor-test"));
    let out = drs(tmp.path(), &["reuse-reward", &ok]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let mismatch = write_config(tmp.path(), "mismatch", &reuse_body("nav-test"));
    let out = drs(tmp.path(), &["reuse-reward", &mismatch]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn identical_configs_give_identical_curves_and_manifest_reruns() {
    let tmp = tempfile::tempdir().unwrap();
    let body = format!(
        "name = \"nav\"\nphase = \"learn_reward\"\nenv = \"nav-train\"\nseeds = [7]\ntotal_steps = 1500\nreward = \"drs\"\ndemos = 10\n{SMALL_DQN}"
    );
    let cfg = write_config(tmp.path(), "nav", &body);
    let (a, b, c) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c"));
    assert!(drs(&a, &["learn-reward", &cfg]).status.success());
    assert!(drs(&b, &["learn-reward", &cfg]).status.success());
    let curve_a = fs::read(a.join("nav-seed7/curve.csv")).unwrap();
    assert_eq!(curve_a, fs::read(b.join("nav-seed7/curve.csv")).unwrap());
    assert_eq!(
        fs::read(a.join("nav-seed7/reward_bank.drsw")).unwrap(),
        fs::read(b.join("nav-seed7/reward_bank.drsw")).unwrap()
    );

    let manifest = a.join("nav-seed7/manifest.toml");
    assert!(drs(&c, &["learn-reward", manifest.to_str().unwrap()]).status.success());
    assert_eq!(curve_a, fs::read(c.join("nav-seed7/curve.csv")).unwrap());
}

#[test]
fn heatmap_and_eval_from_checkpoints() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "nav",
        &format!(
            "name = \"h\"\nphase = \"learn_reward\"\nenv = \"nav-train\"\nseeds = [1]\ntotal_steps = 0\nreward = \"drs\"\ndemos = 3\n{SMALL_DQN}"
        ),
    );
    assert!(drs(tmp.path(), &["learn-reward", &cfg]).status.success());
    let run = tmp.path().join("h-seed1");
    let heat = tmp.path().join("heat.csv");
    let out = drs(
        tmp.path(),
        &[
            "export-heatmap",
            run.join("reward_bank.drsw").to_str().unwrap(),
            "nav-test",
            heat.to_str().unwrap(),
            "--goal",
            "3,13",
        ],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(&heat).unwrap();
    let free = drs_core::harness::parse_map("nav-test").unwrap().free_cells().len();
    assert_eq!(text.lines().count(), free + 1);
    assert!(text.lines().skip(1).all(|l| l.ends_with(",3,13")));

    let out = drs(tmp.path(), &["eval", run.join("policy.drsw").to_str().unwrap(), "nav-test", "4"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("success_rate "));
    let out = drs(tmp.path(), &["eval", run.join("policy.drsw").to_str().unwrap(), "nav-test", "0"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn tabular_verify_and_demos() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "tab",
        "name = \"tab\"\nphase = \"tabular_verify\"\nenv = \"empty-8x8\"\nseeds = [0]\ntotal_steps = 0\nreward = \"sparse\"\n",
    );
    let out = drs(tmp.path(), &["tabular-verify", &cfg]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = fs::read_to_string(tmp.path().join("tab-seed0/tabular_report.txt")).unwrap();
    assert!(report.starts_with("holds = true"));

    let cfg = write_config(
        tmp.path(),
        "demos",
        "name = \"d\"\nphase = \"gen_demos\"\nenv = \"keydoor-train\"\nseeds = [0, 1]\ntotal_steps = 0\nreward = \"semi-sparse\"\ndemos = 4\n",
    );
    let out = drs(tmp.path(), &["gen-demos", &cfg, "--processes"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for seed in [0, 1] {
        let csv = fs::read_to_string(tmp.path().join(format!("d-seed{seed}/demos.csv"))).unwrap();
        let last = csv.lines().last().unwrap();
        assert!(last.split(',').nth(4) == Some("true"), "{last}");
    }
}

#[test]
fn phase_must_match_subcommand() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "p",
        "name = \"p\"\nphase = \"gen_demos\"\nenv = \"nav-train\"\nseeds = [0]\ntotal_steps = 0\nreward = \"sparse\"\n",
    );
    assert_eq!(drs(tmp.path(), &["learn-reward", &cfg]).status.code(), Some(2));
}
