use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const MINIMAL: &str = r#"
output_dir = "unused"

[scenario]
generator = "gym"
n_experiences = 1
order = { explicit = [0] }

[[scenario.envs]]
name = "open5"
env = { type = "gridworld", map = "S....\n.....\n.....\n.....\n....G" }

[strategy]
name = "dqn"
hidden = [16]

[budget]
updates_per_experience = 10
rollout = { steps = 1 }

[seeds]
env = 3
net = 4
sampling = 5
"#;

const TWO_TASKS: &str = r#"
[scenario]
generator = "gym"
n_experiences = 2
order = { explicit = [0, 1] }

[[scenario.envs]]
name = "a"
env = { type = "gridworld", map = "S..G.\n.....\n.....\n.....\n....." }

[[scenario.envs]]
name = "b"
env = { type = "gridworld", map = ".....\n.....\n.....\n.....\nG...S" }

[strategy]
name = "double_dqn"
hidden = [16]

[[plugins]]
name = "ewc"
fisher_samples = 32

[[plugins]]
name = "replay"
capacity = 500

[budget]
updates_per_experience = 200
rollout = { steps = 1 }

[seeds]
env = 1
net = 2
sampling = 3

[eval]
n_episodes = 5
"#;

struct Case {
    dir: TempDir,
}

impl Case {
    fn new(config: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("exp.toml"), config).unwrap();
        Case { dir }
    }

    fn config(&self) -> PathBuf {
        self.dir.path().join("exp.toml")
    }

    fn out(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn cli(&self, out: &str, args: &[&Path]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_streamrl"))
            .args(args)
            .env("STREAMRL_OUTPUT_DIR", self.out(out))
            .output()
            .unwrap()
    }

    fn run(&self, out: &str) -> Output {
        let cfg = self.config();
        self.cli(out, &[Path::new("run"), &cfg])
    }
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn ep_returns(path: &Path, phase: &str) -> Vec<f64> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap())
        .filter(|v| v["phase"] == phase && v["metric_name"] == "ep_return")
        .map(|v| v["value"].as_f64().unwrap())
        .collect()
}

#[test]
fn minimal_run_writes_artifacts() {
    let case = Case::new(MINIMAL);
    let o = case.run("out");
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = case.out("out");
    assert!(!fs::read_to_string(out.join("metrics.jsonl")).unwrap().is_empty());
    assert!(out.join("checkpoint.bin").is_file());
    assert!(fs::read_to_string(out.join("forgetting.csv"))
        .unwrap()
        .starts_with("after_experience,task_0"));
    assert!(out.join("config.toml").is_file());
}

#[test]
fn unknown_strategy_is_a_config_error() {
    let case = Case::new(&MINIMAL.replace(r#"name = "dqn""#, r#"name = "ppo""#));
    let o = case.run("out");
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("strategy"), "{}", stderr(&o));
}

#[test]
fn unknown_key_names_the_key() {
    let case = Case::new(&MINIMAL.replace("hidden = [16]", "hidden = [16]\nhiden = [3]"));
    let o = case.run("out");
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("hiden"), "{}", stderr(&o));
}

#[test]
fn missing_seeds_are_rejected() {
    let case = Case::new(&MINIMAL.replace("sampling = 5", ""));
    let o = case.run("out");
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("sampling"), "{}", stderr(&o));
}

#[test]
fn bad_hyperparameter_names_its_path() {
    let case = Case::new(&MINIMAL.replace(
        "hidden = [16]",
        "hidden = [16]\nhyperparameters = { gamma = \"high\" }",
    ));
    let o = case.run("out");
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("strategy.hyperparameters.gamma"), "{}", stderr(&o));
}

#[test]
fn missing_config_file_is_an_input_error() {
    let case = Case::new(MINIMAL);
    let o = case.cli("out", &[Path::new("run"), &case.out("nope.toml")]);
    assert_eq!(code(&o), 2);
}

#[test]
fn unwritable_output_dir_is_a_runtime_error() {
    let case = Case::new(MINIMAL);
    fs::write(case.out("file"), "").unwrap();
    let o = case.run("file/sub");
    assert_eq!(code(&o), 3, "{}", stderr(&o));
}

#[test]
fn repeated_runs_are_byte_identical() {
    let case = Case::new(TWO_TASKS);
    assert_eq!(code(&case.run("a")), 0);
    assert_eq!(code(&case.run("b")), 0);
    for f in ["metrics.jsonl", "checkpoint.bin", "forgetting.csv"] {
        let a = fs::read(case.out("a").join(f)).unwrap();
        let b = fs::read(case.out("b").join(f)).unwrap();
        assert!(a == b, "{f} differs");
    }
}

#[test]
fn effective_config_reproduces_the_run() {
    let case = Case::new(TWO_TASKS);
    assert_eq!(code(&case.run("a")), 0);
    let echoed = case.out("a").join("config.toml");
    let text = fs::read_to_string(&echoed).unwrap();
    for key in ["gamma", "target_sync_every", "lambda", "mix_ratio", "window"] {
        assert!(text.contains(key), "{key} not expanded:\n{text}");
    }
    let o = case.cli("b", &[Path::new("run"), &echoed]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(
        fs::read(case.out("a").join("metrics.jsonl")).unwrap(),
        fs::read(case.out("b").join("metrics.jsonl")).unwrap()
    );
    // identical apart from the overridden output directory
    let body = |t: &str| t.lines().skip(1).collect::<Vec<_>>().join("\n");
    let again = fs::read_to_string(case.out("b").join("config.toml")).unwrap();
    assert_eq!(body(&again), body(&text));
}

#[test]
fn eval_matches_final_run_evaluation() {
    let case = Case::new(TWO_TASKS);
    assert_eq!(code(&case.run("run")), 0);
    let ck = case.out("run").join("checkpoint.bin");
    let o = case.cli("eval", &[Path::new("eval"), &case.config(), &ck]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("over 5 episodes"), "{}", stdout(&o));

    let evaluated = ep_returns(&case.out("eval").join("eval_metrics.jsonl"), "eval");
    // 5 episodes on each of the 2 eval tasks
    assert_eq!(evaluated.len(), 10);
    let trained = ep_returns(&case.out("run").join("metrics.jsonl"), "eval");
    assert_eq!(evaluated, trained[trained.len() - 10..]);
}

#[test]
fn wrong_shape_checkpoint_is_rejected() {
    let small = Case::new(MINIMAL);
    assert_eq!(code(&small.run("run")), 0);
    let ck = small.out("run").join("checkpoint.bin");
    let wide = Case::new(&MINIMAL.replace("hidden = [16]", "hidden = [32]"));
    let o = wide.cli("eval", &[Path::new("eval"), &wide.config(), &ck]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("checkpoint"), "{}", stderr(&o));
}

#[test]
fn corrupt_checkpoint_is_rejected() {
    let case = Case::new(MINIMAL);
    fs::write(case.out("junk.bin"), b"not a checkpoint").unwrap();
    let o = case.cli("eval", &[Path::new("eval"), &case.config(), &case.out("junk.bin")]);
    assert_eq!(code(&o), 2);
}

#[test]
fn plot_data_is_sorted_by_step() {
    let case = Case::new(TWO_TASKS);
    assert_eq!(code(&case.run("run")), 0);
    let metrics = case.out("run").join("metrics.jsonl");
    let o = case.cli(
        "x",
        &[Path::new("plot-data"), &metrics, Path::new("ep_return_windowed")],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("step,value"));
    let steps: Vec<u64> = lines
        .map(|l| l.split(',').next().unwrap().parse().unwrap())
        .collect();
    assert!(!steps.is_empty());
    assert!(steps.windows(2).all(|w| w[0] <= w[1]));
}

#[test]
fn plot_data_unknown_metric_lists_names() {
    let case = Case::new(TWO_TASKS);
    assert_eq!(code(&case.run("run")), 0);
    let metrics = case.out("run").join("metrics.jsonl");
    let o = case.cli("x", &[Path::new("plot-data"), &metrics, Path::new("accuracy")]);
    assert_eq!(code(&o), 2);
    let err = stderr(&o);
    assert!(err.contains("ep_return") && err.contains("loss"), "{err}");
}

#[test]
fn plot_data_empty_filter_is_header_only() {
    let case = Case::new(TWO_TASKS);
    assert_eq!(code(&case.run("run")), 0);
    let metrics = case.out("run").join("metrics.jsonl");
    // loss is only ever logged while training
    let o = case.cli(
        "x",
        &[
            Path::new("plot-data"),
            &metrics,
            Path::new("loss"),
            Path::new("--phase"),
            Path::new("eval"),
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(stdout(&o), "step,value\n");
}

#[test]
fn plot_data_bad_metrics_file_is_an_input_error() {
    let case = Case::new(MINIMAL);
    fs::write(case.out("m.jsonl"), "{not json").unwrap();
    let o = case.cli("x", &[Path::new("plot-data"), &case.out("m.jsonl"), Path::new("loss")]);
    assert_eq!(code(&o), 2);
}

#[test]
fn usage_errors_exit_two() {
    let case = Case::new(MINIMAL);
    let o = case.cli("x", &[Path::new("frobnicate")]);
    assert_eq!(code(&o), 2);
}
