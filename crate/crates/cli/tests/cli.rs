use std::path::Path;
use std::process::{Command, Output};

use inco_core::io::load_jsonl;
use inco_core::{PreferencePair, SampleSet, Source, Strategy};
use inco_gateway::{StubConfig, StubScore, StubServer};

fn inco(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_inco"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("run inco")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = inco(dir, args);
    assert_eq!(code(&out), 0, "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

const CONFIG: &str = r#"
seed = 5
num_seeds = 2
num_samples = 3

[scenario]
num_instructions = 12
max_tokens = 12

[objective]
epochs = 2
"#;

fn with<'a>(rest: &[&'a str]) -> Vec<&'a str> {
    [&["--config", "c.toml"][..], rest].concat()
}

fn workdir() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.toml"), CONFIG).unwrap();
    dir
}

#[test]
fn tabular_pipeline_runs_end_to_end() {
    let dir = workdir();
    let d = dir.path();
    ok(d, &with(&["synth", "--strategy", "continuation", "--prefix-tokens", "2", "--out", "sets.jsonl"]));
    ok(d, &with(&["score", "--in", "sets.jsonl", "--out", "scored.jsonl"]));
    ok(d, &with(&["weigh", "--in", "scored.jsonl", "--out", "weighed.jsonl"]));
    ok(d, &with(&["pair", "--in", "weighed.jsonl", "--out", "pairs.jsonl"]));

    let sets: Vec<SampleSet> = load_jsonl(d.join("weighed.jsonl")).unwrap();
    assert_eq!(sets.len(), 12);
    assert!(sets.iter().all(|s| s.len() == 3 && s.rewards.is_some() && s.weights.is_some()));
    let pairs: Vec<PreferencePair> = load_jsonl(d.join("pairs.jsonl")).unwrap();
    assert!(!pairs.is_empty());
    assert!(pairs.iter().all(|p| p.chosen_reward > p.rejected_reward && p.chosen_weight.is_some()));

    let summary = ok(d, &with(&["train", "--pairs", "pairs.jsonl", "--objective", "simpo", "--gamma", "0.1", "--out", "model.json"]));
    let summary: serde_json::Value = serde_json::from_str(summary.trim()).unwrap();
    assert_eq!(summary["pairs"], pairs.len());
    assert!(summary["expected_reward"].as_f64().unwrap().is_finite());
    assert!(d.join("model.json").exists());

    let listed = ok(d, &with(&["sweep", "--knob", "temperature", "--grid", "0.5,0.8", "--no-train", "--out", "sweep"]));
    assert_eq!(listed.lines().count(), 3);
    ok(d, &with(&["report", "--from", "sweep/sweep.json", "--format", "csv", "--out", "again"]));
    assert_eq!(
        std::fs::read(d.join("sweep/sweep.csv")).unwrap(),
        std::fs::read(d.join("again/sweep.csv")).unwrap()
    );

    let analysis = ok(d, &with(&["analyze", "--correlation", "--truncate-at", "4"]));
    let analysis: serde_json::Value = serde_json::from_str(analysis.trim()).unwrap();
    assert_eq!(analysis["truncate_at"], 4);
    assert_eq!(analysis["identity_violations"], 0);
}

#[test]
fn forced_offpolicy_pairs_prefer_external_responses() {
    let dir = workdir();
    let d = dir.path();
    for (strategy, name) in [("on-policy", "on"), ("off-policy", "off")] {
        let raw = format!("{name}.jsonl");
        let scored = format!("{name}_s.jsonl");
        ok(d, &["--config", "c.toml", "synth", "--strategy", strategy, "--out", &raw]);
        ok(d, &["--config", "c.toml", "score", "--in", &raw, "--out", &scored]);
    }
    ok(
        d,
        &["pair", "--in", "on_s.jsonl", "--off", "off_s.jsonl", "--strategy", "forced-offpolicy", "--worst-on", "--out", "p.jsonl"],
    );
    let pairs: Vec<PreferencePair> = load_jsonl(d.join("p.jsonl")).unwrap();
    assert!(pairs
        .iter()
        .all(|p| p.chosen.strategy == Strategy::OffPolicy && p.rejected.strategy == Strategy::OnPolicy));
}

#[test]
fn synth_is_deterministic_and_seed_sensitive() {
    let dir = workdir();
    let d = dir.path();
    for (out, seed) in [("a.jsonl", "1"), ("b.jsonl", "1"), ("c.jsonl", "2")] {
        ok(d, &["--config", "c.toml", "synth", "--seed", seed, "--out", out]);
    }
    let read = |f: &str| std::fs::read(d.join(f)).unwrap();
    assert_eq!(read("a.jsonl"), read("b.jsonl"));
    assert_ne!(read("a.jsonl"), read("c.jsonl"));
}

#[test]
fn input_errors_exit_with_one() {
    let dir = workdir();
    let d = dir.path();
    std::fs::write(d.join("bad.toml"), "num_seeds = \"many\"\n").unwrap();
    let cases: [&[&str]; 6] = [
        &["--config", "missing.toml", "score", "--in", "x", "--out", "y"],
        &["--config", "bad.toml", "score", "--in", "x", "--out", "y"],
        &["score", "--in", "missing.jsonl", "--out", "y"],
        &["sweep", "--knob", "bogus", "--out", "z"],
        &["pair", "--in", "x.jsonl", "--strategy", "forced-offpolicy", "--out", "q"],
        &["--config", "c.toml", "--run", "7", "synth", "--out", "q"],
    ];
    for args in cases {
        let out = inco(d, args);
        assert_eq!(code(&out), 1, "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        assert!(!out.stderr.is_empty());
    }
    assert_eq!(code(&inco(d, &["--help"])), 0);
}

fn remote_config(dir: &Path, base_url: &str, extra: &str) {
    let text = format!(
        "{CONFIG}\n\
         [gateway.policy]\nbase_url = \"{base_url}\"\nmodel = \"policy\"\nbackoff_ms = 5\nmax_retries = 1\n{extra}\n\
         [gateway.external]\nbase_url = \"{base_url}\"\nmodel = \"strong\"\nbackoff_ms = 5\nmax_retries = 1\n\
         [gateway.reward]\nbase_url = \"{base_url}\"\nmodel = \"rm\"\nbackoff_ms = 5\nmax_retries = 1\n"
    );
    std::fs::write(dir.join("remote.toml"), text).unwrap();
    std::fs::write(
        dir.join("prompts.jsonl"),
        "{\"id\":\"a\",\"prompt\":\"Name a prime.\"}\n{\"id\":\"b\",\"prompt\":\"Say hi.\"}\n",
    )
    .unwrap();
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn remote_synth_and_score_use_the_configured_endpoints() {
    let stub = StubServer::start(StubConfig {
        completion_text: " seven".into(),
        score: StubScore::Fixed(0.25),
        ..StubConfig::default()
    })
    .await
    .unwrap();
    let dir = workdir();
    let d = dir.path();
    remote_config(d, &stub.base_url(), "");
    let base = ["--config", "remote.toml"];
    let synth = [&base[..], &["synth", "--remote", "--prompts", "prompts.jsonl", "--strategy", "continuation", "--num-samples", "2", "--out", "r.jsonl"]].concat();
    let score = [&base[..], &["score", "--remote", "--in", "r.jsonl", "--out", "rs.jsonl"]].concat();
    let (synth_out, score_out) = tokio::task::spawn_blocking({
        let d = d.to_path_buf();
        move || (inco(&d, &synth), inco(&d, &score))
    })
    .await
    .unwrap();
    assert_eq!(code(&synth_out), 0, "{}", String::from_utf8_lossy(&synth_out.stderr));
    assert_eq!(code(&score_out), 0, "{}", String::from_utf8_lossy(&score_out.stderr));

    let sets: Vec<SampleSet> = load_jsonl(d.join("rs.jsonl")).unwrap();
    assert_eq!(sets.len(), 2);
    for set in &sets {
        assert_eq!(set.rewards.as_deref(), Some(&[0.25, 0.25][..]));
        for r in &set.responses {
            assert_eq!(r.strategy, Strategy::Continuation);
            assert_eq!(r.text.as_deref(), Some(" seven seven"));
            assert_eq!(r.segments[0].source, Source::External);
            assert_eq!((r.segments[0].start, r.segments[0].end), (0, 6));
        }
    }
    // two prompts x two samples x (prefix + continuation), then four scores
    assert_eq!(stub.hits(), 12);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn remote_failures_exit_with_two_and_missing_tokens_with_one() {
    let stub = StubServer::start(StubConfig {
        fail_first: usize::MAX,
        ..StubConfig::default()
    })
    .await
    .unwrap();
    let dir = workdir();
    let d = dir.path().to_path_buf();
    remote_config(&d, &stub.base_url(), "");
    let synth = ["--config", "remote.toml", "synth", "--remote", "--prompts", "prompts.jsonl", "--strategy", "on-policy", "--out", "r.jsonl"];
    let failed = tokio::task::spawn_blocking({
        let d = d.clone();
        move || inco(&d, &synth)
    })
    .await
    .unwrap();
    assert_eq!(code(&failed), 2, "{}", String::from_utf8_lossy(&failed.stderr));

    remote_config(&d, &stub.base_url(), "token_env = \"INCO_TEST_TOKEN_THAT_IS_UNSET\"");
    let missing = tokio::task::spawn_blocking(move || inco(&d, &synth)).await.unwrap();
    assert_eq!(code(&missing), 1, "{}", String::from_utf8_lossy(&missing.stderr));
}
