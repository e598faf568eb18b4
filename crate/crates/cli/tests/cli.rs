use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use gpl::synthetic::{World, WorldConfig};

fn pipeline() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_pipeline"));
    cmd.env_remove("PIPELINE_CACHE_ROOT").env("RUST_BACKTRACE", "0").args(["--log", "warn"]);
    cmd
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

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Small synthetic target domain plus a config with short training runs.
fn setup(dir: &Path) -> PathBuf {
    let world = World::generate(&WorldConfig {
        n_topics: 4,
        passages_per_topic: 6,
        topic_vocab: 10,
        test_queries_per_topic: 2,
        ..WorldConfig::default()
    })
    .unwrap();
    world.target.write(dir.join("data")).unwrap();
    let config = dir.join("pipeline.toml");
    std::fs::write(
        &config,
        r#"
seed = 1
[paths]
data = "data"
output = "out"
lexicon = "data/lexicon.tsv"
[generation]
total_budget = 72
[mining]
negatives_per_retriever = 4
[gpl]
steps = 30
[qgen]
batch_size = 8
"#,
    )
    .unwrap();
    config
}

#[test]
fn run_then_report() {
    let dir = tempfile::tempdir().unwrap();
    let config = setup(dir.path());
    let out = run(pipeline().args(["run", "--method", "gpl", "--config"]).arg(&config));
    let text = stdout(&out);
    for stage in ["ingest", "generate", "mine", "label", "train", "evaluate"] {
        assert!(text.contains(stage), "{text}");
    }
    assert!(text.contains("ndcg@10=") && text.contains("mrr@10="), "{text}");
    assert!(dir.path().join("out/data/common/label/gpl-training-data.tsv").is_file());

    let again = stdout(&run(pipeline().args(["run", "--method", "gpl", "--config"]).arg(&config)));
    assert_eq!(again.matches("cached").count(), 6, "{again}");

    run(pipeline().args(["run", "--method", "bm25+ce", "--config"]).arg(&config));
    let report = stdout(&run(pipeline().arg("report").arg(dir.path().join("out"))));
    assert!(report.contains("data/gpl/evaluate"), "{report}");
    assert!(report.contains("data/bm25/evaluate"), "{report}");
    assert!(report.contains("data/bm25+ce/rerank"), "{report}");
}

#[test]
fn stage_by_stage() {
    let dir = tempfile::tempdir().unwrap();
    let config = setup(dir.path());
    let failed = pipeline().args(["stage", "label", "--config"]).arg(&config).output().unwrap();
    assert!(!failed.status.success());
    assert!(stderr(&failed).contains("run `mine` first"), "{}", stderr(&failed));

    for stage in ["ingest", "generate", "mine", "label", "train", "evaluate"] {
        let out = run(pipeline().args(["stage", stage, "--config"]).arg(&config));
        assert!(stdout(&out).contains(stage));
    }
    let out = run(pipeline().args(["stage", "generate", "--config"]).arg(&config));
    assert!(stdout(&out).contains("cached"));
    assert!(dir.path().join("out/data/gpl/evaluate/report.json").is_file());
}

#[test]
fn env_var_and_flag_choose_the_output_root() {
    let dir = tempfile::tempdir().unwrap();
    let config = setup(dir.path());
    let env_root = dir.path().join("from-env");
    run(pipeline().env("PIPELINE_CACHE_ROOT", &env_root).args(["run", "--method", "bm25", "--config"]).arg(&config));
    assert!(env_root.join("data/bm25/evaluate/report.json").is_file());
    assert!(!dir.path().join("out").exists());

    let flag_root = dir.path().join("from-flag");
    run(pipeline()
        .env("PIPELINE_CACHE_ROOT", &env_root)
        .args(["run", "--method", "zeroshot", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&flag_root));
    assert!(flag_root.join("data/zeroshot/evaluate/report.json").is_file());
    assert!(!env_root.join("data/zeroshot").exists());
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let config = setup(dir.path());
    let queries = |root: &str, seed: Option<&str>| {
        let mut cmd = pipeline();
        cmd.args(["run", "--method", "qgen", "--config"]).arg(&config).arg("--out").arg(dir.path().join(root));
        if let Some(s) = seed {
            cmd.args(["--seed", s]);
        }
        run(&mut cmd);
        std::fs::read(dir.path().join(root).join("data/common/generate/gen-queries.jsonl")).unwrap()
    };
    let default = queries("a", None);
    assert_eq!(default, queries("b", Some("1")));
    assert_ne!(default, queries("c", Some("2")));
}

#[test]
fn errors_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let config = setup(dir.path());
    let out = pipeline().args(["run", "--method", "gpl2", "--config"]).arg(&config).output().unwrap();
    assert!(!out.status.success());
    assert!(stderr(&out).contains("valid methods"), "{}", stderr(&out));

    let out = pipeline().args(["stage", "distill", "--config"]).arg(&config).output().unwrap();
    assert!(!out.status.success());
    assert!(stderr(&out).contains("valid stages"));

    let out = pipeline().args(["run", "--method", "gpl", "--config", "missing.toml"]).output().unwrap();
    assert!(!out.status.success());
    assert!(stderr(&out).contains("missing.toml"));

    std::fs::write(dir.path().join("bad.toml"), "[generation]\ntemprature = 1.0\n").unwrap();
    let out = pipeline().args(["run", "--method", "gpl", "--config"]).arg(dir.path().join("bad.toml")).output().unwrap();
    assert!(!out.status.success());
    assert!(stderr(&out).contains("temprature"), "{}", stderr(&out));

    let out = pipeline().arg("report").arg(dir.path()).output().unwrap();
    assert!(!out.status.success());
}

#[test]
fn methods_lists_ids() {
    let text = stdout(&run(pipeline().arg("methods")));
    let ids: Vec<&str> = text.lines().collect();
    for id in ["zeroshot", "bm25", "gpl", "qgen", "qgen-hn", "tsdae+gpl", "udalm", "bm25+ce", "gpl+ce"] {
        assert!(ids.contains(&id), "{id}");
    }
}
