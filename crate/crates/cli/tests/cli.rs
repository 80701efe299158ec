use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use embnav::training::SeedRange;
use embnav_cli::cmd::eval::{self, Policy};
use embnav_cli::cmd::probe::{self, Stage};
use embnav_cli::cmd::train::{self, TrainOpts};
use embnav_cli::cmd::{sweep, zeroshot};
use embnav_cli::config::{ExperimentConfig, SCHEMA_VERSION};
use embnav_cli::error::{CliError, EXIT_CONFIG, EXIT_MISSING, EXIT_OK, EXIT_RUNTIME};
use embnav_cli::lock::DirLock;
use proptest::prelude::*;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn load(name: &str) -> ExperimentConfig {
    ExperimentConfig::load(&configs().join(name)).unwrap()
}

fn bin(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_embnav")).args(args).output().unwrap();
    (out.status.code().unwrap(), String::from_utf8_lossy(&out.stderr).into_owned())
}

fn read(p: &Path) -> Vec<u8> {
    std::fs::read(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

fn csv_rows(p: &Path) -> usize {
    csv::Reader::from_path(p).unwrap().records().count()
}

#[test]
fn shipped_configs_round_trip() {
    for entry in std::fs::read_dir(configs()).unwrap() {
        let path = entry.unwrap().path();
        let cfg = ExperimentConfig::load(&path).unwrap();
        assert_eq!(cfg.schema_version, SCHEMA_VERSION);
        let again = ExperimentConfig::parse(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(again, cfg, "{}", path.display());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn round_trip_is_identity(seed in 0..=i64::MAX as u64, start in 0u64..1_000_000, count in 1u64..1000, lr in 1e-6f64..1.0, steps in 1u64..1_000_000) {
        let mut cfg = load("smoke.toml");
        cfg.seed = seed;
        cfg.task.seeds.train = SeedRange::new(start, count);
        cfg.task.seeds.val = SeedRange::new(2_000_000, 8);
        cfg.task.seeds.test = SeedRange::new(3_000_000, 8);
        let t = cfg.train.as_mut().unwrap();
        t.lr = lr;
        t.total_steps = steps;
        let text = cfg.to_toml().unwrap();
        let parsed = ExperimentConfig::parse(&text).unwrap();
        prop_assert_eq!(&parsed, &cfg);
        prop_assert_eq!(parsed.to_toml().unwrap(), text);
    }
}

#[test]
fn parse_errors_carry_line_numbers() {
    let text = std::fs::read_to_string(configs().join("smoke.toml")).unwrap();
    let broken = text.replace("lr = 1e-3", "lr = [oops");
    let line = broken.lines().position(|l| l.contains("[oops")).unwrap() + 1;
    match ExperimentConfig::parse(&broken) {
        Err(CliError::Config(m)) => assert!(m.contains(&format!("line {line}")), "{m}"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn unknown_nested_keys_are_rejected() {
    let text = std::fs::read_to_string(configs().join("smoke.toml")).unwrap();
    let extra = text.replace("lr = 1e-3", "lr = 1e-3\nlearning_rate = 1e-3");
    match ExperimentConfig::parse(&extra) {
        Err(CliError::Config(m)) => assert!(m.contains("learning_rate"), "{m}"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn overlapping_seed_blocks_are_rejected() {
    let mut cfg = load("smoke.toml");
    cfg.task.seeds.test = SeedRange::new(500, 10);
    assert!(matches!(cfg.validate(), Err(CliError::Config(m)) if m.contains("overlap")));
}

#[test]
fn seeds_must_fit_in_toml_integers() {
    let mut cfg = load("smoke.toml");
    cfg.seed = u64::MAX;
    assert!(matches!(cfg.validate(), Err(CliError::Config(_))));
    assert!(matches!(cfg.to_toml(), Err(CliError::Config(_))));
}

#[test]
fn unsupported_schema_version_is_rejected() {
    let mut cfg = load("smoke.toml");
    cfg.schema_version = SCHEMA_VERSION + 1;
    assert!(matches!(ExperimentConfig::parse(&cfg.to_toml().unwrap()), Err(CliError::Config(_))));
}

#[test]
fn agent_must_match_backbone_and_task() {
    let mut cfg = load("smoke.toml");
    cfg.agent.as_mut().unwrap().model.channels = 16;
    assert!(matches!(cfg.validate(), Err(CliError::Config(_))));
    let mut cfg = load("smoke.toml");
    cfg.agent.as_mut().unwrap().model.actions = 7;
    assert!(matches!(cfg.validate(), Err(CliError::Config(_))));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let out = out.to_str().unwrap();
    let smoke = configs().join("smoke.toml");
    let smoke = smoke.to_str().unwrap();

    let (code, _) = bin(&["eval", "--config", smoke, "--out", out, "--checkpoint", "expert"]);
    assert_eq!(code, EXIT_OK);

    let (code, err) = bin(&["eval", "--config", "/nonexistent/embnav.toml", "--out", out]);
    assert_eq!(code, EXIT_CONFIG, "{err}");

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "schema_version = 1\nseed = 1\nbogus = 3\n").unwrap();
    let (code, err) = bin(&["eval", "--config", bad.to_str().unwrap(), "--out", out]);
    assert_eq!(code, EXIT_CONFIG);
    assert!(err.contains("line 3"), "{err}");

    let missing = dir.path().join("no-agent");
    let (code, err) = bin(&["eval", "--config", smoke, "--out", out, "--checkpoint", missing.to_str().unwrap()]);
    assert_eq!(code, EXIT_MISSING);
    assert!(err.contains("manifest.json"), "{err}");

    let (code, err) = bin(&["train", "--config", smoke, "--out", out, "--resume"]);
    assert_eq!(code, EXIT_MISSING);
    assert!(err.contains("trainer.json"), "{err}");

    let _held = DirLock::acquire(Path::new(out)).unwrap();
    let (code, err) = bin(&["eval", "--config", smoke, "--out", out]);
    assert_eq!(code, EXIT_RUNTIME);
    assert!(err.contains("in use"), "{err}");
}

#[test]
fn lock_blocks_a_second_command_and_is_released() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = load("smoke.toml");
    {
        let _held = DirLock::acquire(dir.path()).unwrap();
        let r = eval::run(&cfg, dir.path(), &Policy::Expert, Some(1));
        assert!(matches!(r, Err(CliError::Runtime(_))));
    }
    eval::run(&cfg, dir.path(), &Policy::Expert, Some(1)).unwrap();
    assert!(!dir.path().join(".embnav.lock").exists());
}

#[test]
fn smoke_train_writes_artifacts_and_is_deterministic() {
    let cfg = load("smoke.toml");
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        let o = train::run(&cfg, d.path(), &TrainOpts::default()).unwrap();
        assert!(o.finished);
        assert_eq!(o.steps, cfg.train.as_ref().unwrap().total_steps);
    }
    let p = dirs[0].path();
    for f in ["checkpoint/trainer.json", "agent/params.bin", train::LOG_CSV, train::METRICS_CSV] {
        assert!(p.join(f).exists(), "{f}");
    }
    assert_eq!(csv_rows(&p.join(train::METRICS_CSV)), 2);
    for f in [train::LOG_CSV, train::METRICS_CSV, "agent/params.bin"] {
        assert_eq!(read(&p.join(f)), read(&dirs[1].path().join(f)), "{f}");
    }
}

#[test]
fn existing_run_needs_resume() {
    let cfg = load("smoke.toml");
    let d = tempfile::tempdir().unwrap();
    let opts = TrainOpts { resume: false, max_updates: Some(1) };
    train::run(&cfg, d.path(), &opts).unwrap();
    assert!(matches!(train::run(&cfg, d.path(), &opts), Err(CliError::Config(_))));
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let cfg = load("smoke.toml");
    let whole = tempfile::tempdir().unwrap();
    train::run(&cfg, whole.path(), &TrainOpts::default()).unwrap();

    let split = tempfile::tempdir().unwrap();
    let first = train::run(&cfg, split.path(), &TrainOpts { resume: false, max_updates: Some(3) }).unwrap();
    assert!(!first.finished);
    assert!(!split.path().join(train::METRICS_CSV).exists());
    let second = train::run(&cfg, split.path(), &TrainOpts { resume: true, max_updates: Some(2) }).unwrap();
    assert!(!second.finished);
    let last = train::run(&cfg, split.path(), &TrainOpts { resume: true, max_updates: None }).unwrap();
    assert!(last.finished);

    for f in [train::LOG_CSV, train::METRICS_CSV, "agent/params.bin", "checkpoint/trainer.json"] {
        assert_eq!(read(&whole.path().join(f)), read(&split.path().join(f)), "{f}");
    }
}

#[test]
fn expert_pseudo_checkpoint_scores_perfectly() {
    for name in ["smoke.toml", "rearrange_lite.toml"] {
        let cfg = load(name);
        let r = eval::report(&cfg, &Policy::Expert, 8).unwrap();
        assert_eq!(r.sr, Some(1.0), "{name}");
    }
    let r = eval::report(&load("smoke.toml"), &Policy::Expert, 8).unwrap();
    assert_eq!(r.spl, Some(1.0));
}

#[test]
fn zero_episodes_give_an_empty_report() {
    let d = tempfile::tempdir().unwrap();
    let r = eval::run(&load("smoke.toml"), d.path(), &Policy::Random, Some(0)).unwrap();
    assert_eq!(r.episodes, 0);
    assert_eq!(r.sr, None);
    assert_eq!(csv_rows(&d.path().join(eval::EVAL_CSV)), 1);
}

#[test]
fn more_episodes_than_test_seeds_is_a_config_error() {
    let d = tempfile::tempdir().unwrap();
    let r = eval::run(&load("smoke.toml"), d.path(), &Policy::Random, Some(9));
    assert!(matches!(r, Err(CliError::Config(_))));
}

#[test]
fn eval_is_deterministic_and_loads_trained_agents() {
    let cfg = load("smoke.toml");
    let d = tempfile::tempdir().unwrap();
    train::run(&cfg, d.path(), &TrainOpts::default()).unwrap();
    let agent = Policy::Checkpoint(d.path().join(train::AGENT_DIR));
    let mut csvs = Vec::new();
    for _ in 0..2 {
        eval::run(&cfg, d.path(), &agent, None).unwrap();
        csvs.push(read(&d.path().join(eval::EVAL_CSV)));
    }
    assert_eq!(csvs[0], csvs[1]);
    // The same agent evaluated by `train` on the same test split.
    let metrics = String::from_utf8(read(&d.path().join(train::METRICS_CSV))).unwrap();
    let eval_csv = String::from_utf8(csvs.pop().unwrap()).unwrap();
    assert_eq!(metrics.lines().nth(1), eval_csv.lines().nth(1));
}

#[test]
fn eval_rejects_an_agent_for_another_task() {
    let nav = load("smoke.toml");
    let d = tempfile::tempdir().unwrap();
    train::run(&nav, d.path(), &TrainOpts::default()).unwrap();
    let rearrange = load("rearrange_lite.toml");
    let r = eval::report(&rearrange, &Policy::Checkpoint(d.path().join(train::AGENT_DIR)), 1);
    assert!(matches!(r, Err(CliError::Config(m)) if m.contains("ObjectNav")));
}

fn probe_micro() -> ExperimentConfig {
    let mut cfg = load("probe_micro.toml");
    let p = cfg.probe.as_mut().unwrap();
    p.data.scenes = [2, 1, 1];
    p.data.frames = [40, 20, 20];
    p.train.max_epochs = 100;
    cfg
}

#[test]
fn probe_pipeline_runs_end_to_end_and_reruns_identically() {
    let cfg = probe_micro();
    let d = tempfile::tempdir().unwrap();
    let start = Instant::now();
    for stage in [Stage::Data, Stage::Train, Stage::Eval, Stage::Report] {
        probe::run(&cfg, d.path(), stage).unwrap();
    }
    assert!(start.elapsed().as_secs() < 60, "{:?}", start.elapsed());
    let report = d.path().join("probe").join(probe::REPORT_CSV);
    // 4 tasks x 2 backbones, each task with its single accepted pooling.
    assert_eq!(csv_rows(&report), probe::cells(&cfg.probe_block().unwrap()).len());
    assert_eq!(csv_rows(&report), 8);
    let first = read(&report);
    let scores = read(&d.path().join("probe").join(probe::SCORES_CSV));

    let again = tempfile::tempdir().unwrap();
    probe::run(&cfg, again.path(), Stage::All).unwrap();
    assert_eq!(read(&again.path().join("probe").join(probe::REPORT_CSV)), first);
    assert_eq!(read(&again.path().join("probe").join(probe::SCORES_CSV)), scores);
}

#[test]
fn probe_grid_follows_tasks_poolings_and_attention() {
    let mut p = probe_micro().probe_block().unwrap();
    p.poolings = vec![embnav::Pooling::Average, embnav::Pooling::Grid, embnav::Pooling::Attention];
    p.backbones[0] = p.backbones[0].clone().with_attention(16, 4);
    let cells = probe::cells(&p);
    // Localization: avg3x3 on both; the other three: avg on both plus attn on the first.
    assert_eq!(cells.len(), 2 + 3 * 3);
    assert!(cells.iter().all(|c| c.task.accepts(c.pooling)));
    p.tasks = vec![embnav::ProbeTask::Presence];
    assert_eq!(probe::cells(&p).len(), 3);
}

#[test]
fn probe_stages_name_missing_upstream_files() {
    let cfg = probe_micro();
    let d = tempfile::tempdir().unwrap();
    let out = d.path().to_str().unwrap();
    let path = d.path().join("cfg.toml");
    std::fs::write(&path, cfg.to_toml().unwrap()).unwrap();
    let path = path.to_str().unwrap();
    let (code, err) = bin(&["probe", "train", "--config", path, "--out", out]);
    assert_eq!(code, EXIT_MISSING);
    assert!(err.contains("manifest.json") && err.contains("embnav probe data"), "{err}");
    let (code, err) = bin(&["probe", "report", "--config", path, "--out", out]);
    assert_eq!(code, EXIT_MISSING);
    assert!(err.contains(probe::SCORES_CSV), "{err}");
    let (code, _) = bin(&["probe", "data", "--config", path, "--out", out]);
    assert_eq!(code, EXIT_OK);
    let (code, err) = bin(&["probe", "eval", "--config", path, "--out", out]);
    assert_eq!(code, EXIT_MISSING);
    assert!(err.contains("embnav probe train"), "{err}");
}

#[test]
fn probe_data_from_another_config_is_refused() {
    let cfg = probe_micro();
    let d = tempfile::tempdir().unwrap();
    probe::run(&cfg, d.path(), Stage::Data).unwrap();
    let mut other = cfg.clone();
    other.seed += 1;
    assert!(matches!(probe::run(&other, d.path(), Stage::Train), Err(CliError::Config(_))));
}

fn tiny_sweep(total_steps: u64) -> ExperimentConfig {
    let mut cfg = load("sweep.toml");
    let t = cfg.train.as_mut().unwrap();
    t.total_steps = total_steps;
    t.target_sr = None;
    let s = cfg.sweep.as_mut().unwrap();
    s.proxy.scenes = [8, 4, 4];
    s.proxy.frames = [20, 20, 20];
    cfg
}

#[test]
fn sweep_separates_informative_from_random_features() {
    let cfg = tiny_sweep(40_960);
    let d = tempfile::tempdir().unwrap();
    let rows = sweep::run(&cfg, d.path(), false).unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(csv_rows(&d.path().join(sweep::SWEEP_CSV)), 2);
    let (inf, rnd) = (&rows[0], &rows[1]);
    assert_eq!((inf.backbone.as_str(), rnd.backbone.as_str()), ("informative", "random"));
    assert!(inf.sr > rnd.sr, "{rows:?}");
    assert!(inf.proxy_accuracy > rnd.proxy_accuracy, "{rows:?}");
}

#[test]
fn sweep_rows_for_a_repeated_backbone_are_identical() {
    let mut cfg = tiny_sweep(1024);
    let s = cfg.sweep.as_mut().unwrap();
    s.backbones = vec![s.backbones[1].clone(), s.backbones[1].clone()];
    let d = tempfile::tempdir().unwrap();
    let rows = sweep::run(&cfg, d.path(), false).unwrap();
    assert_eq!(rows[0], rows[1]);
}

#[test]
fn sweep_needs_two_backbones() {
    let mut cfg = tiny_sweep(1024);
    cfg.sweep.as_mut().unwrap().backbones.truncate(1);
    assert!(matches!(cfg.validate(), Err(CliError::Config(_))));
}

#[test]
fn zeroshot_rejects_overlapping_splits() {
    let mut cfg = load("zeroshot.toml");
    cfg.zeroshot.as_mut().unwrap().unseen.push(3);
    assert!(matches!(cfg.validate(), Err(CliError::Config(m)) if m.contains("both seen and unseen")));
}

#[test]
fn zeroshot_training_never_sees_unseen_goals() {
    let mut cfg = load("zeroshot.toml");
    cfg.train.as_mut().unwrap().total_steps = 4096;
    cfg.zeroshot.as_mut().unwrap().episodes = 24;
    let d = tempfile::tempdir().unwrap();
    let o = zeroshot::run(&cfg, d.path(), false).unwrap();
    assert!(!o.audit.trained_goals.is_empty());
    assert!(o.audit.trained_goals.iter().all(|c| (0..8).contains(c)));
    let audit: serde_json::Value = serde_json::from_slice(&read(&d.path().join(zeroshot::AUDIT_JSON))).unwrap();
    assert_eq!(audit["unseen"], serde_json::json!([8, 9, 10, 11]));
    for policy in ["agent", "random"] {
        for split in ["seen", "unseen"] {
            let all = o.rows.iter().find(|r| r.policy == policy && r.split == split && r.category == "all").unwrap();
            assert_eq!(all.episodes, 24);
            let per: usize = o
                .rows
                .iter()
                .filter(|r| r.policy == policy && r.split == split && r.category != "all")
                .map(|r| r.episodes)
                .sum();
            assert_eq!(per, 24);
        }
    }
    let unseen_cats: Vec<_> = o
        .rows
        .iter()
        .filter(|r| r.split == "unseen" && r.category != "all")
        .map(|r| r.category.parse::<usize>().unwrap())
        .collect();
    assert!(unseen_cats.iter().all(|c| (8..12).contains(c)));
    assert_eq!(csv_rows(&d.path().join(zeroshot::ZEROSHOT_CSV)), o.rows.len());
}

#[test]
fn sim_demo_writes_replayable_logs() {
    let d = tempfile::tempdir().unwrap();
    let logs = embnav_cli::cmd::demo::run(&load("smoke.toml"), d.path(), Some(2)).unwrap();
    assert_eq!(logs.len(), 2);
    for (i, log) in logs.iter().enumerate() {
        assert!(log.success);
        assert!(log.replay().unwrap().success);
        let ppm = read(&d.path().join("demo").join(format!("episode_{i}.ppm")));
        assert!(ppm.starts_with(b"P6\n16 16\n255\n"));
    }
    let text = String::from_utf8(read(&d.path().join("demo").join("episodes.jsonl"))).unwrap();
    assert_eq!(text.lines().count(), 2);
}
