use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sdnet::checkpoint::Checkpoint;
use sdnet::coqa::to_coqa_json;
use sdnet::runlog::read_runlog;
use sdnet_core::evaluation::f1_multi;
use sdnet_core::synthetic::overfit_corpus;
use sdnet_core::training::DevReport;

const MODEL: &str = "[model]
rnn_hidden = 6
word_attn_k = 8
q_self_attn_k = 8
multilevel_k = 8
c_self_attn_k = 8
final_rnn_hidden = 6
pos_dim = 3
ner_dim = 2
word_dim = 6
contextual_dim = 4
contextual_layers = 2
";

struct Toy {
    dir: tempfile::TempDir,
}

impl Toy {
    fn new(epochs: usize, extra_train: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let corpus = overfit_corpus(3, 1);
        std::fs::write(dir.path().join("train.json"), to_coqa_json(&corpus[..2])).unwrap();
        std::fs::write(dir.path().join("dev.json"), to_coqa_json(&corpus[2..])).unwrap();
        let cfg = format!(
            "model_seed = 3\noutput_dir = \"run\"\n[data]\ntrain = \"train.json\"\ndev = \"dev.json\"\n\
             [contextual]\nkind = \"mock\"\nseed = 5\n{MODEL}[train]\nepochs = {epochs}\nseed = 2\n{extra_train}"
        );
        std::fs::write(dir.path().join("toy.toml"), cfg).unwrap();
        Self { dir }
    }

    fn path(&self, p: &str) -> PathBuf {
        self.dir.path().join(p)
    }

    fn config(&self) -> PathBuf {
        self.path("toy.toml")
    }
}

fn sdnet(args: &[&dyn AsRef<std::ffi::OsStr>]) -> Output {
    sdnet_env(args, None)
}

fn sdnet_env(args: &[&dyn AsRef<std::ffi::OsStr>], run_root: Option<&Path>) -> Output {
    let mut c = Command::new(env!("CARGO_BIN_EXE_sdnet"));
    c.env("RUST_LOG", "warn").env_remove("SDNET_RUN_ROOT");
    if let Some(r) = run_root {
        c.env("SDNET_RUN_ROOT", r);
    }
    for a in args {
        c.arg(a);
    }
    c.output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn train_writes_run_directory() {
    let toy = Toy::new(2, "");
    let o = sdnet(&[&"train", &"--config", &toy.config()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let run = toy.path("run");
    for f in ["config.toml", "runlog.jsonl", "last.ckpt", "best.ckpt"] {
        assert!(run.join(f).exists(), "{f} missing");
    }
    let log = read_runlog(&run.join("runlog.jsonl")).unwrap();
    assert_eq!(log.len(), 2);
    assert!(log.iter().all(|r| r.dev_f1.is_some() && r.train_loss.is_finite()));
    let last = Checkpoint::load(&run.join("last.ckpt")).unwrap();
    let best = Checkpoint::load(&run.join("best.ckpt")).unwrap();
    assert_eq!(last.epoch, 2);
    assert_eq!(last.frozen, best.frozen);
    assert_eq!(last.optimizer.step_count, 4);
    let echo = sdnet::config::RunConfig::load(&run.join("config.toml")).unwrap();
    assert_eq!(echo.train.epochs, 2);
    assert!(echo.data.train.is_absolute());
}

#[test]
fn same_config_twice_is_identical() {
    let toy = Toy::new(2, "");
    let runs: Vec<_> = (0..2)
        .map(|i| {
            let o = sdnet(&[&"train", &"--config", &toy.config()]);
            assert!(o.status.success(), "{}", stderr(&o));
            let moved = toy.path(&format!("run{i}"));
            std::fs::rename(toy.path("run"), &moved).unwrap();
            moved
        })
        .collect();
    let cols = |p: &Path| -> Vec<(usize, u64, Option<u64>, u64)> {
        read_runlog(&p.join("runlog.jsonl"))
            .unwrap()
            .iter()
            .map(|r| (r.epoch, r.train_loss.to_bits(), r.dev_f1.map(f64::to_bits), r.clip_rate.to_bits()))
            .collect()
    };
    assert_eq!(cols(&runs[0]), cols(&runs[1]));
    assert_eq!(std::fs::read(runs[0].join("last.ckpt")).unwrap(), std::fs::read(runs[1].join("last.ckpt")).unwrap());
}

#[test]
fn run_root_env_relocates_output() {
    let toy = Toy::new(1, "");
    let root = tempfile::tempdir().unwrap();
    let o = sdnet_env(&[&"train", &"--config", &toy.config()], Some(root.path()));
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(root.path().join("run/last.ckpt").exists());
    assert!(!toy.path("run").exists());
}

#[test]
fn config_errors_exit_two_naming_the_field() {
    let toy = Toy::new(1, "");
    std::fs::remove_file(toy.path("train.json")).unwrap();
    let o = sdnet(&[&"train", &"--config", &toy.config()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("data.train"), "{}", stderr(&o));

    let bad = toy.path("bad.toml");
    std::fs::write(&bad, "output_dir = \"r\"\n[data]\ntrain = \"t.json\"\n[model]\nhidden = 3\n").unwrap();
    let o = sdnet(&[&"train", &"--config", &bad]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("hidden"), "{}", stderr(&o));

    let o = sdnet(&[&"train", &"--config", &toy.path("nope.toml")]);
    assert_eq!(o.status.code(), Some(2));
    let o = sdnet(&[&"frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn malformed_data_exits_three() {
    let toy = Toy::new(1, "");
    std::fs::write(toy.path("train.json"), "{\"data\": [").unwrap();
    let o = sdnet(&[&"train", &"--config", &toy.config()]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn divergence_exits_four_with_diagnostic() {
    let toy = Toy::new(3, "lr = 1e300\n");
    let o = sdnet(&[&"train", &"--config", &toy.config()]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
    let msg = stderr(&o);
    assert!(msg.contains("overfit-1-") && msg.contains("last finite loss"), "{msg}");
}

#[test]
fn gold_echo_scores_one_hundred() {
    let toy = Toy::new(1, "");
    let out = toy.path("echo");
    let o = sdnet(&[&"eval", &"--gold-echo", &"--data", &toy.path("dev.json"), &"--out", &out]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("100.0"), "{}", stdout(&o));
    let report: DevReport = serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report.report.overall, 100.0);
}

#[test]
fn eval_predict_and_rescore_agree() {
    let toy = Toy::new(2, "");
    assert!(sdnet(&[&"train", &"--config", &toy.config()]).status.success());
    let ckpt = toy.path("run/last.ckpt");
    let dev = toy.path("dev.json");
    let out = toy.path("eval");
    let o = sdnet(&[&"eval", &"--checkpoint", &ckpt, &"--data", &dev, &"--out", &out]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report: DevReport = serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();

    let scores: Vec<f64> = report.records.iter().map(|r| f1_multi(&r.predicted, &r.golds).unwrap()).collect();
    let mean = 100.0 * scores.iter().sum::<f64>() / scores.len() as f64;
    assert!((report.report.overall - mean).abs() < 1e-9);
    let per_type_turns: usize = report.per_type.values().map(|s| s.turns).sum();
    assert_eq!(per_type_turns, report.report.turns);

    let last_dev = read_runlog(&toy.path("run/runlog.jsonl")).unwrap().last().unwrap().dev_f1.unwrap();
    assert_eq!(report.report.overall.to_bits(), last_dev.to_bits());

    let preds = toy.path("preds.json");
    let o = sdnet(&[&"predict", &"--checkpoint", &ckpt, &"--data", &dev, &"--out", &preds]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = sdnet(&[&"eval", &"--predictions", &preds, &"--data", &dev, &"--out", &toy.path("rescored")]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rescored: DevReport =
        serde_json::from_str(&std::fs::read_to_string(toy.path("rescored/report.json")).unwrap()).unwrap();
    assert_eq!(rescored.report, report.report);
}

#[test]
fn checkpoint_problems_exit_two() {
    let toy = Toy::new(1, "");
    let o = sdnet(&[&"eval", &"--checkpoint", &toy.path("run/last.ckpt"), &"--data", &toy.path("dev.json")]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));

    assert!(sdnet(&[&"train", &"--config", &toy.config()]).status.success());
    let other = toy.path("other.toml");
    let text = std::fs::read_to_string(toy.config()).unwrap().replace("rnn_hidden = 6", "rnn_hidden = 7");
    std::fs::write(&other, text).unwrap();
    let o = sdnet(&[
        &"eval",
        &"--checkpoint",
        &toy.path("run/last.ckpt"),
        &"--config",
        &other,
        &"--data",
        &toy.path("dev.json"),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("model.rnn_hidden"), "{}", stderr(&o));

    let other = toy.path("other_embedder.toml");
    let text = std::fs::read_to_string(toy.config()).unwrap().replace("seed = 5", "seed = 6");
    std::fs::write(&other, text).unwrap();
    let o = sdnet(&[
        &"eval",
        &"--checkpoint",
        &toy.path("run/last.ckpt"),
        &"--config",
        &other,
        &"--data",
        &toy.path("dev.json"),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("frozen inputs"), "{}", stderr(&o));
}

#[test]
fn ablate_history_table() {
    let toy = Toy::new(1, "");
    let o = sdnet(&[&"ablate", &"--config", &toy.config(), &"--variants", &"n0,n1,n2,n3"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let table = stdout(&o);
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines.len(), 5, "{table}");
    for (line, (n, reference)) in lines[1..].iter().zip([(0, "69.43"), (1, "76.70"), (2, "77.99"), (3, "77.39")]) {
        assert!(line.starts_with(&format!("N = {n}")) && line.ends_with(reference), "{line}");
    }
    assert_eq!(std::fs::read_to_string(toy.path("run/ablation.txt")).unwrap(), table);
    let again = sdnet(&[&"ablate", &"--config", &toy.config(), &"--variants", &"n0,n1,n2,n3"]);
    assert_eq!(stdout(&again), table);
}

#[test]
fn ablate_rejects_bad_variant_lists() {
    let toy = Toy::new(1, "");
    let o = sdnet(&[&"ablate", &"--config", &toy.config()]);
    assert_eq!(o.status.code(), Some(2));
    let o = sdnet(&[&"ablate", &"--config", &toy.config(), &"--variants", &"n0,bogus"]);
    assert_eq!(o.status.code(), Some(2));
    let msg = stderr(&o);
    assert!(msg.contains("bogus") && msg.contains("no_question_self_attention"), "{msg}");
}

#[test]
fn curve_round_trips_the_run_log() {
    let toy = Toy::new(3, "");
    assert!(sdnet(&[&"train", &"--config", &toy.config()]).status.success());
    let log = toy.path("run/runlog.jsonl");
    let o = sdnet(&[&"curve", &"--runlog", &log]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows: Vec<(usize, f64)> = stdout(&o)
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| {
            let (e, f) = l.split_once(' ').unwrap();
            (e.parse().unwrap(), f.parse().unwrap())
        })
        .collect();
    let records = read_runlog(&log).unwrap();
    assert_eq!(rows, records.iter().map(|r| (r.epoch, r.dev_f1.unwrap())).collect::<Vec<_>>());

    let broken = toy.path("broken.jsonl");
    let mut text = std::fs::read_to_string(&log).unwrap();
    text.push_str("not json\n");
    std::fs::write(&broken, text).unwrap();
    let o = sdnet(&[&"curve", &"--runlog", &broken]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("line 4"), "{}", stderr(&o));
}
