use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn duca(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_duca")).args(args).output().unwrap()
}

fn text(o: &Output) -> String {
    format!("{}{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr))
}

const SMALL: [&str; 4] = ["--set", "ppo.episodes_per_step=8", "--set", "ppo.max_steps=3"];

#[test]
fn help_mentions_every_flag() {
    let cases: &[(&str, &[&str])] = &[
        ("train", &["--config", "--set", "--out", "--workers", "--method", "--seeds", "--dump"]),
        ("eval", &["--config", "--set", "--out", "--workers", "--checkpoint", "--episodes", "--seed", "--dump"]),
        ("gradcheck", &["--seed", "--models"]),
        ("ablate", &["--config", "--set", "--out", "--workers", "--seeds", "--methods", "--episodes"]),
        ("report", &["--dump", "--out"]),
    ];
    for (verb, flags) in cases {
        let o = duca(&["help", verb]);
        assert!(o.status.success());
        let help = text(&o);
        for flag in *flags {
            assert!(help.contains(flag), "{verb} help lacks {flag}");
        }
    }
    let top = text(&duca(&["--help"]));
    for verb in ["train", "eval", "gradcheck", "ablate", "report"] {
        assert!(top.contains(verb));
    }
}

#[test]
fn usage_and_validation_exit_codes() {
    assert_eq!(duca(&[]).status.code(), Some(2));
    assert_eq!(duca(&["fly"]).status.code(), Some(2));
    assert_eq!(duca(&["train", "--bogus"]).status.code(), Some(2));

    let o = duca(&["train", "--set", "turn_reward.delta1=1.5"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(text(&o).contains("delta1"));
    assert_eq!(duca(&["train", "--set", "no_such_key=1"]).status.code(), Some(3));
    assert_eq!(duca(&["train", "--method", "ppo"]).status.code(), Some(3));
    assert_eq!(duca(&["ablate", "--methods", "duca,nope"]).status.code(), Some(3));

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "[turn_reward]\ndelta1 = 1.5\n").unwrap();
    assert_eq!(duca(&["train", "--config", bad.to_str().unwrap()]).status.code(), Some(3));
}

#[test]
fn train_eval_report_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let mut args = vec!["train", "--out", out, "--method", "naive-sum", "--seeds", "4,5", "--dump"];
    args.extend(SMALL);
    let o = duca(&args);
    assert!(o.status.success(), "{}", text(&o));

    let run = dir.path().join("naive-sum_seed4");
    let curves = fs::read_to_string(run.join("curves.csv")).unwrap();
    assert_eq!(curves.lines().count(), 1 + 3);
    assert!(dir.path().join("naive-sum_seed5/policy.json").exists());

    let ckpt = run.join("policy.json");
    let eval_dir = dir.path().join("eval");
    let o = duca(&[
        "eval", "--checkpoint", ckpt.to_str().unwrap(), "--episodes", "30", "--out", eval_dir.to_str().unwrap(), "--dump",
    ]);
    assert!(o.status.success(), "{}", text(&o));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(eval_dir.join("eval_report.json")).unwrap()).unwrap();
    assert_eq!(report["episodes"], 30);

    let regenerated = dir.path().join("regen.json");
    let o = duca(&[
        "report", "--dump", eval_dir.join("eval.jsonl").to_str().unwrap(), "--out", regenerated.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", text(&o));
    let again: serde_json::Value = serde_json::from_str(&fs::read_to_string(&regenerated).unwrap()).unwrap();
    assert_eq!(again, report);

    let o = duca(&["report", "--dump", run.join("last_batch.jsonl").to_str().unwrap()]);
    assert!(o.status.success());
    assert!(text(&o).contains("\"cvr\""));
}

#[test]
fn missing_files_are_runtime_errors() {
    assert_eq!(duca(&["report", "--dump", "/nonexistent/x.jsonl"]).status.code(), Some(1));
    assert_eq!(duca(&["eval", "--checkpoint", "/nonexistent/p.json"]).status.code(), Some(1));
}

#[test]
fn gradcheck_passes() {
    let o = duca(&["gradcheck", "--seed", "1"]);
    assert!(o.status.success(), "{}", text(&o));
    assert!(text(&o).contains("overall max rel err"));
}

fn read_tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            files.extend(read_tree(&path));
        } else {
            files.push((path.strip_prefix(dir).unwrap().display().to_string(), fs::read(&path).unwrap()));
        }
    }
    files.sort();
    files
}

#[test]
fn ablate_output_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for (dir, workers) in [(&a, "1"), (&b, "3")] {
        let mut args = vec!["ablate", "--seeds", "1,2", "--episodes", "20", "--workers", workers, "--out"];
        args.push(dir.path().to_str().unwrap());
        args.extend(SMALL);
        let o = duca(&args);
        assert!(o.status.success(), "{}", text(&o));
    }
    let ta = read_tree(a.path());
    assert_eq!(ta, read_tree(b.path()));
    let table = fs::read_to_string(a.path().join("ablation.csv")).unwrap();
    assert!(table.starts_with("method,seeds,cvr,compliance,avg_turn"));
    assert_eq!(table.lines().count(), 5);
}
