use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_guidecap"));
    c.env_remove("GUIDECAP_SEED");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
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

fn small_config(dir: &Path, variant: &str, extra: &str) -> PathBuf {
    let text = format!(
        r#"seed = 3

[data]
frequent_words = 8

[synth]
train = 30
val = 8
test = 6

[model]
variant = "{variant}"
embed = 8
hidden = 12
attention = 8

[model.review]
steps = 2

[train]
max_epochs = 2

[output]
dir = "out"

[ablate]
seeds = 1
epochs = 1
{extra}
"#
    );
    let p = dir.join("run.toml");
    std::fs::write(&p, text).unwrap();
    p
}

fn trained(variant: &str) -> (TempDir, PathBuf) {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), variant, "");
    let o = run(&["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = tmp.path().join("out");
    (tmp, out)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn train_writes_outputs_and_review_columns() {
    let (_tmp, out) = trained("review-net");
    for f in ["checkpoint.txt", "report.txt", "train.tsv", "val.tsv", "test.tsv", "test_captions.txt"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let report = std::fs::read_to_string(out.join("report.txt")).unwrap();
    let header = report.lines().next().unwrap();
    assert!(header.contains("val_dis1") && header.contains("val_dis2"), "{header}");
    assert!(report.contains("variant=review-net"));

    let (_tmp2, out2) = trained("soft-attention");
    let report = std::fs::read_to_string(out2.join("report.txt")).unwrap();
    assert!(!report.lines().next().unwrap().contains("dis2"));
}

#[test]
fn seed_override_changes_digest() {
    let digest = |seed: Option<&str>| {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = small_config(tmp.path(), "soft-attention", "");
        let mut c = bin();
        c.args(["train", "--config", s(&cfg)]);
        if let Some(v) = seed {
            c.env("GUIDECAP_SEED", v);
        }
        let o = c.output().unwrap();
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        stdout(&o)
            .lines()
            .find(|l| l.starts_with("checkpoint_digest="))
            .unwrap()
            .to_string()
    };
    assert_eq!(digest(None), digest(Some("3")));
    assert_ne!(digest(None), digest(Some("4")));
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), "soft-attention", "");
    let o = bin()
        .args(["train", "--config", s(&cfg)])
        .env("GUIDECAP_SEED", "abc")
        .output()
        .unwrap();
    assert_eq!(code(&o), 1);
}

#[test]
fn config_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.toml");
    std::fs::write(&bad, "seed = 1\n\n[train]\nlr = 0.1\nbogus = 2\n").unwrap();
    let o = run(&["train", "--config", s(&bad)]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("line 5"), "{}", stderr(&o));

    let missing = tmp.path().join("missing.toml");
    std::fs::write(&missing, "[data]\ntrain = \"nowhere/train.tsv\"\nval = \"nowhere/val.tsv\"\n").unwrap();
    let o = run(&["train", "--config", s(&missing)]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("nowhere/train.tsv"), "{}", stderr(&o));

    let o = run(&["train"]);
    assert_eq!(code(&o), 1);
    let o = run(&["--help"]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("gradcheck"));
}

#[test]
fn caption_reductions_and_errors() {
    let (_tmp, out) = trained("soft-attention");
    let ck = out.join("checkpoint.txt");
    let test = out.join("test.tsv");
    let cap = |extra: &[&str]| {
        let mut args = vec!["caption", "--dataset", s(&test)];
        args.extend_from_slice(extra);
        let o = run(&args);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        o.stdout
    };
    let greedy = cap(&["--checkpoint", s(&ck), "--greedy"]);
    assert_eq!(cap(&["--checkpoint", s(&ck), "--beam", "1"]), greedy);
    let single = cap(&["--checkpoint", s(&ck)]);
    assert_eq!(cap(&["--ensemble", s(&ck)]), single);
    assert_eq!(single, std::fs::read(out.join("test_captions.txt")).unwrap());
    assert_eq!(String::from_utf8(single).unwrap().lines().count(), 6);
    cap(&["--ensemble", s(&ck), s(&ck), "--beam", "2"]);

    let wrong = out.join("wrong.tsv");
    std::fs::write(&wrong, "x\t[1,2][1,2][3,4]\ta dog\n").unwrap();
    let o = run(&["caption", "--dataset", s(&wrong), "--checkpoint", s(&ck)]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("dimension"), "{}", stderr(&o));

    let o = run(&["caption", "--dataset", s(&test), "--checkpoint", s(&ck), "--beam", "0"]);
    assert_eq!(code(&o), 1);
    let o = run(&["caption", "--dataset", s(&test)]);
    assert_eq!(code(&o), 1);
}

#[test]
fn evaluate_contract() {
    let tmp = tempfile::tempdir().unwrap();
    let refs = tmp.path().join("refs.tsv");
    std::fs::write(
        &refs,
        "a\t[0][1]\tA dog runs on grass.\tdog on grass\n\
         b\t[0][1]\ttwo cats sleep\n\
         c\t[0][1]\ta red bus parked\n",
    )
    .unwrap();
    let caps = tmp.path().join("caps.txt");
    std::fs::write(&caps, "a\ta dog runs on grass\nb\ttwo cats sleep\nc\ta red bus parked\n").unwrap();
    let out = tmp.path().join("eval.txt");
    let o = run(&["evaluate", "--captions", s(&caps), "--references", s(&refs), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report = std::fs::read_to_string(&out).unwrap();
    for key in ["bleu1", "bleu2", "bleu3", "bleu4", "rouge_l"] {
        let line = report.lines().find(|l| l.starts_with(&format!("{key}="))).unwrap();
        let v: f64 = line.split('=').nth(1).unwrap().parse().unwrap();
        assert!((v - 1.0).abs() < 1e-12, "{line}");
    }
    assert!(report.contains("distinct_words=11"), "{report}");
    assert!(report.contains("cider.b="));

    let empty = tmp.path().join("empty.txt");
    std::fs::write(&empty, "").unwrap();
    let o = run(&["evaluate", "--captions", s(&empty), "--references", s(&refs)]);
    assert_eq!(code(&o), 2);

    let stray = tmp.path().join("stray.txt");
    std::fs::write(&stray, "a\ta dog\nzz\tx\nyy\ty\n").unwrap();
    let o = run(&["evaluate", "--captions", s(&stray), "--references", s(&refs)]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("zz, yy"), "{}", stderr(&o));
}

#[test]
fn gradcheck_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("g.toml");
    std::fs::write(&cfg, "seed = 1\n").unwrap();
    let o = run(&["gradcheck", "--config", s(&cfg)]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    let text = stdout(&o);
    assert!(text.contains("soft-attention") && text.contains("review-net"));
    assert!(text.contains("result=pass"));

    let o = run(&["gradcheck", "--config", s(&cfg), "--tolerance", "1e-12"]);
    assert_eq!(code(&o), 3);
    assert!(stdout(&o).contains("result=fail"));

    let big = tmp.path().join("big.toml");
    std::fs::write(&big, "[gradcheck]\nvocab = 400\nhidden = 40\n").unwrap();
    let o = run(&["gradcheck", "--config", s(&big)]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("limited to 10000"), "{}", stderr(&o));
}

#[test]
fn ablate_table_shape() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), "soft-attention", "lambdas = [100.0, 0.01]");
    let o = run(&["ablate", "--config", s(&cfg)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = std::fs::read_to_string(tmp.path().join("out/ablate.txt")).unwrap();
    assert_eq!(stdout(&o), text);
    let summary: Vec<&str> = text.lines().skip(1).take_while(|l| !l.is_empty()).collect();
    assert_eq!(summary.len(), 6, "{text}");
    for arm in ["keep-both", "keep-e", "keep-A", "keep-none"] {
        assert!(summary.iter().any(|l| l.starts_with(arm)), "{arm}");
    }

    let zero = small_config(tmp.path(), "soft-attention", "").with_file_name("zero.toml");
    std::fs::write(&zero, "[synth]\ntrain = 5\n\n[ablate]\nseeds = 0\n").unwrap();
    let o = run(&["ablate", "--config", s(&zero)]);
    assert_eq!(code(&o), 1);
}
