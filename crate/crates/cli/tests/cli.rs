use std::path::Path;
use std::process::{Command, Output};

fn bin(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_session-parse"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn q(text: &str) -> String {
    format!(r#"{{"kind":"Q","text":"{text}"}}"#)
}

fn c(url: &str) -> String {
    format!(r#"{{"kind":"C","url":"{url}"}}"#)
}

fn session(id: &str, turns: &[String]) -> String {
    format!(r#"{{"id":"{id}","turns":[{}]}}"#, turns.join(","))
}

fn fast_config(dir: &Path) {
    std::fs::write(dir.join("fast.toml"), "[crf]\nmax_iters = 25\n[relex]\nmax_iters = 25\n").unwrap();
}

#[test]
fn help_and_version_exit_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let out = bin(tmp.path(), &["--help"]);
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).contains("distsup-label"));
    assert_eq!(code(&bin(tmp.path(), &["--version"])), 0);
}

#[test]
fn usage_errors_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(code(&bin(tmp.path(), &["no-such-command"])), 1);
    assert_eq!(code(&bin(tmp.path(), &["eval", "--gold", "x"])), 1);
    assert_eq!(code(&bin(tmp.path(), &["--threads", "0", "synth", "--out", "c"])), 1);
    std::fs::write(tmp.path().join("bad.toml"), "[mention]\nwindoww = 2\n").unwrap();
    assert_eq!(code(&bin(tmp.path(), &["--config", "bad.toml", "synth", "--out", "c"])), 1);
    let out = bin(tmp.path(), &["distsup-label", "--sessions", "s.jsonl", "--out", "o"]);
    assert_eq!(code(&out), 1, "{}", stderr(&out));
}

#[test]
fn missing_and_malformed_inputs_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let out = bin(dir, &["distsup-label", "--knowledge", "kb", "--sessions", "s.jsonl", "--out", "o"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("does not exist"));

    std::fs::create_dir(dir.join("kb")).unwrap();
    std::fs::write(dir.join("kb/gazetteer.tsv"), "titanic\tfilm\te1\t3\n").unwrap();
    std::fs::write(dir.join("s.jsonl"), format!("{}\nnot json\n", session("a", &[q("titanic")]))).unwrap();
    let out = bin(dir, &["distsup-label", "--knowledge", "kb", "--sessions", "s.jsonl", "--out", "o"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("line 2"), "{}", stderr(&out));

    std::fs::write(dir.join("kb/gazetteer.tsv"), "titanic\tfilm\te1\tmany\n").unwrap();
    let out = bin(dir, &["distsup-label", "--knowledge", "kb", "--sessions", "s.jsonl", "--out", "o"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("gazetteer"), "{}", stderr(&out));
}

#[test]
fn wrong_model_kind_is_a_data_error() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fast_config(dir);
    assert_eq!(code(&bin(dir, &["synth", "--out", "corpus", "--sessions", "30"])), 0);
    let out = bin(
        dir,
        &["--config", "fast.toml", "train-typer", "--knowledge", "corpus/knowledge", "--labeled", "corpus/gold.jsonl", "--out", "t.model"],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let out = bin(
        dir,
        &["tag", "--knowledge", "corpus/knowledge", "--sessions", "corpus/sessions.jsonl", "--mention-model", "t.model", "--out", "p.jsonl"],
    );
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("t.model"), "{}", stderr(&out));
}

#[test]
fn empty_knowledge_store_matches_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    std::fs::create_dir(dir.join("kb")).unwrap();
    std::fs::write(dir.join("kb/gazetteer.tsv"), "").unwrap();
    let sessions = [
        session("a", &[q("the great gatsby"), c("www.imdb.com/title/tt1/")]),
        session("b", &[q("titanic")]),
    ];
    std::fs::write(dir.join("s.jsonl"), sessions.join("\n")).unwrap();
    let out = bin(dir, &["distsup-label", "--knowledge", "kb", "--sessions", "s.jsonl", "--out", "o"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report = stdout(&out);
    assert!(report.contains("Query\t2\t0\t0.00%"), "{report}");
    assert!(report.contains("URL\t1\t0\t0.00%"), "{report}");
    assert_eq!(std::fs::read_to_string(dir.join("o/relations.tsv")).unwrap(), "");
    let labeled = std::fs::read_to_string(dir.join("o/labeled.jsonl")).unwrap();
    assert_eq!(labeled.lines().count(), 2);
    assert!(!labeled.contains("B-ENT"));
}

#[test]
fn toy_corpus_match_fraction() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    std::fs::create_dir(dir.join("kb")).unwrap();
    std::fs::write(
        dir.join("kb/gazetteer.tsv"),
        "the great gatsby\tfilm\tm1\t50\nleonardo dicaprio\tactor\tp1\t120\ntitanic\tfilm\tm2\t300\n\
         the wolf of wall street\tfilm\tm3\t40\n",
    )
    .unwrap();
    std::fs::write(dir.join("kb/urlmap.tsv"), "www.imdb.com/title/tt1/\tm1\nwww.imdb.com/name/nm1/\tp1\n").unwrap();
    // With the default 3-token minimum, only "the great gatsby" and
    // "the wolf of wall street" can match.
    let sessions = [
        session("s0", &[q("the great gatsby 2013"), c("www.imdb.com/title/tt1/")]),
        session("s1", &[q("leonardo dicaprio movies")]),
        session("s2", &[q("titanic")]),
        session("s3", &[q("the wolf of wall street cast"), q("weather today")]),
        session("s4", &[c("www.imdb.com/name/nm1/"), c("example.org/")]),
        session("s5", &[q("the great gatsby")]),
        session("s6", &[q("great gatsby")]),
        session("s7", &[q("cheap flights")]),
        session("s8", &[q("THE GREAT Gatsby trailer")]),
        session("s9", &[q("who is in the great gatsby and titanic")]),
    ];
    std::fs::write(dir.join("s.jsonl"), sessions.join("\n")).unwrap();
    let out = bin(dir, &["distsup-label", "--knowledge", "kb", "--sessions", "s.jsonl", "--out", "o"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report = stdout(&out);
    // Matched queries: s0, s3 (first), s5, s8, s9 of 10 queries.
    assert!(report.contains("Query\t10\t5\t50.00%"), "{report}");
    assert!(report.contains("URL\t3\t2\t66.67%"), "{report}");
    assert!(report.contains("sessions\t10"), "{report}");
    assert_eq!(std::fs::read_to_string(dir.join("o/stats.txt")).unwrap(), report);
}

#[test]
fn pipeline_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    std::fs::write(
        dir.join("fast.toml"),
        "[crf]\nmax_iters = 25\n[relex]\nmax_iters = 25\n[distsup]\nmin_name_tokens = 1\n[synth]\nere_prob = 0.5\nrelated_prob = 0.8\n",
    )
    .unwrap();
    let run = |args: &[&str]| {
        let mut full = vec!["--config", "fast.toml"];
        full.extend_from_slice(args);
        let out = bin(dir, &full);
        assert_eq!(code(&out), 0, "{args:?}: {}", stderr(&out));
        out
    };
    run(&["synth", "--out", "corpus", "--sessions", "80"]);
    run(&["distsup-label", "--knowledge", "corpus/knowledge", "--sessions", "corpus/sessions.jsonl", "--out", "lab"]);
    let kb = ["--knowledge", "corpus/knowledge"];
    let gold = ["--labeled", "corpus/gold.jsonl"];
    run(&[&["train-mention"][..], &kb, &gold, &["--out", "m.model"]].concat());
    run(&[&["train-typer"][..], &kb, &gold, &["--out", "t.model", "--mention-model", "m.model"]].concat());
    run(&[&["train-typer"][..], &kb, &gold, &["--out", "t0.model", "--mode", "drop", "--no-transitions"]].concat());
    for t in ["ere", "tre"] {
        let out = format!("{t}.model");
        let args = ["--labeled", "lab/labeled.jsonl", "--samples", "lab/relations.tsv", "--template", t, "--out", &out];
        run(&[&["train-relex"][..], &kb, &args].concat());
    }
    run(&[
        &["tag"][..],
        &kb,
        &["--sessions", "corpus/sessions.jsonl", "--mention-model", "m.model", "--typer-model", "t.model"],
        &["--ere-model", "ere.model", "--tre-model", "tre.model", "--out", "pred.jsonl"],
    ]
    .concat());
    run(&[&["tag"][..], &kb, &["--sessions", "corpus/sessions.jsonl", "--mention-model", "m.model", "--typer-model", "t0.model", "--out", "base.jsonl"]].concat());
    let out = run(&["eval", "--gold", "corpus/gold.jsonl", "--pred", "pred.jsonl", "--compare", "base.jsonl", "--out", "report.tsv"]);
    let table = stdout(&out);
    assert!(table.contains("micro"), "{table}");
    assert!(table.contains("paired t-test over 80 units"), "{table}");
    let tsv = std::fs::read_to_string(dir.join("report.tsv")).unwrap();
    assert!(tsv.starts_with("type\tprecision\trecall\tf1\tsupport\n"), "{tsv}");
    let pred = std::fs::read_to_string(dir.join("pred.jsonl")).unwrap();
    assert_eq!(pred.lines().count(), 80);
    assert!(pred.contains("\"interpretations\""), "relation output missing");
    let out = run(&["eval", "--gold", "corpus/gold.jsonl", "--pred", "pred.jsonl", "--protocol", "recall-only"]);
    assert!(stdout(&out).contains("recall-only"));

    run(&["fit-sessionlm", "--sessions", "corpus/gold.jsonl", "--order", "2", "--out", "lm.tsv"]);
    let counts = std::fs::read_to_string(dir.join("lm.tsv")).unwrap();
    assert!(counts.starts_with("# session-parse-counts v1 order=2 unk=true"), "{counts}");
    let out = run(&["perplexity", "--counts", "lm.tsv", "--sessions", "corpus/gold.jsonl", "--smoothing", "additive", "--bits"]);
    assert!(stdout(&out).starts_with("cross-entropy "), "{}", stdout(&out));
    let out = run(&["tune-lm", "--counts", "lm.tsv", "--dev", "corpus/gold.jsonl", "--step", "0.25", "--type"]);
    assert!(stdout(&out).contains("type_weight"), "{}", stdout(&out));
    let bad = bin(dir, &["perplexity", "--counts", "lm.tsv", "--sessions", "corpus/gold.jsonl", "--weights", "0.5,0.6"]);
    assert_eq!(code(&bad), 1, "{}", stderr(&bad));
}

#[test]
fn tag_with_mention_model_only_warns() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fast_config(dir);
    assert_eq!(code(&bin(dir, &["synth", "--out", "corpus", "--sessions", "40"])), 0);
    let out = bin(
        dir,
        &["--config", "fast.toml", "train-mention", "--knowledge", "corpus/knowledge", "--labeled", "corpus/gold.jsonl", "--out", "m.model"],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let out = bin(
        dir,
        &["tag", "--knowledge", "corpus/knowledge", "--sessions", "corpus/sessions.jsonl", "--mention-model", "m.model", "--out", "p.jsonl"],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stderr(&out).contains("no typer model"), "{}", stderr(&out));
    let pred = std::fs::read_to_string(dir.join("p.jsonl")).unwrap();
    assert!(pred.contains("\"spans\""));
    assert!(!pred.contains("\"interpretations\""));
}

#[test]
fn inputs_are_not_modified() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    assert_eq!(code(&bin(dir, &["synth", "--out", "corpus", "--sessions", "20"])), 0);
    let before = std::fs::read(dir.join("corpus/sessions.jsonl")).unwrap();
    let out = bin(
        dir,
        &["distsup-label", "--knowledge", "corpus/knowledge", "--sessions", "corpus/sessions.jsonl", "--out", "corpus"],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(std::fs::read(dir.join("corpus/sessions.jsonl")).unwrap(), before);
}

#[test]
fn synth_is_seeded() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    for (out, seed) in [("a", "5"), ("b", "5"), ("c", "6")] {
        assert_eq!(code(&bin(dir, &["--seed", seed, "synth", "--out", out, "--sessions", "25"])), 0);
    }
    let read = |d: &str| std::fs::read(dir.join(d).join("gold.jsonl")).unwrap();
    assert_eq!(read("a"), read("b"));
    assert_ne!(read("a"), read("c"));
    assert_eq!(code(&bin(dir, &["synth", "--out", "empty", "--sessions", "0"])), 0);
    assert!(read("empty").is_empty());
}
