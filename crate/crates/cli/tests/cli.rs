use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

const TOY: &str =
    "(S (NP John) (VP (V likes) (NP Mary)))\n(S (NP Peter) (VP (V hates) (NP Susan)))\n";

fn dop(args: &[&str], stdin: &str) -> Output {
    let mut child = Command::new(env!("CARGO_BIN_EXE_dop"))
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child
        .stdin
        .take()
        .unwrap()
        .write_all(stdin.as_bytes())
        .unwrap();
    child.wait_with_output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn toy_grammar(dir: &Path) -> PathBuf {
    let corpus = write(dir, "toy.mrg", TOY);
    let out = dir.join("toy.stsg");
    let o = dop(
        &[
            "extract",
            "--corpus",
            corpus.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ],
        "",
    );
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    out
}

fn synthetic() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/data/synthetic200.mrg")
}

#[test]
fn extract_writes_root_totals() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(toy_grammar(dir.path())).unwrap();
    for line in [
        "# start\tS",
        "# root-total\tS\t20",
        "# root-total\tNP\t4",
        "# root-total\tVP\t8",
        "# root-total\tV\t2",
    ] {
        assert!(text.lines().any(|l| l == line), "missing {line:?}");
    }
    assert!(text.contains("(S (NP) (VP))\t2\t1/10\n"));
}

#[test]
fn parse_with_sampling_reports_sample_size() {
    let dir = tempfile::tempdir().unwrap();
    let g = toy_grammar(dir.path());
    let args = [
        "parse",
        "--grammar",
        g.to_str().unwrap(),
        "--mode",
        "mpp-mc",
        "--sigma",
        "0.05",
        "--seed",
        "1",
    ];
    let o = dop(&args, "Mary likes Susan\n");
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    assert!(out.contains("parse\t(S (NP Mary) (VP (V likes) (NP Susan)))\n"));
    assert!(out.contains("N\t100\n"));
    assert!(out.contains("sigma-bound\t0.050000\n"));
    assert_eq!(stdout(&dop(&args, "Mary likes Susan\n")), out);
}

#[test]
fn unknown_words_are_reported_without_failing() {
    let dir = tempfile::tempdir().unwrap();
    let g = toy_grammar(dir.path());
    let o = dop(
        &["parse", "--grammar", g.to_str().unwrap(), "--mode", "mpd"],
        "Mary likes Ringo\nJohn hates Mary\n",
    );
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    assert!(out.contains("NO-PARSE unknown-terminal Ringo@2\n"));
    assert!(out.contains("parse\t(S (NP John) (VP (V hates) (NP Mary)))\n"));
}

#[test]
fn exact_modes_print_rationals() {
    let dir = tempfile::tempdir().unwrap();
    let g = toy_grammar(dir.path());
    let g = g.to_str().unwrap();
    let mpd = stdout(&dop(
        &["parse", "--grammar", g, "--mode", "mpd"],
        "Mary likes Susan\n",
    ));
    assert!(mpd.contains("derivation-probability\t1/160\n"), "{mpd}");
    let exact = stdout(&dop(
        &["parse", "--grammar", g, "--mode", "mpp-exact"],
        "Mary likes Susan\n",
    ));
    assert!(exact.contains("probability\t1/64\n"), "{exact}");
}

#[test]
fn usage_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let g = toy_grammar(dir.path());
    let g = g.to_str().unwrap();
    for args in [
        vec![
            "parse",
            "--grammar",
            g,
            "--mode",
            "mpp-mc",
            "--sigma",
            "0.05",
        ],
        vec!["parse", "--grammar", g, "--mode", "mpp-mc", "--seed", "1"],
        vec![
            "parse",
            "--grammar",
            g,
            "--mode",
            "mpp-mc",
            "--seed",
            "1",
            "--sigma",
            "0.1",
            "--samples",
            "5",
        ],
        vec![
            "parse",
            "--grammar",
            g,
            "--mode",
            "mpp-mc",
            "--seed",
            "1",
            "--sigma",
            "0",
        ],
        vec!["parse", "--grammar", g, "--mode", "viterbi"],
        vec!["frobnicate"],
        vec!["extract", "--corpus", g, "--min-count", "0"],
    ] {
        let o = dop(&args, "");
        assert_eq!(o.status.code(), Some(1), "{args:?}");
        assert!(!o.stderr.is_empty());
    }
    assert_eq!(dop(&["--help"], "").status.code(), Some(0));
}

#[test]
fn data_errors_exit_with_two_and_name_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(dir.path(), "bad.mrg", "(S (NP a) (VP b))\n(S (NP a)\n");
    let o = dop(&["extract", "--corpus", bad.to_str().unwrap()], "");
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8(o.stderr).unwrap();
    assert!(err.contains("line 2"), "{err}");
    let o = dop(
        &["parse", "--grammar", "/nonexistent/g.stsg", "--mode", "mpd"],
        "",
    );
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn eval_and_sweep_write_report_grids() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = synthetic();
    let corpus = corpus.to_str().unwrap();
    let rows = dir.path().join("rows.tsv");
    let eval = [
        "eval",
        "--corpus",
        corpus,
        "--max-depth",
        "2",
        "--mode",
        "mpd",
        "--train-fraction",
        "0.8",
        "--split-seed",
        "7",
        "--rows",
        rows.to_str().unwrap(),
    ];
    let o = dop(&eval, "");
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let out = stdout(&o);
    assert!(out.contains("filter-id\tmax-depth\tmax-sites\tmin-count\tmode\tparse-acc\tsentence-acc\tbracketing-acc\tcoverage\tn-test\tseed\n"));
    assert!(out.contains("\nd2-s*-r*-c1\t2\tunbounded\t1\tmpd\t"));
    assert_eq!(std::fs::read_to_string(&rows).unwrap().lines().count(), 41);

    let sweep = |jobs: &str| {
        stdout(&dop(
            &[
                "sweep",
                "--corpus",
                corpus,
                "--depths",
                "1,2,unbounded",
                "--mode",
                "mpp-mc",
                "--samples",
                "50",
                "--seed",
                "3",
                "--jobs",
                jobs,
            ],
            "",
        ))
    };
    let one = sweep("1");
    assert_eq!(one.lines().filter(|l| !l.starts_with('#')).count(), 4);
    assert_eq!(one, sweep("3"));
}

#[test]
fn sweep_matches_the_pinned_core_grid() {
    let pinned = include_str!("../../core/tests/pinned_sweep.tsv");
    let o = dop(
        &[
            "sweep",
            "--corpus",
            synthetic().to_str().unwrap(),
            "--depths",
            "1,2,3,4,unbounded",
            "--mode",
            "mpp-mc",
            "--sigma",
            "0.05",
            "--seed",
            "11",
            "--split-seed",
            "7",
            "--train-fraction",
            "0.8",
        ],
        "",
    );
    let body: String = stdout(&o)
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| format!("{l}\n"))
        .collect();
    assert!(pinned.starts_with(&body), "{body}");
}
