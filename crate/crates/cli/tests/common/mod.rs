#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

pub fn chive(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_chive"))
        .args(args)
        .output()
        .expect("binary runs")
}

pub fn ok(args: &[&str]) -> Output {
    let out = chive(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn error_json(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    serde_json::from_str(text.trim()).unwrap_or_else(|e| panic!("stderr is not JSON ({e}): {text}"))
}

pub fn expect_exit(args: &[&str], code: i32, kind: &str) -> Value {
    let out = chive(args);
    assert_eq!(out.status.code(), Some(code), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    let err = error_json(&out);
    assert_eq!(err["error"]["kind"], kind);
    assert_eq!(err["error"]["exit_code"], code);
    err
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// CRC-32 of every file below `dir`, keyed by relative path.
pub fn checksums(dir: &Path) -> BTreeMap<String, u32> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.insert(rel, crc32fast::hash(&std::fs::read(&path).unwrap()));
            }
        }
    }
    out
}

/// Runs every command into `root` and returns the checksums of everything
/// written, stdout included.
pub fn pipeline(root: &Path, jobs: &str) -> BTreeMap<String, u32> {
    let corpus = root.join("corpus");
    let run = root.join("run");
    let base_run = root.join("run-baseline");
    let stdout = root.join("stdout");
    std::fs::create_dir_all(&stdout).unwrap();
    let record = |name: &str, args: Vec<String>| {
        let mut full = args;
        full.extend(["--jobs".to_string(), jobs.to_string()]);
        let out = ok(&full.iter().map(String::as_str).collect::<Vec<_>>());
        std::fs::write(stdout.join(name), &out.stdout).unwrap();
    };
    let p = |x: &Path| x.to_string_lossy().into_owned();
    let v = |xs: &[&str]| xs.iter().map(|x| x.to_string()).collect::<Vec<_>>();

    let mut a = v(&["gen-corpus", "--utterances", "16", "--seed", "2", "--out"]);
    a.push(p(&corpus));
    record("gen-corpus", a);
    for (name, model, dir) in [("train", "chive", &run), ("train-baseline", "baseline", &base_run)] {
        let mut a = v(&["train", "--toy", "--steps", "8", "--eval-interval", "4", "--seed", "3", "--model", model]);
        a.extend(["--corpus".into(), p(&corpus), "--out".into(), p(dir)]);
        record(name, a);
    }
    let ckpt = p(&run.join("best.ckpt"));
    for mode in ["ordering", "encoded", "zero", "random", "transfer"] {
        let mut a = v(&["eval", "--mode", mode, "--seed", "9", "--pairs", "10", "--split", "all"]);
        a.extend(["--checkpoint".into(), ckpt.clone(), "--corpus".into(), p(&corpus)]);
        record(&format!("eval-{mode}"), a);
    }
    let input = p(&corpus.join("00004.utt.json"));
    for mode in ["zero", "random", "encoded"] {
        let mut a = v(&["synthesize", "--mode", mode, "--seed", "6"]);
        a.extend(["--checkpoint".into(), ckpt.clone(), "--input".into(), input.clone()]);
        a.extend(["--out".into(), p(&root.join(format!("synth-{mode}")))]);
        record(&format!("synthesize-{mode}"), a);
    }
    let mut a = v(&["transfer", "--seed", "6"]);
    a.extend(["--checkpoint".into(), ckpt, "--reference".into(), input]);
    a.extend(["--target".into(), p(&corpus.join("00009.utt.json")), "--out".into(), p(&root.join("transfer"))]);
    record("transfer", a);
    record("gradcheck", v(&["gradcheck", "--trees", "2", "--samples", "5", "--seed", "4"]));
    record("params", v(&["params", "--toy", "--seed", "4"]));

    let mut sums = checksums(root);
    // Paths of the run directory appear in summaries; compare them separately.
    for key in ["stdout/gen-corpus", "stdout/train", "stdout/train-baseline", "stdout/synthesize-zero",
        "stdout/synthesize-random", "stdout/synthesize-encoded", "stdout/transfer"]
    {
        let text = std::fs::read_to_string(root.join(key)).unwrap();
        let normalised = text.replace(&p(root), "<root>");
        sums.insert(key.to_string(), crc32fast::hash(normalised.as_bytes()));
    }
    sums
}
