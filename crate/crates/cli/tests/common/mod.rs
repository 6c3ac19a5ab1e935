// SPDX-License-Identifier: MIT OR Apache-2.0

//! Helpers shared by the command-line tests: running the binary on the
//! fixtures, reading result tables, and recomputing causal shifts with the
//! reference forward pass.

#![allow(dead_code)]

#[path = "../../../core/tests/common/toy_oracle.rs"]
pub mod toy_oracle;

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use toy_oracle::Oracle;

pub const SEED: &str = "7";

pub fn fixture(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(rel)
}

pub fn golden(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)
}

pub fn toy_config() -> String {
    fixture("toy/config.json").display().to_string()
}

/// Runs the binary with a fixed creation time so manifests are stable too.
pub fn aspectprobe(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aspectprobe"))
        .args(args)
        .env("SOURCE_DATE_EPOCH", "0")
        .env("RUST_LOG", "error")
        .output()
        .expect("binary runs")
}

/// Runs a pipeline and panics with its stderr if it fails.
pub fn ok(args: &[&str]) {
    let out = aspectprobe(args);
    assert!(
        out.status.success(),
        "aspectprobe {args:?} exited {:?}\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
}

/// Every pipeline on the toy fixture, each into its own directory under
/// `root`. Returns the run directories in execution order.
///
/// The trained head is copied to `shared` before evaluation: input paths
/// enter the config digest, so runs meant to be compared read it from the
/// same place.
pub fn run_all(root: &Path, shared: &Path) -> Vec<PathBuf> {
    let cfg = toy_config();
    let dir = |name: &str| root.join(name);
    let s = |p: &Path| p.display().to_string();
    let head = dir("train-head");
    let head_file = shared.join("head.json");
    let runs: Vec<(PathBuf, Vec<String>)> = vec![
        (dir("probe-behavioral"), vec!["probe-behavioral".into()]),
        (dir("train-inlp"), vec!["train-inlp".into()]),
        (
            dir("probe-causal"),
            vec![
                "probe-causal".into(),
                "--layer".into(),
                "2".into(),
                "--layer".into(),
                "4".into(),
                "--control".into(),
                "random".into(),
            ],
        ),
        (
            dir("probe-causal-identity"),
            vec![
                "probe-causal".into(),
                "--layer-range".into(),
                "0-4".into(),
                "--control".into(),
                "identity".into(),
                "--set".into(),
                "causal.subspace_file=null".into(),
            ],
        ),
        (
            dir("mine-cues"),
            vec![
                "mine-cues".into(),
                "--corpus".into(),
                s(&fixture("miner/corpus.conllu")),
            ],
        ),
        (head.clone(), vec!["train-head".into()]),
        (
            dir("eval-head"),
            vec!["eval-head".into(), "--head".into(), s(&head_file)],
        ),
        (
            dir("eval-head-backend"),
            vec![
                "eval-head".into(),
                "--head".into(),
                s(&head_file),
                "--dropout-source".into(),
                "backend".into(),
            ],
        ),
        (dir("cue-stats"), vec!["cue-stats".into()]),
    ];
    let mut dirs = Vec::new();
    for (out, mut args) in runs {
        args.extend([
            "-c".into(),
            cfg.clone(),
            "--seed".into(),
            SEED.into(),
            "-o".into(),
            s(&out),
        ]);
        if args[0] == "mine-cues" {
            args.extend(["--set".into(), format!("data.bank={}", s(&fixture("miner/bank.tsv")))]);
        }
        let refs: Vec<&str> = args.iter().map(String::as_str).collect();
        ok(&refs);
        if out == head {
            fs::copy(head.join("head.json"), &head_file).unwrap();
        }
        dirs.push(out);
    }
    dirs
}

/// File names and bytes of every regular file in `dir`, sorted by name.
pub fn files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&p).unwrap(),
            )
        })
        .collect()
}

/// A result table with the trailing `digest` column removed.
pub fn without_digest(csv: &str) -> String {
    csv.lines()
        .map(|l| match l.rfind(',') {
            Some(i) => &l[..i],
            None => l,
        })
        .collect::<Vec<_>>()
        .join("\n")
        + "\n"
}

/// Header-keyed rows of a table without quoted fields.
pub fn rows(csv: &str) -> Vec<HashMap<String, String>> {
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap_or("").split(',').collect();
    lines
        .map(|l| {
            header
                .iter()
                .map(|h| h.to_string())
                .zip(l.split(',').map(str::to_string))
                .collect()
        })
        .collect()
}

/// Expected and complementary masses of one instance, before and after a
/// push along the subspace, recomputed from the raw weights.
#[derive(Debug, Clone)]
pub struct OracleShift {
    pub id: String,
    pub class: String,
    pub context_type: String,
    pub before: (f64, f64),
    pub after: (f64, f64),
}

fn aspect_tags(vocab_tsv: &str) -> HashMap<String, String> {
    vocab_tsv
        .lines()
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
        .filter_map(|l| {
            let c: Vec<&str> = l.split('\t').collect();
            (c.len() == 3 && c[1] == "aspect").then(|| (c[0].to_string(), c[2].to_string()))
        })
        .collect()
}

fn top_k_masses(oracle: &Oracle, dist: &[f64], tags: &HashMap<String, String>, k: usize) -> (f64, f64) {
    let mut order: Vec<usize> = (0..dist.len()).collect();
    order.sort_by(|&a, &b| dist[b].total_cmp(&dist[a]).then(a.cmp(&b)));
    let (mut perf, mut imp) = (0.0, 0.0);
    for &i in order.iter().take(k) {
        match tags.get(&oracle.vocab[i]).map(String::as_str) {
            Some("perf") => perf += dist[i],
            Some("imp") => imp += dist[i],
            _ => {}
        }
    }
    (perf, imp)
}

/// `P_N h - alpha * sum_i |w_i . h| w_i` with `P_N` the orthogonal projection
/// onto the complement of the span of the directions, computed through the
/// Gram matrix so the directions need not be orthonormal.
fn negative_push(h: &[f64], dirs: &[Vec<f64>], alpha: f64) -> Vec<f64> {
    let m = dirs.len();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let mut g: Vec<Vec<f64>> = (0..m)
        .map(|i| (0..m).map(|j| dot(&dirs[i], &dirs[j])).collect())
        .collect();
    let mut rhs: Vec<f64> = dirs.iter().map(|w| dot(w, h)).collect();
    // Gauss-Jordan on the small Gram system
    for c in 0..m {
        let p = g[c][c];
        g[c].iter_mut().for_each(|x| *x /= p);
        rhs[c] /= p;
        let pivot = g[c].clone();
        for r in (0..m).filter(|&r| r != c) {
            let f = g[r][c];
            for (x, pc) in g[r].iter_mut().zip(&pivot) {
                *x -= f * pc;
            }
            rhs[r] -= f * rhs[c];
        }
    }
    let mut out = h.to_vec();
    for (w, coef) in dirs.iter().zip(&rhs) {
        let c = dot(w, h).abs();
        for (o, x) in out.iter_mut().zip(w) {
            *o -= coef * x + alpha * c * x;
        }
    }
    out
}

/// Recomputes the negative push at `layer` (which must be the final layer)
/// for every toy instance with a valid target span, inference scoring over
/// the top `k` entries.
pub fn oracle_negative_shifts(layer: usize, k: usize) -> Vec<OracleShift> {
    let oracle = Oracle::load();
    assert_eq!(
        layer,
        oracle.n_layers(),
        "the recomputation reads out at the push layer"
    );
    let tags = aspect_tags(&fs::read_to_string(fixture("toy/vocab.tsv")).unwrap());
    let subspaces: Vec<Value> =
        serde_json::from_str(&fs::read_to_string(fixture("toy/subspace.json")).unwrap()).unwrap();
    let sub = subspaces
        .iter()
        .find(|s| s["layer"] == layer)
        .expect("subspace for the layer");
    let alpha = sub["alpha"].as_f64().unwrap();
    let dirs: Vec<Vec<f64>> = sub["directions"]
        .as_array()
        .unwrap()
        .iter()
        .map(|w| w.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect())
        .collect();

    let mut out = Vec::new();
    for line in fs::read_to_string(fixture("toy/instances.jsonl")).unwrap().lines() {
        let inst: Value = serde_json::from_str(line).unwrap();
        let text = inst["text"].as_str().unwrap();
        let chars: Vec<char> = text.chars().collect();
        let (a, b) = (
            inst["target_span"][0].as_u64().unwrap() as usize,
            inst["target_span"][1].as_u64().unwrap() as usize,
        );
        if b > chars.len() || chars[a..b].iter().collect::<String>() != inst["expected_form"].as_str().unwrap() {
            continue;
        }
        let left: String = chars[..a].iter().collect();
        let right: String = chars[b..].iter().collect();
        let mut toks = vec!["[CLS]".to_string()];
        toks.extend(left.split_whitespace().map(str::to_lowercase));
        let mask = toks.len();
        toks.push("[MASK]".into());
        toks.extend(right.split_whitespace().map(str::to_lowercase));
        toks.push("[SEP]".into());
        let refs: Vec<&str> = toks.iter().map(String::as_str).collect();
        let ids = oracle.ids(&refs);

        let h = oracle.states(&ids, None)[layer][mask].clone();
        let before = top_k_masses(&oracle, &oracle.head(&h), &tags, k);
        let pushed: Vec<f64> = negative_push(&h, &dirs, alpha)
            .into_iter()
            .map(|x| x as f32 as f64)
            .collect();
        let h_after = oracle.states(&ids, Some((layer, mask, &pushed)))[layer][mask].clone();
        let after = top_k_masses(&oracle, &oracle.head(&h_after), &tags, k);

        let expected = inst["expected_aspect"].as_str().unwrap().to_string();
        let orient = |(perf, imp): (f64, f64)| if expected == "perf" { (perf, imp) } else { (imp, perf) };
        let (before, after) = (orient(before), orient(after));
        out.push(OracleShift {
            id: inst["id"].as_str().unwrap().into(),
            class: expected,
            context_type: inst["context_type"].as_str().unwrap().into(),
            before,
            after,
        });
    }
    out
}
