// SPDX-License-Identifier: MIT OR Apache-2.0

//! Run configuration: one JSON file, overridable field by field.

use std::path::{Path, PathBuf};

use aspectprobe_core::behavioral::Method;
use aspectprobe_core::causal::{CausalConfig, RandomControl};
use aspectprobe_core::classifier::HeadParams;
use aspectprobe_core::cuemine::MineConfig;
use aspectprobe_core::subspace::InlpConfig;
use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Which backend to open.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    /// Built-in toy model.
    Toy,
    /// Wire-protocol server.
    Bridge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    pub kind: BackendKind,
    /// Bridge address; falls back to `ASPECTPROBE_BACKEND_URL`.
    pub url: Option<String>,
    /// Toy-model dropout rate used by backend MC sampling.
    pub dropout_rate: Option<f64>,
    /// Per-request timeout of the bridge client.
    pub timeout_secs: u64,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            kind: BackendKind::Toy,
            url: None,
            dropout_rate: None,
            timeout_secs: 600,
        }
    }
}

/// Input files. Relative paths resolve against the config file's directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub bank: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
    pub cues: Option<PathBuf>,
    pub instances: Vec<PathBuf>,
    pub boundedness: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BehavioralConfig {
    pub method: Method,
    pub k: usize,
    /// Layers to read; empty means all.
    pub layers: Vec<usize>,
    /// Top-k sizes of the complete-verb profile; empty skips it.
    pub complete_k: Vec<usize>,
}

impl Default for BehavioralConfig {
    fn default() -> Self {
        BehavioralConfig {
            method: Method::Inference,
            k: 12000,
            layers: Vec::new(),
            complete_k: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InlpSection {
    /// Layers to train a subspace at; empty means the final layer.
    pub layers: Vec<usize>,
    #[serde(flatten)]
    pub params: InlpConfig,
    /// Output file name inside the run directory.
    pub output: String,
}

impl Default for InlpSection {
    fn default() -> Self {
        InlpSection {
            layers: Vec::new(),
            params: InlpConfig::default(),
            output: "subspace.json".into(),
        }
    }
}

/// Control experiment run next to (or instead of) the trained push.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Control {
    Identity,
    Random,
    Number,
}

/// Push direction(s) of the trained-subspace intervention.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Directions {
    Positive,
    Negative,
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CausalSection {
    /// Intervention layers; empty means every layer that has a subspace.
    pub layers: Vec<usize>,
    pub direction: Directions,
    pub subspace_file: Option<PathBuf>,
    pub control: Option<Control>,
    #[serde(flatten)]
    pub params: CausalConfig,
    pub random: RandomControl,
}

impl Default for CausalSection {
    fn default() -> Self {
        CausalSection {
            layers: Vec::new(),
            direction: Directions::Both,
            subspace_file: None,
            control: None,
            params: CausalConfig::default(),
            random: RandomControl::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MineSection {
    pub corpus: Vec<PathBuf>,
    /// Cue lexicon; the bundled Russian list when absent.
    pub patterns: Option<PathBuf>,
    pub exclude_texts: Vec<PathBuf>,
    #[serde(flatten)]
    pub params: MineConfig,
    pub output: String,
}

impl Default for MineSection {
    fn default() -> Self {
        MineSection {
            corpus: Vec::new(),
            patterns: None,
            exclude_texts: Vec::new(),
            params: MineConfig::default(),
            output: "boundedness.jsonl".into(),
        }
    }
}

/// Source of MC-dropout samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DropoutSource {
    Head,
    Backend,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeadSection {
    /// Feature layer; the final layer when absent.
    pub layer: Option<usize>,
    #[serde(flatten)]
    pub params: HeadParams,
    /// Trained head: written by `train-head`, read by `eval-head`.
    pub model: Option<PathBuf>,
    pub mc_samples: usize,
    pub dropout_source: DropoutSource,
}

impl Default for HeadSection {
    fn default() -> Self {
        HeadSection {
            layer: None,
            params: HeadParams::default(),
            model: None,
            mc_samples: 20,
            dropout_source: DropoutSource::Head,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CueStatsSection {
    /// Score instances with the behavioral settings to split by outcome.
    pub with_outcomes: bool,
    /// Layer of the outcome split; the final layer when absent.
    pub layer: Option<usize>,
    /// Mined boundedness files to scan as well.
    pub boundedness: Vec<PathBuf>,
}

impl Default for CueStatsSection {
    fn default() -> Self {
        CueStatsSection {
            with_outcomes: true,
            layer: None,
            boundedness: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReportSection {
    /// Run directories to collect.
    pub inputs: Vec<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Emit SVG charts next to the tables.
    pub figures: bool,
    pub backend: BackendConfig,
    pub data: DataConfig,
    pub behavioral: BehavioralConfig,
    pub inlp: InlpSection,
    pub causal: CausalSection,
    pub mine: MineSection,
    pub head: HeadSection,
    pub cue_stats: CueStatsSection,
    pub report: ReportSection,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            seed: 0,
            out_dir: PathBuf::from("out"),
            figures: true,
            backend: BackendConfig::default(),
            data: DataConfig::default(),
            behavioral: BehavioralConfig::default(),
            inlp: InlpSection::default(),
            causal: CausalSection::default(),
            mine: MineSection::default(),
            head: HeadSection::default(),
            cue_stats: CueStatsSection::default(),
            report: ReportSection::default(),
        }
    }
}

/// Parses an override value: JSON when it parses as JSON, a string otherwise.
pub fn parse_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

/// Sets `path` (dot separated) in `root`, creating objects on the way.
pub fn set_path(root: &mut Value, path: &str, value: Value) -> Result<(), String> {
    let mut cur = root;
    let parts: Vec<&str> = path.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(format!("invalid config path {path:?}"));
    }
    for (i, part) in parts.iter().enumerate() {
        let Value::Object(map) = cur else {
            return Err(format!(
                "config path {path:?}: {} is not an object",
                parts[..i].join(".")
            ));
        };
        if i + 1 == parts.len() {
            map.insert(part.to_string(), value);
            return Ok(());
        }
        cur = map
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!("non-empty path")
}

/// Recursively overlays `top` onto `base`.
fn merge(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Builds the effective configuration from an optional file and ordered
/// `(path, value)` overrides. File-relative paths are made absolute.
pub fn resolve(file: Option<&Path>, overrides: &[(String, Value)]) -> Result<Config, String> {
    let mut root = serde_json::to_value(Config::default()).expect("default config serializes");
    let mut base_dir = None;
    if let Some(path) = file {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let value: Value = serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        if !value.is_object() {
            return Err(format!("{}: top level must be an object", path.display()));
        }
        merge(&mut root, value);
        base_dir = path.parent().map(Path::to_path_buf);
    }
    for (path, value) in overrides {
        set_path(&mut root, path, value.clone())?;
    }
    let mut config: Config = serde_json::from_value(root.clone()).map_err(|e| format!("config: {e}"))?;
    let known = serde_json::to_value(&config).expect("config serializes");
    let mut unknown = Vec::new();
    unknown_keys(&root, &known, "", &mut unknown);
    if !unknown.is_empty() {
        return Err(format!("config: unknown field(s) {}", unknown.join(", ")));
    }
    if let Some(dir) = base_dir {
        config.rebase(&dir);
    }
    Ok(config)
}

/// Keys of `given` that do not survive a round trip through [`Config`].
fn unknown_keys(given: &Value, known: &Value, prefix: &str, out: &mut Vec<String>) {
    let (Value::Object(g), Value::Object(k)) = (given, known) else {
        return;
    };
    for (key, value) in g {
        let path = if prefix.is_empty() {
            key.clone()
        } else {
            format!("{prefix}.{key}")
        };
        match k.get(key) {
            Some(inner) => unknown_keys(value, inner, &path, out),
            None => out.push(path),
        }
    }
}

fn rebase_one(dir: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = dir.join(&*p);
    }
}

impl Config {
    /// Resolves relative input paths against `dir`.
    fn rebase(&mut self, dir: &Path) {
        let d = &mut self.data;
        for p in [&mut d.bank, &mut d.vocab, &mut d.cues, &mut d.boundedness]
            .into_iter()
            .flatten()
        {
            rebase_one(dir, p);
        }
        for p in d
            .instances
            .iter_mut()
            .chain(&mut self.mine.corpus)
            .chain(&mut self.mine.exclude_texts)
            .chain(&mut self.cue_stats.boundedness)
            .chain(&mut self.report.inputs)
        {
            rebase_one(dir, p);
        }
        for p in [
            &mut self.causal.subspace_file,
            &mut self.mine.patterns,
            &mut self.head.model,
        ]
        .into_iter()
        .flatten()
        {
            rebase_one(dir, p);
        }
    }
}
