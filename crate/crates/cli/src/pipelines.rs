// SPDX-License-Identifier: MIT OR Apache-2.0

//! One function per subcommand. Each loads its inputs, runs the core
//! pipeline and emits tables, figures and a manifest into `out_dir`.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::time::Duration;

use aspectprobe_core::backend::{BackendMeta, BridgeSession, MaskedLm, ToyMlm, LAYER_READOUT};
use aspectprobe_core::behavioral::{self, Method, Skipped, SweepParams};
use aspectprobe_core::causal::{self, Baseline, Intervention, Task};
use aspectprobe_core::classifier::{self, AspectHead, BackendScorer, DropoutScorer, HeadScorer, CLASSES};
use aspectprobe_core::cuemine::{self, ConlluReader, CueContext};
use aspectprobe_core::dataset::{self, DatasetSummary, ProbingInstance, Rejection};
use aspectprobe_core::lexicon::{default_russian_cues, AspectBank, CuePattern, VocabFeatureMap};
use aspectprobe_core::report::{self, check_run, tables, Cell, ExperimentReport, Manifest, Table};
use aspectprobe_core::subspace::{self, BoundednessSubspace, PushDirection};
use aspectprobe_core::types::ContextType;

use crate::config::{BackendKind, Config, Control, Directions, DropoutSource};
use crate::Failure;

type Outcome<T> = std::result::Result<T, Failure>;

/// Environment variable naming the bridge server when the config does not.
pub const BACKEND_URL_ENV: &str = "ASPECTPROBE_BACKEND_URL";

fn config_error(msg: impl Into<String>) -> Failure {
    Failure::Config(msg.into())
}

fn required<'a, T>(value: &'a Option<T>, path: &str) -> Outcome<&'a T> {
    value
        .as_ref()
        .ok_or_else(|| config_error(format!("{path} is required")))
}

fn open_backend(config: &Config) -> Outcome<(Box<dyn MaskedLm>, BackendMeta)> {
    let backend: Box<dyn MaskedLm> = match config.backend.kind {
        BackendKind::Toy => {
            let mut toy = ToyMlm::new();
            if let Some(rate) = config.backend.dropout_rate {
                if !(0.0..1.0).contains(&rate) {
                    return Err(config_error(format!(
                        "backend.dropout_rate must lie in [0,1), got {rate}"
                    )));
                }
                toy = toy.with_dropout_rate(rate);
            }
            Box::new(toy)
        }
        BackendKind::Bridge => {
            let url = match &config.backend.url {
                Some(u) => u.clone(),
                None => std::env::var(BACKEND_URL_ENV).map_err(|_| {
                    config_error(format!("backend.url or {BACKEND_URL_ENV} is required for the bridge"))
                })?,
            };
            Box::new(BridgeSession::connect_with_timeout(
                &url,
                config.seed,
                Duration::from_secs(config.backend.timeout_secs),
            )?)
        }
    };
    let meta = backend.meta()?;
    meta.validate()?;
    Ok((backend, meta))
}

/// Manifest over the configuration without `out_dir`, so that the digest
/// (and with it every CSV row) does not depend on where the run is written.
fn manifest(command: &str, config: &Config, meta: Option<&BackendMeta>) -> Manifest {
    let mut view = serde_json::to_value(config).expect("config serializes");
    if let Some(map) = view.as_object_mut() {
        map.remove("out_dir");
    }
    let mut m = Manifest::new(command, config.seed, &view);
    if let Some(meta) = meta {
        m.backend = Some(meta.clone());
        m.layer_readout = Some(LAYER_READOUT.into());
    }
    m
}

fn out_path(config: &Config, file: &str) -> Outcome<PathBuf> {
    std::fs::create_dir_all(&config.out_dir)
        .map_err(|e| Failure::Runtime(format!("{}: {e}", config.out_dir.display())))?;
    Ok(config.out_dir.join(file))
}

fn finish(config: &Config, report: &mut ExperimentReport) -> Outcome<Vec<PathBuf>> {
    if !config.figures {
        report.figures.clear();
    }
    Ok(report::emit(report, &config.out_dir)?)
}

fn check_layers(layers: &[usize], meta: &BackendMeta, what: &str) -> Outcome<()> {
    match layers.iter().find(|&&l| l > meta.n_layers) {
        Some(l) => Err(config_error(format!(
            "{what}: layer {l} out of range 0..={} for {}",
            meta.n_layers, meta.model_id
        ))),
        None => Ok(()),
    }
}

fn load_bank(config: &Config) -> Outcome<AspectBank> {
    Ok(AspectBank::load(required(&config.data.bank, "data.bank")?)?)
}

/// The vocabulary map, or an empty one when the pipeline can do without.
fn load_vocab(config: &Config, needed: bool) -> Outcome<VocabFeatureMap> {
    match &config.data.vocab {
        Some(p) => Ok(VocabFeatureMap::load(p)?),
        None if needed => Err(config_error("data.vocab is required for inference scoring")),
        None => Ok(VocabFeatureMap::default()),
    }
}

fn load_cues(path: Option<&PathBuf>) -> Outcome<Vec<CuePattern>> {
    match path {
        Some(p) => Ok(CuePattern::load_lexicon(p)?),
        None => Ok(default_russian_cues()),
    }
}

fn file_label(p: &Path) -> String {
    p.file_name()
        .map_or_else(|| p.display().to_string(), |n| n.to_string_lossy().into_owned())
}

struct Instances {
    instances: Vec<ProbingInstance>,
    rejected: Vec<(String, Rejection)>,
}

impl Instances {
    fn load(config: &Config, bank: &AspectBank) -> Outcome<Self> {
        if config.data.instances.is_empty() {
            return Err(config_error("data.instances is required"));
        }
        let mut out = Instances {
            instances: Vec::new(),
            rejected: Vec::new(),
        };
        for path in &config.data.instances {
            let loaded = dataset::load_instances(path, bank)?;
            out.instances.extend(loaded.instances);
            out.rejected
                .extend(loaded.rejected.into_iter().map(|r| (file_label(path), r)));
        }
        if out.instances.is_empty() {
            return Err(Failure::Runtime("no probing instance passed validation".into()));
        }
        Ok(out)
    }

    fn tables(&self, report: &mut ExperimentReport) {
        let mut rejected = Table::new("rejected", &["file", "line", "id", "reason", "detail"]);
        for (file, r) in &self.rejected {
            rejected.push(vec![
                file.as_str().into(),
                r.line.into(),
                r.id.as_deref().into(),
                r.reason.as_str().into(),
                r.detail.as_str().into(),
            ]);
        }
        let summary = DatasetSummary::of(&self.instances);
        let mut cells = Table::new("dataset", &["context_type", "aspect", "n"]);
        for c in &summary.cells {
            cells.push(vec![
                c.context_type.as_str().into(),
                c.aspect.as_str().into(),
                c.n.into(),
            ]);
        }
        report.table(cells).table(rejected);
    }
}

fn skipped_table(rows: &[Skipped]) -> Table {
    tables::skipped("skipped", rows)
}

/// `probe-behavioral`: layer sweep, per-instance outcomes and difference
/// quartiles, plus the complete-verb profile when configured.
pub fn probe_behavioral(config: &Config) -> Outcome<Vec<PathBuf>> {
    let b = &config.behavioral;
    let bank = load_bank(config)?;
    let vocab = load_vocab(config, b.method == Method::Inference || !b.complete_k.is_empty())?;
    let data = Instances::load(config, &bank)?;
    let (backend, meta) = open_backend(config)?;
    let layers = if b.layers.is_empty() {
        meta.all_layers()
    } else {
        b.layers.clone()
    };
    check_layers(&layers, &meta, "behavioral.layers")?;
    if b.method == Method::Inference && b.k == 0 {
        return Err(config_error("behavioral.k must be at least 1"));
    }
    let params = SweepParams {
        method: b.method,
        layers: layers.clone(),
        k: b.k,
    };
    let sweep = behavioral::layer_sweep(&*backend, &data.instances, &params, &vocab)?;
    let mut report = ExperimentReport::new(manifest("probe-behavioral", config, Some(&meta)));
    report
        .table(tables::layer_sweep("layer_sweep", &sweep.rows))
        .table(tables::instance_outcomes("instance_outcomes", &sweep.outcomes))
        .table(tables::differences(
            "differences",
            &behavioral::difference_stats(&sweep.outcomes),
        ))
        .table(skipped_table(&sweep.skipped));
    if !b.complete_k.is_empty() {
        let rows = behavioral::complete_verb_profile(&*backend, &data.instances, &vocab, &b.complete_k, &layers)?;
        report.table(tables::complete_verbs("complete_verbs", &rows));
    }
    data.tables(&mut report);
    report.figure(tables::layer_sweep_figure(
        "layer_sweep",
        &format!("{} accuracy by layer", b.method.as_str()),
        &sweep.rows,
    ));
    if !sweep.skipped.is_empty() {
        report
            .manifest
            .warnings
            .push(format!("{} instances skipped", sweep.skipped.len()));
    }
    finish(config, &mut report)
}

/// `train-inlp`: one boundedness subspace per layer, written as a JSON array.
pub fn train_inlp(config: &Config) -> Outcome<Vec<PathBuf>> {
    let loaded = dataset::load_boundedness(required(&config.data.boundedness, "data.boundedness")?)?;
    if loaded.instances.is_empty() {
        return Err(Failure::Runtime("no boundedness instance passed validation".into()));
    }
    let (backend, meta) = open_backend(config)?;
    let layers = if config.inlp.layers.is_empty() {
        vec![meta.n_layers]
    } else {
        config.inlp.layers.clone()
    };
    check_layers(&layers, &meta, "inlp.layers")?;
    let mut report = ExperimentReport::new(manifest("train-inlp", config, Some(&meta)));
    report.manifest.warnings.extend(loaded.warnings.iter().cloned());
    let digest = report.manifest.config_digest.clone();

    let mut rounds = Table::new("inlp_rounds", &["layer", "round", "accuracy", "epochs"]);
    let mut summary = Table::new(
        "inlp_layers",
        &[
            "layer",
            "n_features",
            "skipped",
            "requested_m",
            "m",
            "guard_accuracy",
            "majority_rate",
        ],
    );
    let mut subspaces: Vec<BoundednessSubspace> = Vec::new();
    for &layer in &layers {
        let (mut out, features) = subspace::train_inlp(&*backend, &loaded.instances, layer, &config.inlp.params)?;
        out.subspace.provenance.config_digest = digest.clone();
        rounds.rows.extend(tables::inlp_rounds("inlp_rounds", &out).rows);
        let p = &out.subspace.provenance;
        summary.push(vec![
            layer.into(),
            features.rows.len().into(),
            features.skipped.len().into(),
            p.requested_m.into(),
            out.subspace.m().into(),
            p.guard_accuracy.into(),
            p.majority_rate.into(),
        ]);
        report
            .manifest
            .warnings
            .extend(out.warnings.iter().map(|w| format!("layer {layer}: {w}")));
        subspaces.push(out.subspace);
    }
    let file = config.inlp.output.clone();
    let path = out_path(config, &file)?;
    let json = serde_json::to_string_pretty(&subspaces).expect("subspaces serialize") + "\n";
    std::fs::write(&path, json).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))?;
    report.manifest.files.push(file);

    let mut rejected = Table::new("rejected", &["line", "id", "reason", "detail"]);
    for r in &loaded.rejected {
        rejected.push(vec![
            r.line.into(),
            r.id.as_deref().into(),
            r.reason.as_str().into(),
            r.detail.as_str().into(),
        ]);
    }
    report.table(rounds).table(summary).table(rejected);
    let mut written = finish(config, &mut report)?;
    written.insert(0, path);
    Ok(written)
}

fn directions(d: Directions) -> Vec<PushDirection> {
    match d {
        Directions::Positive => vec![PushDirection::Positive],
        Directions::Negative => vec![PushDirection::Negative],
        Directions::Both => vec![PushDirection::Negative, PushDirection::Positive],
    }
}

fn subspace_at(subspaces: &[BoundednessSubspace], layer: usize) -> Outcome<&BoundednessSubspace> {
    subspaces
        .iter()
        .find(|s| s.layer == layer)
        .ok_or_else(|| config_error(format!("the subspace file has no subspace for layer {layer}")))
}

/// `probe-causal`: trained-subspace pushes at each layer, plus the
/// configured control.
pub fn probe_causal(config: &Config) -> Outcome<Vec<PathBuf>> {
    let c = &config.causal;
    let subspaces = match &c.subspace_file {
        Some(p) => Some(BoundednessSubspace::load_all(p)?),
        None => None,
    };
    let needs_trained = subspaces.is_none() && !matches!(c.control, Some(Control::Identity | Control::Random));
    if needs_trained {
        return Err(config_error(
            "causal.subspace_file is required unless the control is identity or random",
        ));
    }
    let layers: Vec<usize> = if !c.layers.is_empty() {
        c.layers.clone()
    } else if let Some(s) = &subspaces {
        let mut l: Vec<usize> = s.iter().map(|s| s.layer).collect();
        l.sort_unstable();
        l.dedup();
        l
    } else {
        return Err(config_error("causal.layers is required without a subspace file"));
    };
    if let Some(s) = &subspaces {
        for &layer in &layers {
            subspace_at(s, layer)?;
        }
    }
    let uses_tags = c.params.method == Method::Inference || c.control == Some(Control::Number);
    let bank = load_bank(config)?;
    let vocab = load_vocab(config, uses_tags)?;
    let data = Instances::load(config, &bank)?;
    let (backend, meta) = open_backend(config)?;
    check_layers(&layers, &meta, "causal.layers")?;
    let backend = &*backend;

    let mut report = ExperimentReport::new(manifest("probe-causal", config, Some(&meta)));
    let baseline = Baseline::compute(backend, &data.instances, &vocab, &c.params)?;
    let mut skipped = baseline.skipped.clone();
    let mut shifts = Vec::new();
    let task = c.params.task.as_str();

    if let Some(subspaces) = &subspaces {
        for direction in directions(c.direction) {
            let mut rows = Vec::new();
            let mut per_instance = Vec::new();
            for &layer in &layers {
                let intervention = Intervention::Push {
                    subspace: subspace_at(subspaces, layer)?,
                    direction,
                };
                let res = causal::run_intervention(backend, &baseline, &intervention, layer)?;
                rows.extend(res.rows);
                per_instance.extend(res.instances);
                skipped.extend(res.skipped);
            }
            let name = direction.as_str();
            report.table(tables::instance_shifts(
                &format!("instance_shifts_{name}"),
                name,
                &per_instance,
            ));
            report.figure(tables::shift_figure(
                &format!("shifts_{name}"),
                &format!("{task} accuracy under the {name} push"),
                &rows,
            ));
            shifts.extend(rows);
        }
    }

    match c.control {
        None => {}
        Some(Control::Identity) => {
            let mut per_instance = Vec::new();
            for &layer in &layers {
                let res = causal::run_intervention(backend, &baseline, &Intervention::Identity, layer)?;
                shifts.extend(res.rows);
                per_instance.extend(res.instances);
                skipped.extend(res.skipped);
            }
            report.table(tables::instance_shifts(
                "instance_shifts_identity",
                "identity",
                &per_instance,
            ));
        }
        Some(Control::Random) => {
            let mut results = Vec::new();
            for &layer in &layers {
                let (res, _) = causal::random_control(backend, &baseline, layer, &c.random)?;
                results.extend(res);
            }
            for r in &results {
                shifts.extend(r.rows.iter().cloned());
                skipped.extend(r.skipped.iter().cloned());
            }
            let summary = causal::summarize_random(&results, c.params.task);
            report.table(tables::random_summary("random_summary", &summary));
        }
        Some(Control::Number) => {
            let subspaces = subspaces.as_ref().expect("checked above");
            let mut number_config = c.params.clone();
            number_config.task = Task::Number;
            number_config.method = Method::Inference;
            let number_baseline = Baseline::compute(backend, &data.instances, &vocab, &number_config)?;
            skipped.extend(number_baseline.skipped.iter().cloned());
            for direction in directions(c.direction) {
                for &layer in &layers {
                    let intervention = Intervention::Push {
                        subspace: subspace_at(subspaces, layer)?,
                        direction,
                    };
                    let res = causal::run_intervention(backend, &number_baseline, &intervention, layer)?;
                    shifts.extend(res.rows);
                    skipped.extend(res.skipped);
                }
            }
        }
    }

    report
        .table(tables::shifts("shifts", &shifts))
        .table(skipped_table(&skipped));
    data.tables(&mut report);
    finish(config, &mut report)
}

/// `mine-cues`: boundedness instances from CoNLL-U files, as JSONL.
pub fn mine_cues(config: &Config) -> Outcome<Vec<PathBuf>> {
    let m = &config.mine;
    if m.corpus.is_empty() {
        return Err(config_error("mine.corpus is required"));
    }
    let bank = load_bank(config)?;
    let patterns = load_cues(m.patterns.as_ref())?;
    let mut exclude = HashSet::new();
    for p in &m.exclude_texts {
        let f = File::open(p).map_err(|e| Failure::Runtime(format!("{}: {e}", p.display())))?;
        exclude.extend(cuemine::read_exclude_texts(BufReader::new(f), p)?);
    }
    let mut readers = Vec::with_capacity(m.corpus.len());
    for p in &m.corpus {
        let f = File::open(p).map_err(|e| Failure::Runtime(format!("{}: {e}", p.display())))?;
        readers.push(ConlluReader::new(BufReader::new(f)));
    }
    let result = cuemine::mine(readers.into_iter().flatten(), &patterns, &bank, &exclude, &m.params);

    let mut report = ExperimentReport::new(manifest("mine-cues", config, None));
    let path = out_path(config, &m.output)?;
    dataset::write_jsonl(&path, &result.instances)?;
    report.manifest.files.push(m.output.clone());
    if result.instances.is_empty() {
        report.manifest.warnings.push("no instance was mined".into());
    }
    let mut skipped = Table::new("skipped_sentences", &["line", "sent_id", "reason"]);
    for s in &result.skipped {
        skipped.push(vec![
            s.line.into(),
            s.sent_id.as_deref().into(),
            s.reason.as_str().into(),
        ]);
    }
    report
        .table(tables::mine_stats("mine_stats", &result.stats))
        .table(skipped);
    let mut written = finish(config, &mut report)?;
    written.insert(0, path);
    Ok(written)
}

/// `train-head`: the linear aspect head on mask-position features.
pub fn train_head(config: &Config) -> Outcome<Vec<PathBuf>> {
    let bank = load_bank(config)?;
    let data = Instances::load(config, &bank)?;
    let (backend, meta) = open_backend(config)?;
    let layer = config.head.layer.unwrap_or(meta.n_layers);
    check_layers(&[layer], &meta, "head.layer")?;
    let features = classifier::mask_features(&*backend, &data.instances, layer)?;
    let mut head = classifier::train_head(&features.rows, &features.labels, layer, &config.head.params)?;

    let mut report = ExperimentReport::new(manifest("train-head", config, Some(&meta)));
    head.provenance.config_digest = report.manifest.config_digest.clone();
    let path = out_path(config, "head.json")?;
    head.save(&path)?;
    report.manifest.files.push("head.json".into());

    let p = &head.provenance;
    let mut t = Table::new(
        "head_training",
        &[
            "layer",
            "n_train",
            "n_validation",
            "train_accuracy",
            "validation_accuracy",
            "skipped",
        ],
    );
    t.push(vec![
        layer.into(),
        p.n_train.into(),
        p.n_validation.into(),
        p.train_accuracy.into(),
        p.validation_accuracy.into(),
        features.skipped.len().into(),
    ]);
    report.table(t).table(skipped_table(&features.skipped));
    data.tables(&mut report);
    let mut written = finish(config, &mut report)?;
    written.insert(0, path);
    Ok(written)
}

/// `eval-head`: F0.5 per class and context type, and MC-dropout variance.
pub fn eval_head(config: &Config) -> Outcome<Vec<PathBuf>> {
    let h = &config.head;
    let head = AspectHead::load(required(&h.model, "head.model")?)?;
    let bank = load_bank(config)?;
    let vocab = load_vocab(config, h.mc_samples > 0 && h.dropout_source == DropoutSource::Backend)?;
    let data = Instances::load(config, &bank)?;
    let (backend, meta) = open_backend(config)?;
    check_layers(&[head.layer], &meta, "head layer")?;
    if head.dim() != meta.hidden_size {
        return Err(config_error(format!(
            "head expects {} features, backend hidden size is {}",
            head.dim(),
            meta.hidden_size
        )));
    }
    let features = classifier::mask_features(&*backend, &data.instances, head.layer)?;
    let eval = classifier::evaluate_head(&head, &features)?;

    let mut report = ExperimentReport::new(manifest("eval-head", config, Some(&meta)));
    let mut confusion = Table::new("confusion", &["context_type", "gold", "predicted", "count"]);
    for (ct, conf) in &eval.confusion {
        for (g, gold) in CLASSES.iter().enumerate() {
            for (p, pred) in CLASSES.iter().enumerate() {
                confusion.push(vec![
                    ct.map_or("all", ContextType::as_str).into(),
                    gold.as_str().into(),
                    pred.as_str().into(),
                    conf.counts[g][p].into(),
                ]);
            }
        }
    }
    report.table(tables::f_half("f_half", &eval.rows)).table(confusion);

    if h.mc_samples > 0 {
        let items: Vec<(String, ContextType)> = features
            .ids
            .iter()
            .cloned()
            .zip(features.context_types.iter().copied())
            .collect();
        let head_scorer;
        let backend_scorer;
        let scorer: &dyn DropoutScorer = match h.dropout_source {
            DropoutSource::Head => {
                head_scorer = HeadScorer {
                    head: &head,
                    rows: &features.rows,
                };
                &head_scorer
            }
            DropoutSource::Backend => {
                backend_scorer = BackendScorer::new(&*backend, &features.encoded, &vocab)?;
                &backend_scorer
            }
        };
        let estimate = classifier::mc_dropout(scorer, &items, h.mc_samples, h.params.seed)?;
        report
            .table(tables::uncertainty("uncertainty", &estimate.rows))
            .table(tables::instance_uncertainty(
                "instance_uncertainty",
                &estimate.instances,
            ));
    }
    report.table(skipped_table(&features.skipped));
    finish(config, &mut report)
}

/// `cue-stats`: cue categories and cue-less shares of probing contexts,
/// optionally split by behavioral outcome, and of mined instances.
pub fn cue_stats(config: &Config) -> Outcome<Vec<PathBuf>> {
    let s = &config.cue_stats;
    if config.data.instances.is_empty() && s.boundedness.is_empty() {
        return Err(config_error("data.instances or cue_stats.boundedness is required"));
    }
    let patterns = load_cues(config.data.cues.as_ref())?;
    let mut meta = None;
    let mut report_tables = Vec::new();
    let mut warnings = Vec::new();
    if !config.data.instances.is_empty() {
        let bank = load_bank(config)?;
        let data = Instances::load(config, &bank)?;
        let mut contexts: Vec<CueContext> = data
            .instances
            .iter()
            .map(|i| CueContext::from_probing(i, None))
            .collect();
        if s.with_outcomes {
            let b = &config.behavioral;
            let vocab = load_vocab(config, b.method == Method::Inference)?;
            let (backend, m) = open_backend(config)?;
            let layer = s.layer.unwrap_or(m.n_layers);
            check_layers(&[layer], &m, "cue_stats.layer")?;
            let params = SweepParams {
                method: b.method,
                layers: vec![layer],
                k: b.k,
            };
            let sweep = behavioral::layer_sweep(&*backend, &data.instances, &params, &vocab)?;
            let outcomes: BTreeMap<&str, _> = sweep.outcomes.iter().map(|o| (o.id.as_str(), o.outcome)).collect();
            for ctx in &mut contexts {
                ctx.outcome = outcomes.get(ctx.id.as_str()).copied();
            }
            if !sweep.skipped.is_empty() {
                warnings.push(format!(
                    "{} instances skipped by the outcome sweep",
                    sweep.skipped.len()
                ));
            }
            meta = Some(m);
        }
        report_tables.push(tables::cue_stats(
            "cue_stats",
            &cuemine::cue_statistics(&contexts, &patterns),
        ));
    }
    if !s.boundedness.is_empty() {
        let mut contexts = Vec::new();
        for p in &s.boundedness {
            let loaded = dataset::load_boundedness(p)?;
            contexts.extend(loaded.instances.iter().map(CueContext::from_boundedness));
        }
        report_tables.push(tables::cue_stats(
            "cue_stats_boundedness",
            &cuemine::cue_statistics(&contexts, &patterns),
        ));
    }
    let mut report = ExperimentReport::new(manifest("cue-stats", config, meta.as_ref()));
    report.manifest.warnings.extend(warnings);
    for t in report_tables {
        report.table(t);
    }
    finish(config, &mut report)
}

/// `report`: checks each run directory against its manifest and writes an
/// index. Fails (after writing the index) when any run has problems.
pub fn report(config: &Config) -> Outcome<Vec<PathBuf>> {
    let inputs = &config.report.inputs;
    if inputs.is_empty() {
        return Err(config_error("report.inputs is required"));
    }
    let mut runs = Table::new(
        "runs",
        &[
            "run",
            "command",
            "seed",
            "config_digest",
            "tables",
            "figures",
            "warnings",
            "problems",
        ],
    );
    let mut problems = Table::new("problems", &["run", "problem"]);
    for dir in inputs {
        let label = dir.display().to_string();
        match check_run(dir) {
            Ok(check) => {
                let m = &check.manifest;
                runs.push(vec![
                    label.as_str().into(),
                    m.command.as_str().into(),
                    m.seed.into(),
                    m.config_digest.as_str().into(),
                    m.tables.len().into(),
                    m.figures.len().into(),
                    m.warnings.len().into(),
                    check.problems.len().into(),
                ]);
                for p in &check.problems {
                    problems.push(vec![label.as_str().into(), p.as_str().into()]);
                }
            }
            Err(e) => {
                runs.push(vec![
                    label.as_str().into(),
                    Cell::Missing,
                    Cell::Missing,
                    Cell::Missing,
                    Cell::Missing,
                    Cell::Missing,
                    Cell::Missing,
                    1usize.into(),
                ]);
                problems.push(vec![label.as_str().into(), e.to_string().into()]);
            }
        }
    }
    let n_problems = problems.rows.len();
    let mut report = ExperimentReport::new(manifest("report", config, None));
    report.table(runs).table(problems);
    let written = finish(config, &mut report)?;
    if n_problems > 0 {
        return Err(Failure::Runtime(format!(
            "{n_problems} problem(s) found; see {}",
            config.out_dir.join("problems.csv").display()
        )));
    }
    Ok(written)
}
