// SPDX-License-Identifier: MIT OR Apache-2.0

//! Conversions from pipeline results to [`Table`]s and figures.

use std::collections::BTreeMap;

use super::svg::{line_chart, Series};
use super::{Cell, Figure, Table};
use crate::behavioral::{AccuracyRow, CompleteVerbRow, DifferenceRow, InstanceOutcome, Skipped};
use crate::causal::{InstanceShift, RandomSummaryRow, ShiftRow};
use crate::classifier::{FHalfRow, InstanceUncertainty, UncertaintyRow};
use crate::cuemine::{CueStatsRow, MineStats};
use crate::lexicon::CueCategory;
use crate::subspace::InlpOutcome;
use crate::types::ContextType;

fn opt_str<T: AsRef<str>>(v: Option<T>, none: &str) -> Cell {
    Cell::Text(v.map_or_else(|| none.to_string(), |s| s.as_ref().to_string()))
}

/// `layer,aspect,context_type,accuracy,tie_rate,n`; pooled aspect is `all`.
pub fn layer_sweep(name: &str, rows: &[AccuracyRow]) -> Table {
    let mut t = Table::new(name, &["layer", "aspect", "context_type", "accuracy", "tie_rate", "n"]);
    for r in rows {
        t.push(vec![
            r.layer.into(),
            opt_str(r.aspect.map(|a| a.as_str()), "all"),
            r.context_type.as_str().into(),
            r.accuracy.into(),
            r.tie_rate.into(),
            r.n.into(),
        ]);
    }
    t
}

/// Per-instance scores of a sweep.
pub fn instance_outcomes(name: &str, rows: &[InstanceOutcome]) -> Table {
    let mut t = Table::new(
        name,
        &[
            "id",
            "layer",
            "context_type",
            "aspect",
            "score_expected",
            "score_complementary",
            "outcome",
        ],
    );
    for r in rows {
        t.push(vec![
            r.id.as_str().into(),
            r.layer.into(),
            r.context_type.as_str().into(),
            r.aspect.as_str().into(),
            r.score_expected.into(),
            r.score_complementary.into(),
            r.outcome.as_str().into(),
        ]);
    }
    t
}

/// Quartiles of the expected-minus-complementary differences.
pub fn differences(name: &str, rows: &[DifferenceRow]) -> Table {
    let mut t = Table::new(
        name,
        &["layer", "context_type", "n", "min", "q1", "median", "q3", "max", "mean"],
    );
    for r in rows {
        let q = &r.stats;
        t.push(vec![
            r.layer.into(),
            r.context_type.as_str().into(),
            q.n.into(),
            q.min.into(),
            q.q1.into(),
            q.median.into(),
            q.q3.into(),
            q.max.into(),
            q.mean.into(),
        ]);
    }
    t
}

/// Share of tagged complete verbs among the top-k.
pub fn complete_verbs(name: &str, rows: &[CompleteVerbRow]) -> Table {
    let mut t = Table::new(name, &["k", "layer", "n", "complete", "perf", "imp"]);
    for r in rows {
        t.push(vec![
            r.k.into(),
            r.layer.into(),
            r.n.into(),
            r.complete.into(),
            r.perf.into(),
            r.imp.into(),
        ]);
    }
    t
}

/// Skipped instances.
pub fn skipped(name: &str, rows: &[Skipped]) -> Table {
    let mut t = Table::new(name, &["id", "reason"]);
    for r in rows {
        t.push(vec![r.id.as_str().into(), r.reason.as_str().into()]);
    }
    t
}

/// Accuracy before and after interventions.
pub fn shifts(name: &str, rows: &[ShiftRow]) -> Table {
    let mut t = Table::new(
        name,
        &[
            "layer",
            "intervention",
            "subspace_seed",
            "task",
            "class",
            "context_type",
            "n",
            "before",
            "after",
            "shift",
            "shift_lo",
            "shift_hi",
        ],
    );
    for r in rows {
        t.push(vec![
            r.layer.into(),
            r.intervention.as_str().into(),
            r.subspace_seed.into(),
            r.task.as_str().into(),
            r.class.as_str().into(),
            r.context_type.as_str().into(),
            r.n.into(),
            r.before.into(),
            r.after.into(),
            r.shift.into(),
            r.shift_lo.into(),
            r.shift_hi.into(),
        ]);
    }
    t
}

/// Per-instance scores before and after interventions.
pub fn instance_shifts(name: &str, intervention: &str, rows: &[InstanceShift]) -> Table {
    let mut t = Table::new(
        name,
        &[
            "id",
            "layer",
            "intervention",
            "context_type",
            "class",
            "expected_before",
            "complementary_before",
            "expected_after",
            "complementary_after",
            "outcome_before",
            "outcome_after",
        ],
    );
    for r in rows {
        t.push(vec![
            r.id.as_str().into(),
            r.layer.into(),
            intervention.into(),
            r.context_type.as_str().into(),
            r.class.as_str().into(),
            r.expected_before.into(),
            r.complementary_before.into(),
            r.expected_after.into(),
            r.complementary_after.into(),
            r.before.as_str().into(),
            r.after.as_str().into(),
        ]);
    }
    t
}

/// Spread of random-subspace shifts.
pub fn random_summary(name: &str, rows: &[RandomSummaryRow]) -> Table {
    let mut t = Table::new(
        name,
        &[
            "layer",
            "task",
            "class",
            "context_type",
            "n_subspaces",
            "mean_shift",
            "sd_shift",
            "mean_abs_shift",
            "min_shift",
            "max_shift",
        ],
    );
    for r in rows {
        t.push(vec![
            r.layer.into(),
            r.task.as_str().into(),
            r.class.as_str().into(),
            r.context_type.as_str().into(),
            r.n_subspaces.into(),
            r.mean_shift.into(),
            r.sd_shift.into(),
            r.mean_abs_shift.into(),
            r.min_shift.into(),
            r.max_shift.into(),
        ]);
    }
    t
}

/// Per-round INLP classifier accuracies.
pub fn inlp_rounds(name: &str, outcome: &InlpOutcome) -> Table {
    let mut t = Table::new(name, &["layer", "round", "accuracy", "epochs"]);
    let s = &outcome.subspace;
    for (i, acc) in s.classifier_accuracies.iter().enumerate() {
        let epochs = outcome.classifiers.get(i).map(|c| c.epochs);
        t.push(vec![s.layer.into(), (i + 1).into(), (*acc).into(), epochs.into()]);
    }
    t
}

/// Per-class F0.5; pooled context type is `all`.
pub fn f_half(name: &str, rows: &[FHalfRow]) -> Table {
    let mut t = Table::new(
        name,
        &[
            "context_type",
            "class",
            "support",
            "precision",
            "recall",
            "f_half",
            "undefined",
        ],
    );
    for r in rows {
        t.push(vec![
            opt_str(r.context_type.map(|c| c.as_str()), "all"),
            r.class.as_str().into(),
            r.score.support.into(),
            r.score.precision.into(),
            r.score.recall.into(),
            r.score.f_half.into(),
            r.score.undefined.into(),
        ]);
    }
    t
}

/// Mean MC-dropout variance per context type.
pub fn uncertainty(name: &str, rows: &[UncertaintyRow]) -> Table {
    let mut t = Table::new(name, &["context_type", "n", "mean_variance_perf", "mean_variance_imp"]);
    for r in rows {
        t.push(vec![
            r.context_type.as_str().into(),
            r.n.into(),
            r.mean_variance_perf.into(),
            r.mean_variance_imp.into(),
        ]);
    }
    t
}

/// Per-instance MC-dropout statistics.
pub fn instance_uncertainty(name: &str, rows: &[InstanceUncertainty]) -> Table {
    let mut t = Table::new(
        name,
        &[
            "id",
            "context_type",
            "mean_perf",
            "mean_imp",
            "variance_perf",
            "variance_imp",
        ],
    );
    for r in rows {
        t.push(vec![
            r.id.as_str().into(),
            r.context_type.as_str().into(),
            r.mean[0].into(),
            r.mean[1].into(),
            r.variance[0].into(),
            r.variance[1].into(),
        ]);
    }
    t
}

/// Cue statistics with one count column per category.
pub fn cue_stats(name: &str, rows: &[CueStatsRow]) -> Table {
    let mut columns = vec!["context_type", "aspect", "outcome", "n", "cueless", "cueless_fraction"];
    let names: Vec<String> = CueCategory::ALL.iter().map(|c| c.as_str().to_lowercase()).collect();
    columns.extend(names.iter().map(String::as_str));
    let mut t = Table::new(name, &columns);
    for r in rows {
        let mut row = vec![
            opt_str(r.context_type.map(|c| c.as_str()), "all"),
            opt_str(r.aspect.map(|a| a.as_str()), "all"),
            opt_str(r.outcome.map(|o| o.as_str()), "all"),
            r.n.into(),
            r.cueless.into(),
            r.cueless_fraction.into(),
        ];
        row.extend(
            CueCategory::ALL
                .iter()
                .map(|c| Cell::from(r.categories.get(c).copied().unwrap_or(0))),
        );
        t.push(row);
    }
    t
}

/// Mining counters as `counter,value` rows.
pub fn mine_stats(name: &str, stats: &MineStats) -> Table {
    let mut t = Table::new(name, &["counter", "value"]);
    let scalar = [
        ("sentences", stats.sentences),
        ("skipped_sentences", stats.skipped_sentences),
        ("candidates", stats.candidates),
        ("excluded_test_text", stats.excluded_test_text),
        ("excluded_negated", stats.excluded_negated),
        ("excluded_biaspectual", stats.excluded_biaspectual),
        ("excluded_ambiguous", stats.excluded_ambiguous),
        ("excluded_conflict", stats.excluded_conflict),
        ("excluded_overlap", stats.excluded_overlap),
        ("capped", stats.capped),
    ];
    for (k, v) in scalar {
        t.push(vec![k.into(), v.into()]);
    }
    for (label, n) in &stats.before_balance {
        t.push(vec![format!("before_balance_{label}").into(), (*n).into()]);
    }
    for (label, n) in &stats.output {
        t.push(vec![format!("output_{label}").into(), (*n).into()]);
    }
    for (cat, n) in &stats.per_category {
        t.push(vec![
            format!("category_{}", cat.as_str().to_lowercase()).into(),
            (*n).into(),
        ]);
    }
    t
}

/// Accuracy per layer, one line per aspect × context type.
pub fn layer_sweep_figure(name: &str, title: &str, rows: &[AccuracyRow]) -> Figure {
    let mut lines: BTreeMap<(ContextType, String), Vec<(f64, f64)>> = BTreeMap::new();
    for r in rows {
        let aspect = r.aspect.map_or("all", |a| a.as_str()).to_string();
        lines
            .entry((r.context_type, aspect))
            .or_default()
            .push((r.layer as f64, r.accuracy));
    }
    let series: Vec<Series> = lines
        .into_iter()
        .map(|((ct, aspect), points)| Series {
            label: format!("{aspect} {ct}"),
            points,
            dashed: ct == ContextType::Alternative,
        })
        .collect();
    Figure {
        name: name.into(),
        svg: line_chart(title, "layer", "accuracy", &series, Some((0.0, 1.0))),
    }
}

/// Accuracy after intervention per layer (solid) with the unintervened
/// accuracy (dashed), per class × context type.
pub fn shift_figure(name: &str, title: &str, rows: &[ShiftRow]) -> Figure {
    let mut after: BTreeMap<(String, ContextType), Vec<(f64, f64)>> = BTreeMap::new();
    let mut before: BTreeMap<(String, ContextType), Vec<(f64, f64)>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.class != "all") {
        let key = (r.class.clone(), r.context_type);
        after.entry(key.clone()).or_default().push((r.layer as f64, r.after));
        before.entry(key).or_default().push((r.layer as f64, r.before));
    }
    let mut series = Vec::new();
    for ((class, ct), points) in after {
        let base = before.remove(&(class.clone(), ct)).unwrap_or_default();
        series.push(Series {
            label: format!("{class} {ct}"),
            points,
            dashed: false,
        });
        series.push(Series {
            label: format!("{class} {ct} before"),
            points: base,
            dashed: true,
        });
    }
    Figure {
        name: name.into(),
        svg: line_chart(title, "layer", "accuracy", &series, Some((0.0, 1.0))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::report::{emit, ExperimentReport, Manifest};
    use crate::types::Aspect;

    #[test]
    fn layer_sweep_schema_on_two_rows() {
        let rows = vec![
            AccuracyRow {
                layer: 1,
                aspect: Some(Aspect::Perfective),
                context_type: ContextType::NonAlternative,
                n: 4,
                accuracy: 0.75,
                tie_rate: 0.0,
                error_rate: 0.25,
            },
            AccuracyRow {
                layer: 2,
                aspect: None,
                context_type: ContextType::Alternative,
                n: 3,
                accuracy: 1.0 / 3.0,
                tie_rate: 1.0 / 3.0,
                error_rate: 1.0 / 3.0,
            },
        ];
        let mut report = ExperimentReport::new(Manifest::new("probe-behavioral", 0, &serde_json::json!({})));
        report.table(layer_sweep("layer_sweep", &rows));
        let dir = tempfile::tempdir().unwrap();
        emit(&report, dir.path()).unwrap();
        let text = std::fs::read_to_string(dir.path().join("layer_sweep.csv")).unwrap();
        let d = report.manifest.config_digest.clone();
        assert_eq!(
            text,
            format!(
                "layer,aspect,context_type,accuracy,tie_rate,n,digest\n\
                 1,perf,non_alternative,0.75,0,4,{d}\n\
                 2,all,alternative,0.333333,0.333333,3,{d}\n"
            )
        );
    }

    #[test]
    fn cue_stats_has_a_column_per_category() {
        let t = cue_stats("cues", &[]);
        assert_eq!(t.columns.len(), 6 + CueCategory::ALL.len());
        assert_eq!(t.columns[6], "resultative");
        assert_eq!(t.columns.last().unwrap(), "forbid");
    }
}
