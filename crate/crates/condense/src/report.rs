//! Artifact rendering: plain-text tables for reading and JSON for tooling.
//!
//! Every artifact embeds the resolved configuration and seed that produced
//! it, and rendering is a pure function of the report contents, so a rerun
//! with the same inputs writes byte-identical files. Wall-clock timings are
//! intentionally left to log output: they would break that reproducibility.

use crate::engine::{median, GradDiagnostics};
use crate::eval::EvalReport;
use crate::nas::RankStudy;
use crate::synthetic::LossTrace;
use serde_json::{json, Value};

fn pct(v: f64) -> String {
    format!("{:.2}", v * 100.0)
}

/// The machine-readable evaluation report.
pub fn eval_report_json(r: &EvalReport) -> String {
    let v = json!({
        "kind": "eval",
        "accuracies": r.accuracies,
        "mean": r.mean,
        "std": r.std,
        "sets": r.sets,
        "nets": r.nets,
        "seed": r.seed,
        "config": r.config_text,
    });
    pretty(&v)
}

/// The human-readable evaluation table: one row per run, then the
/// aggregate.
pub fn eval_report_table(r: &EvalReport) -> String {
    let mut s = String::new();
    s.push_str("set  net  accuracy%\n");
    for (i, acc) in r.accuracies.iter().enumerate() {
        let set = i / r.nets.max(1);
        let net = i % r.nets.max(1);
        s.push_str(&format!("{set:<4} {net:<4} {}\n", pct(*acc)));
    }
    s.push_str(&format!(
        "mean {} +/- {} over {} runs\n",
        pct(r.mean),
        pct(r.std),
        r.accuracies.len()
    ));
    s
}

/// One labeled row per evaluated variant, as in an ablation study.
pub fn ablation_table(rows: &[(String, EvalReport)]) -> String {
    let width = rows.iter().map(|(l, _)| l.len()).max().unwrap_or(6).max(6);
    let mut s = format!("{:w$}  accuracy%  std\n", "scheme", w = width);
    for (label, r) in rows {
        s.push_str(&format!(
            "{:w$}  {:>9}  {}\n",
            label,
            pct(r.mean),
            pct(r.std),
            w = width
        ));
    }
    s
}

pub fn ablation_json(rows: &[(String, EvalReport)]) -> String {
    let entries: Vec<Value> = rows
        .iter()
        .map(|(label, r)| {
            json!({
                "scheme": label,
                "accuracies": r.accuracies,
                "mean": r.mean,
                "std": r.std,
                "seed": r.seed,
                "config": r.config_text,
            })
        })
        .collect();
    pretty(&json!({ "kind": "ablation", "rows": entries }))
}

/// The condense-by-evaluate accuracy matrix.
pub fn crossarch_table(
    condense_labels: &[String],
    eval_labels: &[String],
    matrix: &[Vec<EvalReport>],
) -> String {
    let rw = condense_labels.iter().map(String::len).max().unwrap_or(8).max(8);
    let cw = eval_labels.iter().map(String::len).max().unwrap_or(8).max(14);
    let mut s = format!("{:rw$}", "condense\\eval", rw = rw);
    for l in eval_labels {
        s.push_str(&format!("  {l:>cw$}"));
    }
    s.push('\n');
    for (row_label, row) in condense_labels.iter().zip(matrix) {
        s.push_str(&format!("{row_label:<rw$}"));
        for r in row {
            s.push_str(&format!("  {:>cw$}", format!("{} +/- {}", pct(r.mean), pct(r.std))));
        }
        s.push('\n');
    }
    s
}

pub fn crossarch_json(
    condense_labels: &[String],
    eval_labels: &[String],
    matrix: &[Vec<EvalReport>],
) -> String {
    let rows: Vec<Value> = condense_labels
        .iter()
        .zip(matrix)
        .map(|(label, row)| {
            let cells: Vec<Value> = eval_labels
                .iter()
                .zip(row)
                .map(|(el, r)| {
                    json!({
                        "eval_arch": el,
                        "accuracies": r.accuracies,
                        "mean": r.mean,
                        "std": r.std,
                        "config": r.config_text,
                    })
                })
                .collect();
            json!({ "condense_arch": label, "cells": cells })
        })
        .collect();
    pretty(&json!({ "kind": "crossarch", "rows": rows }))
}

/// Ranking-study table: correlations, picks, and accounting.
pub fn rank_study_table(study: &RankStudy) -> String {
    let mut s = String::new();
    s.push_str(&format!("architectures      {}\n", study.labels.len()));
    s.push_str(&format!("spearman overall   {:.4}\n", study.rho_all));
    s.push_str(&format!(
        "spearman top slice {:.4} over {} architectures\n",
        study.rho_top,
        study.top_indices.len()
    ));
    if let Some((idx, ref_score)) = study.proxy_pick {
        s.push_str(&format!(
            "proxy pick         {} (reference accuracy {})\n",
            study.labels[idx],
            ref_score.map(pct).unwrap_or_else(|| "unavailable".into())
        ));
    }
    s.push_str(&format!("proxy images       {}\n", study.proxy_images));
    s.push_str(&format!("reference images   {}\n", study.reference_images));
    s.push_str("\narchitecture  proxy%  reference%\n");
    for (i, label) in study.labels.iter().enumerate() {
        let p = study.proxy_scores[i].map(pct).unwrap_or_else(|| "-".into());
        let r = study.reference_scores[i].map(pct).unwrap_or_else(|| "-".into());
        s.push_str(&format!("{label}  {p}  {r}\n"));
    }
    s
}

pub fn rank_study_json(study: &RankStudy) -> String {
    let v = json!({
        "kind": "rank_study",
        "labels": study.labels,
        "proxy_scores": study.proxy_scores,
        "reference_scores": study.reference_scores,
        "rho_all": study.rho_all,
        "rho_top": study.rho_top,
        "top_indices": study.top_indices,
        "proxy_pick": study.proxy_pick.map(|(i, s)| json!({"index": i, "reference_score": s})),
        "proxy_images": study.proxy_images,
        "reference_images": study.reference_images,
    });
    pretty(&v)
}

/// Scatter rows `proxy reference label`, one per architecture scored by
/// both passes, for external plotting.
pub fn rank_scatter_data(study: &RankStudy) -> String {
    let mut s = String::from("# proxy_accuracy reference_accuracy architecture\n");
    for (i, label) in study.labels.iter().enumerate() {
        if let (Some(p), Some(r)) = (study.proxy_scores[i], study.reference_scores[i]) {
            s.push_str(&format!("{p} {r} {label}\n"));
        }
    }
    s
}

/// Loss trace as `iteration value` lines.
pub fn trace_file(trace: &LossTrace) -> String {
    let mut s = String::from("# outer_iteration mean_matching_loss\n");
    for (i, v) in trace.per_iter.iter().enumerate() {
        s.push_str(&format!("{i} {v}\n"));
    }
    s
}

/// Gradient-magnitude diagnostics as text: per recorded iteration, medians
/// and a log-scale histogram of synthetic against real row norms.
pub fn diagnostics_table(diag: &GradDiagnostics) -> String {
    let mut s = String::new();
    for rec in &diag.records {
        s.push_str(&format!(
            "outer iteration {}: median |grad| synthetic {:e}, real {:e}\n",
            rec.outer_iter,
            rec.syn_median(),
            rec.real_median()
        ));
        s.push_str(&histogram_pair(&rec.syn_norms, &rec.real_norms));
        s.push('\n');
    }
    if diag.records.is_empty() {
        s.push_str("no diagnostics recorded\n");
    }
    s
}

pub fn diagnostics_json(diag: &GradDiagnostics) -> String {
    let recs: Vec<Value> = diag
        .records
        .iter()
        .map(|r| {
            json!({
                "outer_iter": r.outer_iter,
                "syn_norms": r.syn_norms,
                "real_norms": r.real_norms,
                "syn_median": r.syn_median(),
                "real_median": r.real_median(),
            })
        })
        .collect();
    pretty(&json!({ "kind": "diagnostics", "records": recs }))
}

fn histogram_pair(syn: &[f32], real: &[f32]) -> String {
    const BUCKETS: usize = 12;
    const FLOOR: f32 = 1e-12;
    let all: Vec<f32> = syn.iter().chain(real).map(|v| v.max(FLOOR).log10()).collect();
    if all.is_empty() {
        return String::new();
    }
    let lo = all.iter().copied().fold(f32::INFINITY, f32::min);
    let hi = all.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let span = (hi - lo).max(1e-6);
    let bucket_of = |v: f32| {
        let b = ((v.max(FLOOR).log10() - lo) / span * BUCKETS as f32) as usize;
        b.min(BUCKETS - 1)
    };
    let mut syn_counts = [0usize; BUCKETS];
    let mut real_counts = [0usize; BUCKETS];
    for &v in syn {
        syn_counts[bucket_of(v)] += 1;
    }
    for &v in real {
        real_counts[bucket_of(v)] += 1;
    }
    let peak = syn_counts.iter().chain(&real_counts).copied().max().unwrap_or(1).max(1);
    let mut s = String::from("  log10|grad|         synthetic | real\n");
    for b in 0..BUCKETS {
        let left = lo + span * b as f32 / BUCKETS as f32;
        let bar = |n: usize| "#".repeat((n * 20).div_ceil(peak).min(20));
        s.push_str(&format!(
            "  [{left:>7.2}] {:>20} | {}\n",
            bar(syn_counts[b]),
            bar(real_counts[b])
        ));
    }
    s.push_str(&format!(
        "  counts: {} synthetic rows, {} real rows, median marker {:e}\n",
        syn.len(),
        real.len(),
        median(syn)
    ));
    s
}

fn pretty(v: &Value) -> String {
    let mut out = serde_json::to_string_pretty(v).expect("report values are plain data");
    out.push('\n');
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::DiagRecord;
    use crate::eval::EvalReport;

    fn report() -> EvalReport {
        EvalReport::from_accuracies(vec![0.5, 0.75], 1, 2, "seed = 3\n".into(), 3, 4.2)
    }

    #[test]
    fn eval_json_is_deterministic_and_carries_config() {
        let a = eval_report_json(&report());
        let b = eval_report_json(&report());
        assert_eq!(a, b);
        assert!(a.contains("\"config\": \"seed = 3\\n\""));
        assert!(a.contains("\"mean\": 0.625"));
        assert!(!a.contains("wall"), "timing must stay out of artifacts");
    }

    #[test]
    fn eval_table_lists_cells_and_aggregate() {
        let t = eval_report_table(&report());
        assert!(t.contains("0    0    50.00"));
        assert!(t.contains("0    1    75.00"));
        assert!(t.contains("mean 62.50 +/- 12.50 over 2 runs"));
    }

    #[test]
    fn ablation_rows_align() {
        let rows = vec![("ours".to_string(), report()), ("a".to_string(), report())];
        let t = ablation_table(&rows);
        assert!(t.contains("ours"));
        assert!(t.lines().count() == 3);
        let j = ablation_json(&rows);
        assert!(j.contains("\"kind\": \"ablation\""));
    }

    #[test]
    fn crossarch_table_has_row_per_condense_arch() {
        let m = vec![vec![report(), report()], vec![report(), report()]];
        let labels = vec!["convnet".to_string(), "mlp".to_string()];
        let evals = vec!["convnet".to_string(), "lenet".to_string()];
        let t = crossarch_table(&labels, &evals, &m);
        assert_eq!(t.lines().count(), 3);
        assert!(t.contains("62.50 +/- 12.50"));
        let j = crossarch_json(&labels, &evals, &m);
        assert!(j.contains("\"condense_arch\": \"convnet\""));
    }

    #[test]
    fn trace_file_is_line_per_iteration() {
        let t = trace_file(&LossTrace { per_iter: vec![1.5, 0.75] });
        assert_eq!(t, "# outer_iteration mean_matching_loss\n0 1.5\n1 0.75\n");
    }

    #[test]
    fn diagnostics_render_medians_and_histograms() {
        let diag = GradDiagnostics {
            records: vec![DiagRecord {
                outer_iter: 7,
                syn_norms: vec![0.001, 0.01, 0.1],
                real_norms: vec![0.01, 0.02, 0.3],
            }],
        };
        let t = diagnostics_table(&diag);
        assert!(t.contains("outer iteration 7"));
        assert!(t.contains("#"));
        let j = diagnostics_json(&diag);
        assert!(j.contains("\"outer_iter\": 7"));
        assert!(j.contains("\"syn_median\""));
        assert_eq!(diagnostics_table(&GradDiagnostics::default()), "no diagnostics recorded\n");
    }
}
