//! Dataset evaluation and the per-category report.

use ee3d_core::metrics::{aggregate, CategoryMetrics, mpjpe, one_euro, pa_mpjpe, MetricReport, OneEuroParams, SequenceMetrics};
use ee3d_core::net::{infer_stream, NetworkParams};
use ee3d_core::scene::CATEGORIES;
use serde_json::json;

use crate::dataset::{Dataset, SequenceData};
use crate::error::Result;

/// Where predictions come from.
#[derive(Clone, Copy)]
pub enum Predictor<'a> {
    Model(&'a NetworkParams),
    /// The ground truth itself; a sanity baseline that scores zero.
    GroundTruth,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    pub pa_scale: bool,
    pub smoothing: Option<OneEuroParams>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions { pa_scale: true, smoothing: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub sequences: Vec<SequenceMetrics>,
    pub report: MetricReport,
}

/// Poses of every window of a sequence, buffer reset at its start.
pub fn predict_sequence(seq: &SequenceData, pred: Predictor, smoothing: Option<OneEuroParams>) -> Result<Vec<Vec<f64>>> {
    let poses = match pred {
        Predictor::GroundTruth => seq.gt.iter().map(|g| g.joints.clone()).collect(),
        Predictor::Model(p) => {
            let frames: Vec<_> = seq.samples()?.into_iter().map(|s| s.lnes).collect();
            infer_stream(&frames, p)?
        }
    };
    Ok(match smoothing {
        None => poses,
        Some(params) => {
            let times: Vec<f64> = seq.gt.iter().map(|g| g.t0 as f64 * 1e-6).collect();
            one_euro(&times, &poses, params)?
        }
    })
}

pub fn evaluate(ds: &Dataset, pred: Predictor, opts: &EvalOptions) -> Result<Evaluation> {
    let mut sequences = Vec::new();
    for name in &ds.sequence_names {
        let seq = ds.load_sequence(name)?;
        let poses = predict_sequence(&seq, pred, opts.smoothing)?;
        let gt: Vec<&[f64]> = seq.gt.iter().map(|g| g.joints.as_slice()).collect();
        sequences.push(SequenceMetrics {
            name: name.clone(),
            category: seq.meta.motion.category().to_string(),
            mpjpe: mpjpe(&poses, &gt)?,
            pa_mpjpe: pa_mpjpe(&poses, &gt, opts.pa_scale)?,
        });
    }
    let report = aggregate(&sequences)?;
    Ok(Evaluation { sequences, report })
}

type Column = fn(&CategoryMetrics) -> f64;

/// Plain-text table: one column per category plus `Avg. (σ)`, rows for
/// MPJPE and PA-MPJPE in millimetres. Categories without sequences show
/// `-`.
pub fn format_table(r: &MetricReport) -> String {
    let cell = |cat: &str, f: Column| {
        r.categories.iter().find(|c| c.category == cat).map_or("-".to_string(), |c| format!("{:.2}", f(c)))
    };
    let width = CATEGORIES.iter().map(|c| c.len()).max().unwrap_or(0).max(9);
    let mut out = format!("{:<10}", "Method");
    for c in CATEGORIES {
        out.push_str(&format!(" {c:>width$}"));
    }
    out.push_str(&format!(" {:>16}\n", "Avg. (σ)"));
    let rows: [(&str, Column, f64, f64); 2] = [
        ("MPJPE", |c| c.mpjpe, r.mean_mpjpe, r.std_mpjpe),
        ("PA-MPJPE", |c| c.pa_mpjpe, r.mean_pa_mpjpe, r.std_pa_mpjpe),
    ];
    for (label, f, mean, std) in rows {
        out.push_str(&format!("{label:<10}"));
        for c in CATEGORIES {
            out.push_str(&format!(" {:>width$}", cell(c, f)));
        }
        out.push_str(&format!(" {:>16}\n", format!("{mean:.2} ({std:.2})")));
    }
    out
}

/// Line-delimited JSON: one record per sequence, per category and a
/// summary. Values are in millimetres.
pub fn json_lines(e: &Evaluation) -> String {
    let mut out = String::new();
    for s in &e.sequences {
        out.push_str(&json!({"kind": "sequence", "name": s.name, "category": s.category, "mpjpe": s.mpjpe, "pa_mpjpe": s.pa_mpjpe}).to_string());
        out.push('\n');
    }
    for c in &e.report.categories {
        out.push_str(
            &json!({"kind": "category", "category": c.category, "sequences": c.sequences, "mpjpe": c.mpjpe, "pa_mpjpe": c.pa_mpjpe}).to_string(),
        );
        out.push('\n');
    }
    let r = &e.report;
    out.push_str(
        &json!({
            "kind": "summary",
            "mpjpe": r.mean_mpjpe,
            "mpjpe_std": r.std_mpjpe,
            "pa_mpjpe": r.mean_pa_mpjpe,
            "pa_mpjpe_std": r.std_pa_mpjpe,
            "missing": r.missing,
        })
        .to_string(),
    );
    out.push('\n');
    out
}
