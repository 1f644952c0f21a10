//! Comma-separated outputs.

use std::fmt::Write as _;

use inpaint_dpo_core::losses::Variant;
use inpaint_dpo_core::metrics::{EloTable, EvalSummary};
use inpaint_dpo_core::trainer::History;

use crate::error::{LabError, Result};
use crate::harness::{AblationReport, AblationRow, ConflictCell};

/// `step,term,value`, total first within each step.
pub fn history_csv(history: &History) -> String {
    let mut s = String::from("step,term,value\n");
    for (step, term, value) in history.rows() {
        let _ = writeln!(s, "{step},{term},{value:?}");
    }
    s
}

/// `metric,variant,value,n,seed` for the four evaluation metrics.
pub fn metrics_csv(variant: &str, summary: &EvalSummary, seed: u64) -> String {
    let mut s = String::from("metric,variant,value,n,seed\n");
    metrics_rows(&mut s, variant, summary, seed);
    s
}

fn metrics_rows(s: &mut String, variant: &str, summary: &EvalSummary, seed: u64) {
    let n = summary.len();
    for (metric, value) in [
        ("oer", summary.mean_oer()),
        ("foreground_mse", summary.mean_foreground_mse()),
        ("rationality", summary.mean_rationality()),
        ("context_coherence", summary.mean_coherence()),
    ] {
        let _ = writeln!(s, "{metric},{variant},{value:?},{n},{seed}");
    }
}

pub const ABLATION_HEADER: &str =
    "variant,mpo,inpainting,capo,scpo,subject_scpo,foreground_mse,oer,rationality,context_coherence,n,seed,config_hash";

fn flags(v: Option<Variant>) -> [u8; 5] {
    match v {
        None => [0; 5],
        Some(v) => [
            v.uses_mpo() as u8,
            v.uses_inpainting() as u8,
            v.uses_capo() as u8,
            v.uses_scpo() as u8,
            v.uses_subject_scpo() as u8,
        ],
    }
}

pub fn ablation_row(row: &AblationRow) -> String {
    let f = flags(row.variant);
    let s = &row.summary;
    format!(
        "{},{},{},{},{},{},{:.6},{:.6},{:.6},{:.6},{},{},{:016x}",
        row.name(),
        f[0],
        f[1],
        f[2],
        f[3],
        f[4],
        s.mean_foreground_mse(),
        s.mean_oer(),
        s.mean_rationality(),
        s.mean_coherence(),
        s.len(),
        row.seed,
        row.config_hash
    )
}

/// The ablation table: one row per variant with its loss-term flags and
/// metric means.
pub fn ablation_csv(report: &AblationReport) -> String {
    let mut s = format!("{ABLATION_HEADER}\n");
    for row in &report.rows {
        s.push_str(&ablation_row(row));
        s.push('\n');
    }
    s
}

/// Long-format metrics of every row.
pub fn ablation_metrics_csv(report: &AblationReport) -> String {
    let mut s = String::from("metric,variant,value,n,seed\n");
    for row in &report.rows {
        metrics_rows(&mut s, row.name(), &row.summary, row.seed);
    }
    s
}

const SAMPLES_HEADER: &str = "variant,sample,rationality,foreground_mse,oer,context_coherence,seed,config_hash";

/// Per-sample values at full precision; `rank` reads this back.
pub fn samples_csv(report: &AblationReport) -> String {
    let mut s = format!("{SAMPLES_HEADER}\n");
    for row in &report.rows {
        let m = &row.summary;
        for i in 0..m.len() {
            let _ = writeln!(
                s,
                "{},{i},{:?},{:?},{:?},{:?},{},{:016x}",
                row.name(),
                m.rationality[i],
                m.foreground_mse[i],
                m.oer[i],
                m.coherence[i],
                row.seed,
                row.config_hash
            );
        }
    }
    s
}

/// Inverse of [`samples_csv`].
pub fn parse_samples_csv(text: &str) -> Result<AblationReport> {
    let mut lines = text.lines();
    if lines.next() != Some(SAMPLES_HEADER) {
        return Err(LabError::Format("not a samples table".into()));
    }
    let mut rows: Vec<AblationRow> = Vec::new();
    let mut seed = 0;
    for (n, line) in lines.enumerate() {
        let bad = || LabError::Format(format!("samples line {}: malformed", n + 2));
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 8 {
            return Err(bad());
        }
        let variant = match f[0] {
            "pretrained" => None,
            name => Some(Variant::from_name(name).ok_or_else(bad)?),
        };
        let num = |i: usize| f[i].parse::<f64>().map_err(|_| bad());
        seed = f[6].parse().map_err(|_| bad())?;
        let hash = u64::from_str_radix(f[7], 16).map_err(|_| bad())?;
        if rows.last().map(|r| r.variant) != Some(variant) {
            rows.push(AblationRow {
                variant,
                summary: EvalSummary::default(),
                seed,
                config_hash: hash,
            });
        }
        let m = &mut rows.last_mut().expect("pushed above").summary;
        m.rationality.push(num(2)?);
        m.foreground_mse.push(num(3)?);
        m.oer.push(num(4)?);
        m.coherence.push(num(5)?);
    }
    Ok(AblationReport { seed, rows })
}

/// `rank,method,rating,appearances`, best first.
pub fn elo_csv(table: &EloTable) -> String {
    let mut s = String::from("rank,method,rating,appearances\n");
    for (i, (name, e)) in table.ranking().iter().enumerate() {
        let _ = writeln!(s, "{},{name},{:.4},{}", i + 1, e.rating, e.appearances);
    }
    s
}

/// One line per cell: mean/min/max cosine and the zero-norm count.
pub fn conflict_csv(cells: &[ConflictCell]) -> String {
    let mut s = String::from("architecture,noise,loss,pairs,zero_norm,mean_cosine,min_cosine,max_cosine\n");
    for c in cells {
        let arch = match c.architecture {
            inpaint_dpo_core::nn::Architecture::Pointwise => "pointwise",
            inpaint_dpo_core::nn::Architecture::Convolutional => "convolutional",
        };
        let noise = if c.shared_noise { "shared" } else { "independent" };
        let loss = match c.loss {
            inpaint_dpo_core::metrics::ConflictLoss::StandardDpo => "dpo",
            inpaint_dpo_core::metrics::ConflictLoss::Mpo => "mpo",
        };
        let fmt = |v: Option<f64>| v.map_or_else(|| "nan".to_string(), |x| format!("{x:.9}"));
        let min = c.cosines.iter().copied().reduce(f64::min);
        let max = c.cosines.iter().copied().reduce(f64::max);
        let _ = writeln!(
            s,
            "{arch},{noise},{loss},{},{},{},{},{}",
            c.cosines.len() + c.zero_norm,
            c.zero_norm,
            fmt(c.mean_cosine()),
            fmt(min),
            fmt(max)
        );
    }
    s
}
