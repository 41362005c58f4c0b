//! Normalized error metrics over position-map sequences and their report table.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::PositionMap;

/// Decimal places used when rendering metric values.
pub const DECIMALS: usize = 5;

struct Accum {
    abs: f64,
    sq: f64,
    count: usize,
    range: f64,
}

fn accumulate(pred: &[PositionMap], truth: &[PositionMap]) -> Result<Accum> {
    if pred.len() != truth.len() || truth.is_empty() {
        return Err(Error::Contract(format!(
            "need equal, non-empty sequences, got {} predictions and {} targets",
            pred.len(),
            truth.len()
        )));
    }
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut abs, mut sq, mut count) = (0.0, 0.0, 0usize);
    for (f, (p, t)) in pred.iter().zip(truth).enumerate() {
        if p.height != t.height || p.width != t.width {
            return Err(Error::dim("metrics", format!("frame {f}: prediction and target sizes differ")));
        }
        if p.mask != t.mask {
            return Err(Error::Contract(format!("frame {f}: prediction and target masks differ")));
        }
        for (i, &m) in t.mask.iter().enumerate() {
            if m == 0 {
                continue;
            }
            for c in 0..3 {
                let (a, b) = (p.data[i * 3 + c] as f64, t.data[i * 3 + c] as f64);
                lo = lo.min(b);
                hi = hi.max(b);
                abs += (a - b).abs();
                sq += (a - b) * (a - b);
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(Error::Contract("no masked texels to evaluate".into()));
    }
    let range = hi - lo;
    if !(range > 0.0) {
        return Err(Error::Degenerate(format!("ground-truth range is {range}")));
    }
    Ok(Accum { abs, sq, count, range })
}

/// Mean absolute masked error divided by the masked ground-truth range of the sequence.
pub fn nmae(pred: &[PositionMap], truth: &[PositionMap]) -> Result<f64> {
    let a = accumulate(pred, truth)?;
    Ok(a.abs / a.count as f64 / a.range)
}

/// Root mean squared masked error divided by the same range as [`nmae`].
pub fn nrmse(pred: &[PositionMap], truth: &[PositionMap]) -> Result<f64> {
    let a = accumulate(pred, truth)?;
    Ok((a.sq / a.count as f64).sqrt() / a.range)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub trial_id: String,
    pub nmae: f64,
    pub nrmse: f64,
    pub frames: usize,
    /// Ground-truth range the errors were normalized by.
    pub range: f64,
    /// Trial withheld from training entirely.
    pub holdout: bool,
}

/// Both metrics for one trial's sequence in a single pass.
pub fn evaluate_sequence(trial_id: &str, pred: &[PositionMap], truth: &[PositionMap], holdout: bool) -> Result<MetricRow> {
    let a = accumulate(pred, truth)?;
    Ok(MetricRow {
        trial_id: trial_id.to_owned(),
        nmae: a.abs / a.count as f64 / a.range,
        nrmse: (a.sq / a.count as f64).sqrt() / a.range,
        frames: truth.len(),
        range: a.range,
        holdout,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub subject_id: String,
    pub rows: Vec<MetricRow>,
}

/// Order rows as named trials first, then holdout trials.
pub fn report_table(subject_id: &str, mut rows: Vec<MetricRow>) -> Result<MetricReport> {
    if rows.is_empty() {
        return Err(Error::Contract("report needs at least one trial".into()));
    }
    rows.sort_by_key(|r| r.holdout);
    Ok(MetricReport {
        subject_id: subject_id.to_owned(),
        rows,
    })
}

impl MetricReport {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["subject", "trial", "nmae", "nrmse", "frames"])
            .map_err(|e| Error::format("CSV", e.to_string()))?;
        for r in &self.rows {
            w.write_record([
                self.subject_id.clone(),
                r.trial_id.clone(),
                format!("{:.*}", DECIMALS, r.nmae),
                format!("{:.*}", DECIMALS, r.nrmse),
                r.frames.to_string(),
            ])
            .map_err(|e| Error::format("CSV", e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::format("CSV", e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }

    /// Rows as `(subject, trial, nmae, nrmse, frames)`.
    pub fn parse_csv(text: &str) -> Result<Vec<(String, String, f64, f64, usize)>> {
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        rdr.deserialize()
            .map(|r| r.map_err(|e| Error::format("CSV", e.to_string())))
            .collect()
    }

    pub fn to_text(&self) -> String {
        let width = self.rows.iter().map(|r| r.trial_id.len() + 10).max().unwrap_or(5).max(5);
        let mut s = String::new();
        let _ = writeln!(s, "subject: {}", self.subject_id);
        let _ = writeln!(s, "{:<width$}  {:>9}  {:>9}  {:>6}", "trial", "nMAE", "nRMSE", "frames");
        for r in &self.rows {
            let name = if r.holdout { format!("{} (holdout)", r.trial_id) } else { r.trial_id.clone() };
            let _ = writeln!(
                s,
                "{name:<width$}  {:>9.*}  {:>9.*}  {:>6}",
                DECIMALS, r.nmae, DECIMALS, r.nrmse, r.frames
            );
        }
        s
    }
}
