//! Deterministic CSV and JSON emission. Reals are written with the
//! shortest decimal that round-trips to the same bits, lines end with LF,
//! and field order is fixed, so identical runs produce identical bytes.

use serde::Serialize;

use splitkit_core::analysis::{OrderEstimate, RunRecord};

pub const CSV_HEADER: &str = "n,t,norm_I,norm_A,norm_cert,err_I,err_A,step_seconds";

/// Render records as CSV bytes (header plus one line per record).
pub fn emit_table(records: &[RunRecord]) -> String {
    let mut out = String::with_capacity(64 * (records.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in records {
        emit_record(&mut out, r);
    }
    out
}

pub fn emit_record(out: &mut String, r: &RunRecord) {
    use std::fmt::Write;
    writeln!(
        out,
        "{},{},{},{},{},{},{},{}",
        r.step,
        r.time,
        r.norm_identity,
        r.norm_operator,
        r.norm_certified,
        r.err_identity,
        r.err_operator,
        r.step_seconds
    )
    .expect("writing to a String cannot fail");
}

#[derive(Debug, Serialize)]
pub struct OrderSummary {
    pub taus: Vec<f64>,
    pub errors: Vec<f64>,
    pub slope: Option<f64>,
    pub pair_ratios: Vec<f64>,
    pub saturated: bool,
}

impl From<&OrderEstimate> for OrderSummary {
    fn from(estimate: &OrderEstimate) -> Self {
        Self {
            taus: estimate.taus.clone(),
            errors: estimate.errors.clone(),
            slope: estimate.slope,
            pair_ratios: estimate.pair_ratios.clone(),
            saturated: estimate.saturated,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct Summary {
    pub scheme: String,
    pub sigma: f64,
    pub tau: f64,
    pub steps_completed: usize,
    pub terminal_time: f64,
    pub terminal_norm_identity: f64,
    pub terminal_norm_operator: f64,
    pub terminal_err_identity: Option<f64>,
    pub terminal_err_operator: Option<f64>,
    /// Largest single-step relative increase of the certified norm;
    /// negative values mean the norm decayed monotonically.
    pub worst_certified_margin: Option<f64>,
    pub order: Option<OrderSummary>,
}

impl Summary {
    pub fn from_records(
        scheme: &str,
        sigma: f64,
        tau: f64,
        records: &[RunRecord],
        order: Option<OrderSummary>,
    ) -> Self {
        let last = records.last().expect("at least the initial record exists");
        let cert_scale = records[0].norm_certified.max(f64::MIN_POSITIVE);
        let worst_certified_margin = records
            .windows(2)
            .map(|w| (w[1].norm_certified - w[0].norm_certified) / cert_scale)
            .fold(None, |acc: Option<f64>, m| {
                if m.is_nan() {
                    acc
                } else {
                    Some(acc.map_or(m, |a| a.max(m)))
                }
            });
        Summary {
            scheme: scheme.to_string(),
            sigma,
            tau,
            steps_completed: last.step,
            terminal_time: last.time,
            terminal_norm_identity: last.norm_identity,
            terminal_norm_operator: last.norm_operator,
            terminal_err_identity: finite_or_none(last.err_identity),
            terminal_err_operator: finite_or_none(last.err_operator),
            worst_certified_margin,
            order,
        }
    }

    pub fn to_json_bytes(&self) -> Vec<u8> {
        let mut bytes = serde_json::to_vec_pretty(self).expect("summary serializes");
        bytes.push(b'\n');
        bytes
    }
}

fn finite_or_none(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}
