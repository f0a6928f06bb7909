//! Run summaries and their CSV/JSON output.

use std::collections::BTreeMap;
use std::io::Write;

use geopubsub_broker::client::OpKind;
use serde::Serialize;

use crate::experiment::{ClientKind, ClientTrace, Mode};

/// Latency distribution of one operation kind, in microseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LatencyStats {
    pub count: usize,
    pub mean_us: f64,
    pub p50_us: u64,
    pub p99_us: u64,
    pub max_us: u64,
}

impl LatencyStats {
    /// `None` for an empty sample.
    pub fn from_samples(mut values: Vec<u64>) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        values.sort_unstable();
        let sum: u128 = values.iter().map(|&v| v as u128).sum();
        Some(LatencyStats {
            count: values.len(),
            mean_us: sum as f64 / values.len() as f64,
            p50_us: nearest_rank(&values, 0.50),
            p99_us: nearest_rank(&values, 0.99),
            max_us: *values.last().unwrap(),
        })
    }
}

/// Nearest-rank percentile of sorted values.
pub fn nearest_rank(sorted: &[u64], q: f64) -> u64 {
    let rank = (q * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub mode: Mode,
    pub client_kind: ClientKind,
    pub clients: usize,
    pub duration_secs: f64,
    pub latency: BTreeMap<OpKind, LatencyStats>,
    pub publishes_sent: u64,
    /// Requests that failed (timeouts, negative acks, lost connections).
    pub failed_ops: u64,
    /// Sum of the PUBACK match counts.
    pub expected_deliveries: u64,
    pub messages_delivered: u64,
    pub messages_lost: u64,
    pub deliveries_per_publish: f64,
    /// Message delivery latency from embedded send times.
    pub delivery_latency: Option<LatencyStats>,
}

impl RunReport {
    pub fn from_traces(
        mode: Mode,
        client_kind: ClientKind,
        duration_secs: f64,
        traces: &[ClientTrace],
    ) -> RunReport {
        let mut by_kind: BTreeMap<OpKind, Vec<u64>> = BTreeMap::new();
        let mut publishes_sent = 0;
        let mut expected = 0;
        let mut failed = 0;
        let mut delivered = 0;
        let mut mdl = Vec::new();
        for trace in traces {
            for s in &trace.samples {
                by_kind.entry(s.op_kind).or_default().push(s.latency_us);
            }
            for op in &trace.ops {
                if op.kind == OpKind::Publish {
                    publishes_sent += 1;
                }
                expected += op.matched.unwrap_or(0);
                failed += op.error.is_some() as u64;
            }
            delivered += trace.deliveries.len() as u64;
            mdl.extend(trace.deliveries.iter().filter_map(|d| d.latency_us));
        }
        RunReport {
            mode,
            client_kind,
            clients: traces.len(),
            duration_secs,
            latency: by_kind.into_iter().filter_map(|(k, v)| Some((k, LatencyStats::from_samples(v)?))).collect(),
            publishes_sent,
            failed_ops: failed,
            expected_deliveries: expected,
            messages_delivered: delivered,
            messages_lost: expected.saturating_sub(delivered),
            deliveries_per_publish: if publishes_sent == 0 { 0.0 } else { delivered as f64 / publishes_sent as f64 },
            delivery_latency: LatencyStats::from_samples(mdl),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// A few human-readable lines.
    pub fn summary(&self) -> String {
        let mut out = format!(
            "{:?}/{:?}: {} clients, {:.1} s, {} publishes, {} delivered ({:.2}/publish), {} lost, {} failed ops\n",
            self.mode,
            self.client_kind,
            self.clients,
            self.duration_secs,
            self.publishes_sent,
            self.messages_delivered,
            self.deliveries_per_publish,
            self.messages_lost,
            self.failed_ops
        );
        for (kind, s) in &self.latency {
            out += &format!(
                "  {:<11} n={:<7} mean={:>9.1} us  p50={:>7} us  p99={:>7} us\n",
                kind.as_str(),
                s.count,
                s.mean_us,
                s.p50_us,
                s.p99_us
            );
        }
        if let Some(s) = &self.delivery_latency {
            out += &format!("  {:<11} n={:<7} mean={:>9.1} us  p50={:>7} us  p99={:>7} us\n", "delivery", s.count, s.mean_us, s.p50_us, s.p99_us);
        }
        out
    }
}

#[derive(Serialize)]
struct OpRow<'a> {
    client: &'a str,
    op_kind: OpKind,
    t_start: u64,
    latency_us: u64,
    matched_count: Option<u64>,
}

/// Per-operation samples of all clients:
/// `client,op_kind,t_start,latency_us,matched_count`.
pub fn write_ops_csv<W: Write>(out: W, traces: &[ClientTrace]) -> csv::Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    for trace in traces {
        for s in &trace.samples {
            writer.serialize(OpRow {
                client: &trace.client_id,
                op_kind: s.op_kind,
                t_start: s.t_start,
                latency_us: s.latency_us,
                matched_count: s.matched_count,
            })?;
        }
    }
    writer.flush()?;
    Ok(())
}
