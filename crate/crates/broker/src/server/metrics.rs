//! Broker counters and the 1 Hz CSV export.

use std::io::Write;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

#[derive(Debug, Default)]
pub(crate) struct Counters {
    pub publishes_in: AtomicU64,
    pub deliveries_out: AtomicU64,
    pub matches: AtomicU64,
    pub queue_drops: AtomicU64,
    pub sessions_expired: AtomicU64,
}

impl Counters {
    pub fn add(counter: &AtomicU64, n: u64) {
        counter.fetch_add(n, Ordering::Relaxed);
    }
}

/// Cumulative counters at one instant.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MetricsSnapshot {
    pub connected_sessions: u64,
    pub publishes_in: u64,
    /// Forwarded publishes written to consumer sockets.
    pub deliveries_out: u64,
    /// Sum of the match counts of all publishes.
    pub matches: u64,
    pub queue_drops: u64,
    pub sessions_expired: u64,
}

impl MetricsSnapshot {
    pub(crate) fn read(counters: &Counters, connected_sessions: u64) -> Self {
        MetricsSnapshot {
            connected_sessions,
            publishes_in: counters.publishes_in.load(Ordering::Relaxed),
            deliveries_out: counters.deliveries_out.load(Ordering::Relaxed),
            matches: counters.matches.load(Ordering::Relaxed),
            queue_drops: counters.queue_drops.load(Ordering::Relaxed),
            sessions_expired: counters.sessions_expired.load(Ordering::Relaxed),
        }
    }
}

/// One CSV row. Counts cover the interval since the previous row.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct MetricsRow {
    /// Seconds since the Unix epoch.
    pub timestamp: f64,
    pub connected_sessions: u64,
    pub publishes_in: u64,
    pub deliveries_out: u64,
    pub matches_per_publish_mean: f64,
    pub queue_drops: u64,
}

impl MetricsRow {
    pub fn between(previous: &MetricsSnapshot, current: &MetricsSnapshot, at: SystemTime) -> Self {
        let publishes = current.publishes_in - previous.publishes_in;
        let matches = current.matches - previous.matches;
        MetricsRow {
            timestamp: at.duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64()),
            connected_sessions: current.connected_sessions,
            publishes_in: publishes,
            deliveries_out: current.deliveries_out - previous.deliveries_out,
            matches_per_publish_mean: if publishes == 0 { 0.0 } else { matches as f64 / publishes as f64 },
            queue_drops: current.queue_drops - previous.queue_drops,
        }
    }
}

/// Writes rows with a header, flushing after each.
pub struct MetricsCsv<W: Write> {
    writer: csv::Writer<W>,
}

impl<W: Write> MetricsCsv<W> {
    pub fn new(inner: W) -> Self {
        MetricsCsv { writer: csv::Writer::from_writer(inner) }
    }

    pub fn write(&mut self, row: &MetricsRow) -> csv::Result<()> {
        self.writer.serialize(row)?;
        self.writer.flush()?;
        Ok(())
    }
}
