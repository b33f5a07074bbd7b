//! Plain-text tables for stderr.

use std::fmt::Write;

use tala_core::dataio::DatasetStats;
use tala_core::evalmetrics::GroupSummary;

pub fn metrics(groups: &[(String, &GroupSummary)]) -> String {
    let mut s = format!(
        "{:<14} {:>5} | {:>6} {:>6} {:>6} | {:>6} {:>6} {:>6}\n",
        "group", "n", "beat F", "CMLt", "AMLt", "down F", "CMLt", "AMLt"
    );
    for (name, g) in groups {
        let _ = writeln!(
            s,
            "{:<14} {:>5} | {:>6.3} {:>6.3} {:>6.3} | {:>6.3} {:>6.3} {:>6.3}",
            name,
            g.count,
            g.beat.f,
            g.beat.cml_t,
            g.beat.aml_t,
            g.downbeat.f,
            g.downbeat.cml_t,
            g.downbeat.aml_t
        );
    }
    s
}

pub fn dataset(stats: &DatasetStats) -> String {
    let mut s = format!(
        "{:<14} {:>6} {:>10} {:>10} {:>7} {:>6}\n",
        "tala", "pieces", "total (h)", "median (s)", "beats", "samas"
    );
    let rows = stats
        .per_tala
        .iter()
        .map(|(k, v)| (k.as_str(), v))
        .chain([("overall", &stats.overall)]);
    for (name, t) in rows {
        let _ = writeln!(
            s,
            "{:<14} {:>6} {:>10.2} {:>10.1} {:>7} {:>6}",
            name,
            t.pieces,
            t.total_duration_sec / 3600.0,
            t.median_duration_sec,
            t.annotations,
            t.samas
        );
    }
    s
}
