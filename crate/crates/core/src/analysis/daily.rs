use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::stats::{descriptive_stats, mean_ci99};
use crate::wire::NodeId;

pub const DAY_MS: u64 = 86_400_000;

/// Time-stamped observations of one directed link.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LinkSeries {
    pub src: NodeId,
    pub dst: NodeId,
    /// (wall time, RTT measured at `src`).
    pub rtt: Vec<(u64, f64)>,
    /// (send time, lost) for every datagram `src` sent to `dst`.
    pub sends: Vec<(u64, bool)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DailyStats {
    /// Days since 1970-01-01 UTC.
    pub day: u64,
    pub date: String,
    pub links: usize,
    pub mean_rtt_ms: Option<f64>,
    pub mean_rtt_ci99: Option<f64>,
    pub median_rtt_ms: Option<f64>,
    pub median_rtt_ci99: Option<f64>,
    pub mean_cv: Option<f64>,
    pub mean_cv_ci99: Option<f64>,
    pub mean_loss: Option<f64>,
    pub mean_loss_ci99: Option<f64>,
}

pub fn day_of(ts_ms: u64) -> u64 {
    ts_ms / DAY_MS
}

pub fn date_string(day: u64) -> String {
    chrono::DateTime::from_timestamp((day * 86_400) as i64, 0)
        .map(|d| d.date_naive().to_string())
        .unwrap_or_default()
}

#[derive(Default)]
struct DayAcc {
    means: Vec<f64>,
    medians: Vec<f64>,
    cvs: Vec<f64>,
    losses: Vec<f64>,
    links: usize,
}

fn with_ci(xs: &[f64]) -> (Option<f64>, Option<f64>) {
    if xs.is_empty() {
        (None, None)
    } else {
        let (m, h) = mean_ci99(xs);
        (Some(m), Some(h))
    }
}

/// Per UTC day, the across-link mean of each link's daily mean RTT, median
/// RTT, CV and loss fraction, each with a 99% half-width.
pub fn daily_aggregate(links: &[LinkSeries]) -> Vec<DailyStats> {
    let mut days: BTreeMap<u64, DayAcc> = BTreeMap::new();
    for link in links {
        let mut rtt_by_day: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
        for &(t, r) in &link.rtt {
            rtt_by_day.entry(day_of(t)).or_default().push(r);
        }
        let mut loss_by_day: BTreeMap<u64, (u64, u64)> = BTreeMap::new();
        for &(t, lost) in &link.sends {
            let e = loss_by_day.entry(day_of(t)).or_default();
            e.0 += 1;
            e.1 += u64::from(lost);
        }
        let mut touched: Vec<u64> = rtt_by_day.keys().chain(loss_by_day.keys()).copied().collect();
        touched.sort_unstable();
        touched.dedup();
        for day in touched {
            let acc = days.entry(day).or_default();
            acc.links += 1;
            if let Some(d) = rtt_by_day.get(&day).and_then(|v| descriptive_stats(v).ok()) {
                acc.means.push(d.mean);
                acc.medians.push(d.q50);
                if d.count >= 2 {
                    acc.cvs.push(d.cv);
                }
            }
            if let Some(&(sent, lost)) = loss_by_day.get(&day) {
                acc.losses.push(lost as f64 / sent as f64);
            }
        }
    }
    days.into_iter()
        .map(|(day, acc)| {
            let (mean_rtt_ms, mean_rtt_ci99) = with_ci(&acc.means);
            let (median_rtt_ms, median_rtt_ci99) = with_ci(&acc.medians);
            let (mean_cv, mean_cv_ci99) = with_ci(&acc.cvs);
            let (mean_loss, mean_loss_ci99) = with_ci(&acc.losses);
            DailyStats {
                day,
                date: date_string(day),
                links: acc.links,
                mean_rtt_ms,
                mean_rtt_ci99,
                median_rtt_ms,
                median_rtt_ci99,
                mean_cv,
                mean_cv_ci99,
                mean_loss,
                mean_loss_ci99,
            }
        })
        .collect()
}
