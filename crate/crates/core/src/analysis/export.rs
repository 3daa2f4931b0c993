use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;

use super::{cdf_points, link_stats, Analysis, AnalysisError, LinkStats};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CdfMetric {
    Mean,
    Q99,
    Cv,
    Loss,
    Min,
    Max,
    Asymmetry,
}

impl CdfMetric {
    pub const ALL: [CdfMetric; 7] = [
        CdfMetric::Mean,
        CdfMetric::Q99,
        CdfMetric::Cv,
        CdfMetric::Loss,
        CdfMetric::Min,
        CdfMetric::Max,
        CdfMetric::Asymmetry,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CdfMetric::Mean => "mean",
            CdfMetric::Q99 => "q99",
            CdfMetric::Cv => "cv",
            CdfMetric::Loss => "loss",
            CdfMetric::Min => "min",
            CdfMetric::Max => "max",
            CdfMetric::Asymmetry => "asymmetry",
        }
    }

    /// One value per directed link, or per pair for asymmetry.
    pub fn values(self, an: &Analysis) -> Vec<f64> {
        let pick = |f: fn(&LinkStats) -> Option<f64>| an.link_stats.iter().filter_map(f).collect();
        match self {
            CdfMetric::Mean => pick(|s| s.mean_ms),
            CdfMetric::Q99 => pick(|s| s.q99_ms),
            CdfMetric::Cv => pick(|s| s.cv),
            CdfMetric::Loss => pick(|s| s.loss_fraction),
            CdfMetric::Min => pick(|s| s.min_ms),
            CdfMetric::Max => pick(|s| s.max_ms),
            CdfMetric::Asymmetry => an.pair_asymmetry_means(),
        }
    }
}

impl FromStr for CdfMetric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        CdfMetric::ALL.into_iter().find(|m| m.name() == s).ok_or_else(|| format!("unknown metric {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ExportOptions {
    /// Also write `link_stats_trimmed.csv` with RTTs above this per-link quantile removed.
    pub trim_q: Option<f64>,
}

#[derive(Serialize)]
struct CdfRow {
    value: f64,
    cumulative_fraction: f64,
}

#[derive(Serialize)]
struct AsymRow {
    initiator: String,
    responder: String,
    count: usize,
    excluded: usize,
    mean: Option<f64>,
    sd: Option<f64>,
    cv: Option<f64>,
    q25: Option<f64>,
    median: Option<f64>,
    q75: Option<f64>,
    q90: Option<f64>,
    q95: Option<f64>,
    q99: Option<f64>,
    trimmed_mean: Option<f64>,
}

#[derive(Serialize)]
struct RttRow {
    src: u8,
    dst: u8,
    seq: u32,
    wall_time_ms: u64,
    rtt_ms: f64,
}

fn write_csv<T: Serialize>(path: PathBuf, rows: impl IntoIterator<Item = T>) -> Result<PathBuf, AnalysisError> {
    let mut w = csv::Writer::from_path(&path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(path)
}

/// Like [`write_csv`], but emits the header even with no rows.
fn write_csv_with_header<T: Serialize>(
    path: PathBuf,
    header: &[&str],
    rows: Vec<T>,
) -> Result<PathBuf, AnalysisError> {
    if rows.is_empty() {
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(header)?;
        w.flush()?;
        return Ok(path);
    }
    write_csv(path, rows)
}

const LINK_HEADER: &[&str] = &[
    "src", "dst", "count", "mean_ms", "sd_ms", "cv", "min_ms", "q25_ms", "q50_ms", "q75_ms", "q90_ms", "q95_ms",
    "q99_ms", "max_ms", "sent", "lost", "loss_fraction", "owd_count", "owd_mean_ms", "owd_nonpositive", "reordered",
];

/// Writes every analysis table into `dir`; returns the files written.
pub fn write_outputs(an: &Analysis, dir: &Path, opts: ExportOptions) -> Result<Vec<PathBuf>, AnalysisError> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();

    written.push(write_csv_with_header(dir.join("link_stats.csv"), LINK_HEADER, an.link_stats.clone())?);

    if let Some(q) = opts.trim_q {
        let trimmed: Vec<LinkStats> = an
            .links
            .iter()
            .map(|(&(s, d), data)| {
                let reordered = an.matched.reordered.get(&(s, d)).copied().unwrap_or(0);
                link_stats(s, d, data, reordered, Some(q))
            })
            .collect();
        written.push(write_csv_with_header(dir.join("link_stats_trimmed.csv"), LINK_HEADER, trimmed)?);
    }

    written.push(write_csv_with_header(
        dir.join("daily.csv"),
        &[
            "day", "date", "links", "mean_rtt_ms", "mean_rtt_ci99", "median_rtt_ms", "median_rtt_ci99", "mean_cv",
            "mean_cv_ci99", "mean_loss", "mean_loss_ci99",
        ],
        an.daily.clone(),
    )?);

    for metric in CdfMetric::ALL {
        let rows: Vec<CdfRow> = cdf_points(&metric.values(an))
            .into_iter()
            .map(|(value, cumulative_fraction)| CdfRow { value, cumulative_fraction })
            .collect();
        let path = dir.join(format!("cdf_{}.csv", metric.name()));
        written.push(write_csv_with_header(path, &["value", "cumulative_fraction"], rows)?);
    }

    let asym = an.asymmetry.iter().map(|r| {
        let (initiator, responder) = match r.pair {
            Some((a, b)) => (a.to_string(), b.to_string()),
            None => ("all".to_string(), "all".to_string()),
        };
        let s = r.summary;
        AsymRow {
            initiator,
            responder,
            count: s.map_or(0, |s| s.count),
            excluded: r.excluded,
            mean: s.map(|s| s.mean),
            sd: s.map(|s| s.sd),
            cv: s.map(|s| s.cv),
            q25: s.map(|s| s.q25),
            median: s.map(|s| s.median),
            q75: s.map(|s| s.q75),
            q90: s.map(|s| s.q90),
            q95: s.map(|s| s.q95),
            q99: s.map(|s| s.q99),
            trimmed_mean: s.map(|s| s.trimmed_mean),
        }
    });
    written.push(write_csv(dir.join("asymmetry.csv"), asym)?);

    let rtt_rows: Vec<RttRow> = an
        .samples
        .iter()
        .flat_map(|s| {
            let ab = s.rtt_ab_ms.map(|r| (s.initiator, s.responder, r));
            let ba = s.rtt_ba_ms.map(|r| (s.responder, s.initiator, r));
            ab.into_iter().chain(ba).map(move |(src, dst, rtt_ms)| RttRow {
                src: src.0,
                dst: dst.0,
                seq: s.seq,
                wall_time_ms: s.wall_time_ms,
                rtt_ms,
            })
        })
        .collect();
    written.push(write_csv_with_header(dir.join("rtt.csv"), &["src", "dst", "seq", "wall_time_ms", "rtt_ms"], rtt_rows)?);

    written.push(write_csv_with_header(
        dir.join("rounds.csv"),
        &[
            "initiator", "responder", "seq", "wall_time_ms", "rtt_ab_ms", "rtt_ba_ms", "fwd_delay_ms", "rev_delay_ms",
            "fwd_check_ms",
        ],
        an.samples.clone(),
    )?);
    Ok(written)
}

pub fn read_link_stats(path: &Path) -> Result<Vec<LinkStats>, AnalysisError> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<Result<Vec<LinkStats>, _>>()?)
}
