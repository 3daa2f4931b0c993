use std::fmt::Write as _;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use twp_core::analysis::{self, read_link_stats, write_outputs, ExportOptions, LinkStats};
use twp_core::clustering::{
    assign_all, build_features, cluster_label, cluster_summary, direction_crosstab_lenient, em_fit, ClusterRow,
};
use twp_core::coordinator::Roster;
use twp_core::distfit::{probability_plot, rank_fits, subsample, DistFamily, DistParams};
use twp_core::simnet::{run_scenario, SimConfig, ROSTER_FILE};
use twp_core::wire::read_log_tree;

use crate::error::CliError;
use crate::{AnalyzeArgs, ClusterArgs, FitArgs, ReportArgs, SimArgs, SynthArgs};

fn ci_mode() -> bool {
    std::env::var("CI").is_ok_and(|v| v == "1" || v.eq_ignore_ascii_case("true"))
}

/// The explicit seed, or a fresh one (reported on stderr) outside CI mode.
fn resolve_seed(seed: Option<u64>) -> Result<u64, CliError> {
    match seed {
        Some(s) => Ok(s),
        None if ci_mode() => Err(CliError::Usage("--seed is required when CI=1".into())),
        None => {
            let s = rand::random();
            eprintln!("seed {s}");
            Ok(s)
        }
    }
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

pub fn sim(a: SimArgs) -> Result<(), CliError> {
    let mut cfg = SimConfig::from_toml(&read_text(&a.config)?)?;
    match a.seed {
        Some(s) => cfg.seed = s,
        None if ci_mode() => return Err(CliError::Usage("--seed is required when CI=1".into())),
        None => {}
    }
    let out = run_scenario(&cfg)?;
    out.write(&a.out_dir)?;
    eprintln!(
        "{} nodes, {} datagrams sent, {} lost",
        cfg.nodes, out.stats.datagrams_sent, out.stats.datagrams_lost
    );
    Ok(())
}

pub fn analyze(a: AnalyzeArgs) -> Result<(), CliError> {
    let roster_path = a.roster.unwrap_or_else(|| a.logs.join(ROSTER_FILE));
    let roster = Roster::from_line(read_text(&roster_path)?.trim_end())
        .map_err(|e| CliError::Data(format!("{}: {e}", roster_path.display())))?;
    if let Some(q) = a.trim_q {
        if !(q > 0.0 && q <= 1.0) {
            return Err(CliError::Usage(format!("--trim-q must lie in (0, 1], got {q}")));
        }
    }
    let logs = read_log_tree(&a.logs)?;
    if let Some((id, _)) = logs.iter().find(|(id, _)| id.index() >= roster.len()) {
        return Err(CliError::Data(format!("log directory for node {id} is outside the {}-node roster", roster.len())));
    }
    let an = analysis::analyze(&logs, roster.len(), a.trim_q)?;
    let m = &an.matched;
    if m.rejected + m.orphan_receives > 0 {
        eprintln!("{} records rejected, {} receives without a matching send", m.rejected, m.orphan_receives);
    }
    for f in write_outputs(&an, &a.out, ExportOptions { trim_q: a.trim_q })? {
        println!("{}", f.display());
    }
    Ok(())
}

/// Values from the `rtt_ms` or `value` column, or from a headerless single column.
fn read_values(path: &Path) -> Result<Vec<f64>, CliError> {
    let text = read_text(path)?;
    let mut r = csv::ReaderBuilder::new().has_headers(false).from_reader(text.as_bytes());
    let mut records = r.records();
    let first = match records.next() {
        Some(rec) => rec?,
        None => return Err(CliError::Data(format!("{}: empty input", path.display()))),
    };
    let parse = |s: &str, line: u64| {
        s.trim().parse::<f64>().map_err(|_| CliError::Data(format!("{}:{line}: not a number: {s:?}", path.display())))
    };
    let (col, mut values) = match first.iter().position(|h| h == "rtt_ms" || h == "value") {
        Some(c) => (c, Vec::new()),
        None if first.len() == 1 => (0, vec![parse(&first[0], 1)?]),
        None => {
            return Err(CliError::Data(format!("{}: no rtt_ms or value column", path.display())));
        }
    };
    for (i, rec) in records.enumerate() {
        let rec = rec?;
        let field = rec.get(col).ok_or_else(|| CliError::Data(format!("{}:{}: missing column", path.display(), i + 2)))?;
        values.push(parse(field, i as u64 + 2)?);
    }
    Ok(values)
}

fn parse_families(s: &str) -> Result<Vec<DistFamily>, CliError> {
    if s == "all" {
        return Ok(DistFamily::ALL.to_vec());
    }
    s.split(',').map(|f| f.trim().parse::<DistFamily>().map_err(CliError::from)).collect()
}

#[derive(Serialize)]
struct FitRow {
    rank: Option<usize>,
    family: &'static str,
    n: usize,
    ad_stat: Option<f64>,
    shape: Option<f64>,
    scale: Option<f64>,
    location: Option<f64>,
    threshold: Option<f64>,
    error: Option<String>,
}

#[derive(Serialize)]
struct PlotRow {
    family: &'static str,
    empirical: f64,
    model: f64,
}

pub fn fit(a: FitArgs) -> Result<(), CliError> {
    let families = parse_families(&a.families)?;
    let mut data = read_values(&a.input)?;
    if a.subsample != 1.0 {
        let seed = resolve_seed(a.seed)?;
        data = subsample(&data, a.subsample, &mut ChaCha8Rng::seed_from_u64(seed))?;
    }
    let ranking = rank_fits(&data, &families);
    let mut w = csv::Writer::from_path(&a.out)?;
    for (i, r) in ranking.results.iter().enumerate() {
        w.serialize(FitRow {
            rank: Some(i + 1),
            family: r.params.family().key(),
            n: r.n,
            ad_stat: Some(r.ad_stat),
            shape: r.params.shape(),
            scale: Some(r.params.scale()),
            location: r.params.location(),
            threshold: r.params.threshold(),
            error: None,
        })?;
    }
    for f in &ranking.failures {
        eprintln!("{}: {}", f.family, f.reason);
        w.serialize(FitRow {
            rank: None,
            family: f.family.key(),
            n: data.len(),
            ad_stat: None,
            shape: None,
            scale: None,
            location: None,
            threshold: None,
            error: Some(f.reason.clone()),
        })?;
    }
    w.flush()?;
    if let Some(path) = a.plot_data {
        let mut w = csv::Writer::from_path(path)?;
        for r in &ranking.results {
            for (empirical, model) in probability_plot(&data, &r.params) {
                w.serialize(PlotRow { family: r.params.family().key(), empirical, model })?;
            }
        }
        w.flush()?;
    }
    if ranking.results.is_empty() {
        return Err(CliError::Data("no family could be fitted".into()));
    }
    Ok(())
}

fn synth_params(a: &SynthArgs) -> Result<DistParams, CliError> {
    let family: DistFamily = a.family.parse()?;
    let need = |v: Option<f64>, name: &str| {
        v.ok_or_else(|| CliError::Usage(format!("--family {} needs --{name}", family.key())))
    };
    let p = match family {
        DistFamily::Gamma => DistParams::Gamma { shape: need(a.shape, "shape")?, scale: need(a.scale, "scale")? },
        DistFamily::Weibull => DistParams::Weibull { shape: need(a.shape, "shape")?, scale: need(a.scale, "scale")? },
        DistFamily::Weibull3 => DistParams::Weibull3 {
            shape: need(a.shape, "shape")?,
            scale: need(a.scale, "scale")?,
            threshold: need(a.threshold, "threshold")?,
        },
        DistFamily::Lognormal => {
            DistParams::Lognormal { location: need(a.location, "location")?, scale: need(a.scale, "scale")? }
        }
        DistFamily::Normal => DistParams::Normal { location: need(a.location, "location")?, scale: need(a.scale, "scale")? },
        DistFamily::Lognormal3 => DistParams::Lognormal3 {
            location: need(a.location, "location")?,
            scale: need(a.scale, "scale")?,
            threshold: need(a.threshold, "threshold")?,
        },
        DistFamily::Loglogistic3 => DistParams::Loglogistic3 {
            location: need(a.location, "location")?,
            scale: need(a.scale, "scale")?,
            threshold: need(a.threshold, "threshold")?,
        },
        DistFamily::Exponential2 => {
            DistParams::Exponential2 { scale: need(a.scale, "scale")?, threshold: need(a.threshold, "threshold")? }
        }
    };
    p.validate()?;
    Ok(p)
}

pub fn synth(a: SynthArgs) -> Result<(), CliError> {
    let params = synth_params(&a)?;
    let mut rng = ChaCha8Rng::seed_from_u64(resolve_seed(a.seed)?);
    let stdout = io::stdout();
    let mut out = BufWriter::new(stdout.lock());
    for _ in 0..a.n {
        writeln!(out, "{}", params.draw(&mut rng))?;
    }
    out.flush()?;
    Ok(())
}

fn write_summary<W: Write>(w: W, rows: &[ClusterRow]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(w);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn cluster(a: ClusterArgs) -> Result<(), CliError> {
    if a.k == 0 {
        return Err(CliError::Usage("--k must be at least 1".into()));
    }
    if !(2..=3).contains(&a.out.len()) {
        return Err(CliError::Usage("--out takes clusters.csv,crosstab.csv[,summary.csv]".into()));
    }
    let seed = resolve_seed(a.seed)?;
    let stats = read_link_stats(&a.stats)?;
    let features = build_features(&stats);
    for s in &features.skipped {
        eprintln!("skipping {}->{}: {}", s.link.0, s.link.1, s.reason);
    }
    for d in &features.dropped {
        eprintln!("warning: dropping constant feature {d}");
    }
    let model = em_fit(&features.vectors, a.k, a.restarts, &mut ChaCha8Rng::seed_from_u64(seed))
        .map_err(|e| CliError::Data(e.to_string()))?;
    let assignments = assign_all(&model, &features).map_err(|e| CliError::Runtime(e.to_string()))?;

    let mut w = csv::Writer::from_path(&a.out[0])?;
    let mut header = vec!["src".to_string(), "dst".into(), "cluster".into()];
    header.extend((0..a.k).map(|c| format!("resp_{}", cluster_label(c))));
    w.write_record(&header)?;
    for x in &assignments {
        let mut rec = vec![x.link.0.to_string(), x.link.1.to_string(), cluster_label(x.cluster)];
        rec.extend(x.responsibilities.iter().map(|r| r.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;

    let table = direction_crosstab_lenient(&assignments, a.k);
    if !table.unpaired.is_empty() {
        eprintln!("{} links have no clustered reverse direction; left out of the cross-tab", table.unpaired.len());
    }
    let mut w = csv::Writer::from_path(&a.out[1])?;
    for r in table.to_rows() {
        w.write_record(&r)?;
    }
    w.flush()?;

    let rows = cluster_summary(&assignments, &stats, a.k);
    match a.out.get(2) {
        Some(p) => write_summary(fs::File::create(p)?, &rows)?,
        None => write_summary(io::stdout().lock(), &rows)?,
    }
    eprintln!("log-likelihood {:.6} after {} iterations", model.log_likelihood, model.iterations);
    Ok(())
}

/// A CSV file as a Markdown table.
fn markdown_table(path: &Path) -> Result<String, CliError> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    let mut s = format!("| {} |\n|{}\n", header.join(" | "), "---|".repeat(header.len()));
    for rec in r.records() {
        let rec = rec?;
        let cells: Vec<&str> = rec.iter().collect();
        let _ = writeln!(s, "| {} |", cells.join(" | "));
    }
    Ok(s)
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn fmt_opt(v: Option<f64>, digits: usize) -> String {
    v.map_or("n/a".into(), |v| format!("{v:.digits$}"))
}

pub fn report(a: ReportArgs) -> Result<(), CliError> {
    let stats: Vec<LinkStats> = read_link_stats(&a.analysis.join("link_stats.csv"))?;
    let sent: u64 = stats.iter().map(|s| s.sent).sum();
    let lost: u64 = stats.iter().map(|s| s.lost).sum();
    let samples: usize = stats.iter().map(|s| s.count).sum();

    let mut md = String::from("# Experiment summary\n\n");
    let _ = writeln!(md, "| metric | value |\n|---|---|");
    let _ = writeln!(md, "| directed links | {} |", stats.len());
    let _ = writeln!(md, "| RTT samples | {samples} |");
    let _ = writeln!(md, "| mean of link mean RTTs (ms) | {} |", fmt_opt(mean(stats.iter().filter_map(|s| s.mean_ms)), 2));
    let _ = writeln!(md, "| mean of link median RTTs (ms) | {} |", fmt_opt(mean(stats.iter().filter_map(|s| s.q50_ms)), 2));
    let _ = writeln!(md, "| mean link CV | {} |", fmt_opt(mean(stats.iter().filter_map(|s| s.cv)), 3));
    let overall = (sent > 0).then(|| 100.0 * lost as f64 / sent as f64);
    let _ = writeln!(md, "| datagrams sent / lost | {sent} / {lost} ({}%) |", fmt_opt(overall, 3));

    let sections: [(&str, Option<PathBuf>); 4] = [
        ("Daily aggregates", Some(a.analysis.join("daily.csv"))),
        ("One-way delay asymmetry", Some(a.analysis.join("asymmetry.csv"))),
        ("Distribution fits", a.fit),
        ("Link clusters", a.clusters),
    ];
    for (title, path) in sections {
        if let Some(p) = path.filter(|p| p.exists()) {
            let _ = write!(md, "\n## {title}\n\n{}", markdown_table(&p)?);
        }
    }
    fs::write(&a.out, md)?;
    Ok(())
}
