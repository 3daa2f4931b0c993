//! Gaussian-mixture clustering of directed links.
//!
//! Each directed link becomes one z-scored feature vector. A diagonal
//! mixture is fitted by EM with k-means++ starts; components are returned
//! in ascending order of their first coordinate (mean RTT when present).

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::analysis::{descriptive_stats, LinkStats};
use crate::distfit::DistParams;
use crate::wire::NodeId;

pub const FEATURE_NAMES: [&str; 8] = ["mean_ms", "q25_ms", "q50_ms", "q75_ms", "q90_ms", "q99_ms", "cv", "loss_fraction"];
pub const MIN_LINK_SAMPLES: usize = 30;
pub const VARIANCE_FLOOR: f64 = 1e-6;
pub const DEFAULT_K: usize = 5;
pub const DEFAULT_RESTARTS: usize = 10;
pub const MAX_ITER: usize = 200;
pub const LL_TOL: f64 = 1e-6;

pub type Link = (NodeId, NodeId);

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ClusterError {
    #[error("link {}->{} has {count} samples, need {MIN_LINK_SAMPLES}", .link.0, .link.1)]
    TooFewSamples { link: Link, count: usize },
    #[error("{n} points cannot support {k} components")]
    TooFewPoints { n: usize, k: usize },
    #[error("expected {expected} dimensions, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("no link {}->{} to pair with {}->{}", .0.1, .0.0, .0.0, .0.1)]
    MissingDirection(Link),
    #[error("every feature is constant; nothing to cluster")]
    NoFeatures,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkippedLink {
    pub link: Link,
    pub reason: ClusterError,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    /// Links in ascending (src, dst) order, one per row of `vectors`.
    pub links: Vec<Link>,
    pub vectors: Vec<Vec<f64>>,
    /// Names of the kept dimensions.
    pub dims: Vec<&'static str>,
    /// Dimensions removed for being constant across links.
    pub dropped: Vec<&'static str>,
    pub skipped: Vec<SkippedLink>,
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
}

fn raw_features(s: &LinkStats) -> Option<[f64; 8]> {
    Some([
        s.mean_ms?,
        s.q25_ms?,
        s.q50_ms?,
        s.q75_ms?,
        s.q90_ms?,
        s.q99_ms?,
        s.cv?,
        s.loss_fraction.unwrap_or(0.0),
    ])
}

/// Population mean and sd.
fn moments(col: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = col.clone().count() as f64;
    let mean = col.clone().sum::<f64>() / n;
    let var = col.map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn build_features(stats: &[LinkStats]) -> FeatureSet {
    let mut rows: Vec<(Link, [f64; 8])> = Vec::new();
    let mut skipped = Vec::new();
    for s in stats {
        let link = s.link();
        match raw_features(s).filter(|f| s.count >= MIN_LINK_SAMPLES && f.iter().all(|x| x.is_finite())) {
            Some(f) => rows.push((link, f)),
            None => skipped.push(SkippedLink { link, reason: ClusterError::TooFewSamples { link, count: s.count } }),
        }
    }
    rows.sort_by_key(|(l, _)| *l);

    let mut dims = Vec::new();
    let mut dropped = Vec::new();
    let mut means = Vec::new();
    let mut sds = Vec::new();
    let mut kept = Vec::new();
    for (j, name) in FEATURE_NAMES.iter().enumerate() {
        if rows.is_empty() {
            break;
        }
        let (m, sd) = moments(rows.iter().map(|(_, f)| f[j]));
        if sd <= 1e-12 * m.abs().max(1.0) {
            dropped.push(*name);
        } else {
            dims.push(*name);
            means.push(m);
            sds.push(sd);
            kept.push(j);
        }
    }
    let vectors = rows
        .iter()
        .map(|(_, f)| kept.iter().enumerate().map(|(d, &j)| (f[j] - means[d]) / sds[d]).collect())
        .collect();
    FeatureSet { links: rows.into_iter().map(|(l, _)| l).collect(), vectors, dims, dropped, skipped, means, sds }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GmmModel {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub variances: Vec<Vec<f64>>,
    pub log_likelihood: f64,
    pub iterations: usize,
    /// Total log-likelihood after each E-step of the winning run.
    pub ll_history: Vec<f64>,
}

impl GmmModel {
    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn dims(&self) -> usize {
        self.means.first().map_or(0, Vec::len)
    }

    fn log_joint(&self, x: &[f64], out: &mut [f64]) {
        for (c, o) in out.iter_mut().enumerate() {
            let mut l = self.weights[c].ln();
            for ((xi, mu), var) in x.iter().zip(&self.means[c]).zip(&self.variances[c]) {
                l -= 0.5 * ((2.0 * PI * var).ln() + (xi - mu).powi(2) / var);
            }
            *o = l;
        }
    }
}

/// Normalises log weights in place; returns their log-sum-exp.
fn softmax(l: &mut [f64]) -> f64 {
    let max = l.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = l.iter().map(|v| (v - max).exp()).sum();
    for v in l.iter_mut() {
        *v = (*v - max).exp() / sum;
    }
    max + sum.ln()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

fn kmeans_pp<R: Rng + ?Sized>(data: &[Vec<f64>], k: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut centers = vec![data[rng.gen_range(0..data.len())].clone()];
    let mut d2: Vec<f64> = data.iter().map(|x| sq_dist(x, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let idx = if total > 0.0 {
            let mut u = rng.gen::<f64>() * total;
            let mut pick = data.len() - 1;
            for (i, &w) in d2.iter().enumerate() {
                if u < w {
                    pick = i;
                    break;
                }
                u -= w;
            }
            pick
        } else {
            rng.gen_range(0..data.len())
        };
        let c = data[idx].clone();
        for (d, x) in d2.iter_mut().zip(data) {
            *d = d.min(sq_dist(x, &c));
        }
        centers.push(c);
    }
    centers
}

struct Run {
    model: GmmModel,
    resp: Vec<Vec<f64>>,
}

impl Run {
    fn e_step(&mut self, data: &[Vec<f64>]) -> f64 {
        let mut ll = 0.0;
        for (x, r) in data.iter().zip(self.resp.iter_mut()) {
            self.model.log_joint(x, r);
            ll += softmax(r);
        }
        ll
    }

    fn m_step(&mut self, data: &[Vec<f64>]) {
        let n = data.len() as f64;
        let d = self.model.dims();
        for c in 0..self.model.k() {
            let nk: f64 = self.resp.iter().map(|r| r[c]).sum();
            self.model.weights[c] = nk / n;
            if nk <= 1e-300 {
                continue;
            }
            let mut mu = vec![0.0; d];
            for (x, r) in data.iter().zip(&self.resp) {
                for (m, xi) in mu.iter_mut().zip(x) {
                    *m += r[c] * xi;
                }
            }
            mu.iter_mut().for_each(|m| *m /= nk);
            let mut var = vec![0.0; d];
            for (x, r) in data.iter().zip(&self.resp) {
                for ((v, xi), m) in var.iter_mut().zip(x).zip(&mu) {
                    *v += r[c] * (xi - m).powi(2);
                }
            }
            var.iter_mut().for_each(|v| *v = (*v / nk).max(VARIANCE_FLOOR));
            self.model.means[c] = mu;
            self.model.variances[c] = var;
        }
    }
}

/// Slack for round-off when checking that EM never loses likelihood.
fn ll_slack(ll: f64) -> f64 {
    1e-9 * ll.abs().max(1.0)
}

/// One EM run from a k-means++ start.
pub fn em_run<R: Rng + ?Sized>(data: &[Vec<f64>], k: usize, rng: &mut R) -> Result<GmmModel, ClusterError> {
    check_input(data, k)?;
    let d = data[0].len();
    let centers = kmeans_pp(data, k, rng);
    let global_var: Vec<f64> = (0..d)
        .map(|j| moments(data.iter().map(|x| x[j])).1.powi(2).max(VARIANCE_FLOOR))
        .collect();
    let mut run = Run {
        model: GmmModel {
            weights: vec![1.0 / k as f64; k],
            means: centers,
            variances: vec![global_var; k],
            log_likelihood: f64::NEG_INFINITY,
            iterations: 0,
            ll_history: Vec::new(),
        },
        resp: vec![vec![0.0; k]; data.len()],
    };
    let mut ll = run.e_step(data);
    run.model.ll_history.push(ll);
    for it in 1..=MAX_ITER {
        run.m_step(data);
        let next = run.e_step(data);
        assert!(next >= ll - ll_slack(ll), "EM log-likelihood fell from {ll} to {next} at iteration {it}");
        run.model.ll_history.push(next);
        run.model.iterations = it;
        let gain = next - ll;
        ll = next;
        if gain < LL_TOL {
            break;
        }
    }
    run.model.log_likelihood = ll;
    Ok(sort_components(run.model))
}

fn sort_components(mut m: GmmModel) -> GmmModel {
    let mut order: Vec<usize> = (0..m.k()).collect();
    order.sort_by(|&a, &b| {
        let key = |c: usize| m.means[c].first().copied().unwrap_or(0.0);
        key(a).total_cmp(&key(b)).then(a.cmp(&b))
    });
    m.weights = order.iter().map(|&c| m.weights[c]).collect();
    m.means = order.iter().map(|&c| m.means[c].clone()).collect();
    m.variances = order.iter().map(|&c| m.variances[c].clone()).collect();
    m
}

fn check_input(data: &[Vec<f64>], k: usize) -> Result<(), ClusterError> {
    if k == 0 || data.len() < k {
        return Err(ClusterError::TooFewPoints { n: data.len(), k });
    }
    let d = data[0].len();
    if d == 0 {
        return Err(ClusterError::NoFeatures);
    }
    if let Some(x) = data.iter().find(|x| x.len() != d) {
        return Err(ClusterError::DimensionMismatch { expected: d, got: x.len() });
    }
    Ok(())
}

/// Best of `restarts` EM runs by final log-likelihood. Each run is seeded
/// from `rng`, so results do not depend on thread scheduling.
pub fn em_fit<R: Rng + ?Sized>(
    data: &[Vec<f64>],
    k: usize,
    restarts: usize,
    rng: &mut R,
) -> Result<GmmModel, ClusterError> {
    check_input(data, k)?;
    let seeds: Vec<u64> = (0..restarts.max(1)).map(|_| rng.gen()).collect();
    let runs: Vec<GmmModel> = seeds
        .par_iter()
        .map(|&s| em_run(data, k, &mut ChaCha8Rng::seed_from_u64(s)))
        .collect::<Result<_, _>>()?;
    let mut best = 0;
    for (i, r) in runs.iter().enumerate() {
        if r.log_likelihood > runs[best].log_likelihood {
            best = i;
        }
    }
    Ok(runs.into_iter().nth(best).expect("at least one run"))
}

/// Hard label and posterior responsibilities for one vector.
pub fn assign(model: &GmmModel, x: &[f64]) -> Result<(usize, Vec<f64>), ClusterError> {
    if x.len() != model.dims() {
        return Err(ClusterError::DimensionMismatch { expected: model.dims(), got: x.len() });
    }
    let mut r = vec![0.0; model.k()];
    model.log_joint(x, &mut r);
    softmax(&mut r);
    let mut best = 0;
    for (c, &v) in r.iter().enumerate() {
        if v > r[best] {
            best = c;
        }
    }
    Ok((best, r))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterAssignment {
    pub link: Link,
    pub cluster: usize,
    pub responsibilities: Vec<f64>,
}

pub fn assign_all(model: &GmmModel, features: &FeatureSet) -> Result<Vec<ClusterAssignment>, ClusterError> {
    features
        .links
        .iter()
        .zip(&features.vectors)
        .map(|(&link, x)| assign(model, x).map(|(cluster, responsibilities)| ClusterAssignment { link, cluster, responsibilities }))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterRow {
    /// `c1`, `c2`, ... or `Global`.
    pub cluster: String,
    pub links: usize,
    pub pct_links: f64,
    pub mean_rtt_ms: Option<f64>,
    pub cv: Option<f64>,
    pub loss_pct: Option<f64>,
}

pub fn cluster_label(c: usize) -> String {
    format!("c{}", c + 1)
}

fn mean_of(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

/// Unweighted per-cluster means over member links, then a `Global` row.
pub fn cluster_summary(assignments: &[ClusterAssignment], stats: &[LinkStats], k: usize) -> Vec<ClusterRow> {
    let by_link: BTreeMap<Link, &LinkStats> = stats.iter().map(|s| (s.link(), s)).collect();
    let total = assignments.len();
    let row = |name: String, members: Vec<&LinkStats>| ClusterRow {
        cluster: name,
        links: members.len(),
        pct_links: if total == 0 { 0.0 } else { 100.0 * members.len() as f64 / total as f64 },
        mean_rtt_ms: mean_of(members.iter().filter_map(|s| s.mean_ms)),
        cv: mean_of(members.iter().filter_map(|s| s.cv)),
        loss_pct: mean_of(members.iter().filter_map(|s| s.loss_fraction)).map(|l| 100.0 * l),
    };
    let members = |pred: &dyn Fn(usize) -> bool| -> Vec<&LinkStats> {
        assignments.iter().filter(|a| pred(a.cluster)).filter_map(|a| by_link.get(&a.link).copied()).collect()
    };
    let mut rows: Vec<ClusterRow> = (0..k).map(|c| row(cluster_label(c), members(&|x| x == c))).collect();
    rows.push(row("Global".into(), members(&|_| true)));
    rows
}

#[derive(Debug, Clone, PartialEq)]
pub struct Crosstab {
    pub k: usize,
    /// `cells[i][j]` for i ≤ j counts pairs with one direction in ci and the other in cj.
    pub cells: Vec<Vec<u64>>,
    /// Same-cluster pairs over all pairs with at least one direction in the cluster.
    pub diagonal_pct: Vec<Option<f64>>,
    /// Links whose reverse direction was not assigned.
    pub unpaired: Vec<Link>,
}

fn crosstab_inner(assignments: &[ClusterAssignment], k: usize) -> Crosstab {
    let by_link: BTreeMap<Link, usize> = assignments.iter().map(|a| (a.link, a.cluster)).collect();
    let mut cells = vec![vec![0u64; k]; k];
    let mut unpaired = Vec::new();
    for (&(a, b), &ca) in &by_link {
        match by_link.get(&(b, a)) {
            Some(&cb) if a < b => cells[ca.min(cb)][ca.max(cb)] += 1,
            Some(_) => {}
            None => unpaired.push((a, b)),
        }
    }
    let diagonal_pct = (0..k)
        .map(|c| {
            let touching: u64 = (0..k).map(|j| cells[c.min(j)][c.max(j)]).sum();
            (touching > 0).then(|| 100.0 * cells[c][c] as f64 / touching as f64)
        })
        .collect();
    Crosstab { k, cells, diagonal_pct, unpaired }
}

/// Cross-tabulation of the two directions of every node pair.
pub fn direction_crosstab(assignments: &[ClusterAssignment], k: usize) -> Result<Crosstab, ClusterError> {
    let t = crosstab_inner(assignments, k);
    match t.unpaired.first() {
        Some(&l) => Err(ClusterError::MissingDirection(l)),
        None => Ok(t),
    }
}

/// As [`direction_crosstab`], but links without a reverse are listed in
/// `unpaired` instead of failing.
pub fn direction_crosstab_lenient(assignments: &[ClusterAssignment], k: usize) -> Crosstab {
    crosstab_inner(assignments, k)
}

impl Crosstab {
    /// CSV rows: header, one row per cluster (upper triangle), then the diagonal percentages.
    pub fn to_rows(&self) -> Vec<Vec<String>> {
        let mut out = vec![std::iter::once("cluster".to_string()).chain((0..self.k).map(cluster_label)).collect()];
        for i in 0..self.k {
            let mut r = vec![cluster_label(i).to_uppercase()];
            r.extend((0..self.k).map(|j| if j < i { String::new() } else { self.cells[i][j].to_string() }));
            out.push(r);
        }
        let mut last = vec!["diagonal_pct".to_string()];
        last.extend(self.diagonal_pct.iter().map(|p| p.map_or(String::new(), |p| format!("{p:.0}"))));
        out.push(last);
        out
    }
}

impl fmt::Display for Crosstab {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in self.to_rows() {
            let cells: Vec<String> = r.iter().map(|c| format!("{c:>8}")).collect();
            writeln!(f, "{}", cells.join(""))?;
        }
        Ok(())
    }
}

/// Delay profile used to synthesise links with known cluster structure.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Archetype {
    pub mean_ms: f64,
    pub cv: f64,
    pub loss: f64,
}

/// Summary statistics of a link whose RTTs are Gamma with the archetype's
/// mean and CV and whose sends are lost independently at its loss rate.
pub fn synth_link_stats<R: Rng + ?Sized>(src: NodeId, dst: NodeId, a: &Archetype, samples: usize, rng: &mut R) -> LinkStats {
    let shape = 1.0 / (a.cv * a.cv);
    let g = DistParams::Gamma { shape, scale: a.mean_ms / shape };
    let rtt: Vec<f64> = (0..samples).map(|_| g.draw(rng)).collect();
    let d = descriptive_stats(&rtt).ok();
    let mut s = LinkStats::new(src, dst, d.as_ref());
    s.sent = samples as u64;
    s.lost = (0..samples).filter(|_| rng.gen::<f64>() < a.loss).count() as u64;
    s.loss_fraction = Some(s.lost as f64 / s.sent as f64);
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn stats_from(src: u8, dst: u8, rtt: &[f64], loss: f64) -> LinkStats {
        let d = descriptive_stats(rtt).unwrap();
        let mut s = LinkStats::new(NodeId(src), NodeId(dst), Some(&d));
        s.sent = 1000;
        s.lost = (loss * 1000.0) as u64;
        s.loss_fraction = Some(loss);
        s
    }

    fn ramp(base: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| base + i as f64).collect()
    }

    fn best_agreement(truth: &[usize], pred: &[usize], k: usize) -> f64 {
        let mut perm: Vec<usize> = (0..k).collect();
        let mut best = 0;
        permute(&mut perm, 0, &mut |p| {
            let hits = truth.iter().zip(pred).filter(|(t, q)| p[**q] == **t).count();
            best = best.max(hits);
        });
        best as f64 / truth.len() as f64
    }

    fn permute(p: &mut Vec<usize>, i: usize, f: &mut dyn FnMut(&[usize])) {
        if i == p.len() {
            return f(p);
        }
        for j in i..p.len() {
            p.swap(i, j);
            permute(p, i + 1, f);
            p.swap(i, j);
        }
    }

    #[test]
    fn features_standardised_and_sorted() {
        let stats = vec![
            stats_from(2, 1, &ramp(100.0, 40), 0.01),
            stats_from(0, 1, &ramp(10.0, 40), 0.00),
            stats_from(1, 0, &ramp(50.0, 50), 0.02),
            stats_from(1, 2, &ramp(50.0, 10), 0.02),
        ];
        let f = build_features(&stats);
        assert_eq!(f.links, vec![(NodeId(0), NodeId(1)), (NodeId(1), NodeId(0)), (NodeId(2), NodeId(1))]);
        assert_eq!(f.skipped.len(), 1);
        assert_eq!(f.skipped[0].reason, ClusterError::TooFewSamples { link: (NodeId(1), NodeId(2)), count: 10 });
        for j in 0..f.dims.len() {
            let (m, sd) = moments(f.vectors.iter().map(|v| v[j]));
            assert!(m.abs() < 1e-9 && (sd - 1.0).abs() < 1e-9, "{} {m} {sd}", f.dims[j]);
        }
    }

    #[test]
    fn identical_links_and_constant_dimension() {
        let a = stats_from(0, 1, &ramp(10.0, 40), 0.01);
        let b = stats_from(1, 0, &ramp(10.0, 40), 0.01);
        let c = stats_from(0, 2, &ramp(30.0, 40), 0.01);
        let f = build_features(&[a, b, c]);
        assert_eq!(f.vectors[0], f.vectors[2]);
        assert!(f.dropped.contains(&"loss_fraction"));
        assert!(!f.dims.contains(&"loss_fraction"));
    }

    #[test]
    fn k1_is_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let data: Vec<Vec<f64>> = (0..50).map(|i| vec![i as f64, (i * i) as f64 / 100.0]).collect();
        let m = em_fit(&data, 1, 3, &mut rng).unwrap();
        assert_eq!(m.weights, vec![1.0]);
        for j in 0..2 {
            let (mean, sd) = moments(data.iter().map(|x| x[j]));
            assert!((m.means[0][j] - mean).abs() < 1e-9);
            assert!((m.variances[0][j] - sd * sd).abs() < 1e-9);
        }
        let (c, r) = assign(&m, &data[7]).unwrap();
        assert_eq!((c, r), (0, vec![1.0]));
    }

    #[test]
    fn two_separated_clusters() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut data = Vec::new();
        for centre in [-5.0, 5.0] {
            let g = Normal::new(centre, 0.5).unwrap();
            data.extend((0..100).map(|_| vec![g.sample(&mut rng)]));
        }
        let m = em_fit(&data, 2, 5, &mut rng).unwrap();
        assert!((m.means[0][0] + 5.0).abs() < 0.2, "{:?}", m.means);
        assert!((m.means[1][0] - 5.0).abs() < 0.2, "{:?}", m.means);
        let (c, r) = assign(&m, &m.means[1].clone()).unwrap();
        assert_eq!(c, 1);
        assert!(r[1] > 0.99);
        assert!(m.ll_history.windows(2).all(|w| w[1] >= w[0] - ll_slack(w[0])));
    }

    #[test]
    fn errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data = vec![vec![0.0], vec![1.0]];
        assert_eq!(em_fit(&data, 3, 1, &mut rng), Err(ClusterError::TooFewPoints { n: 2, k: 3 }));
        assert!(em_fit(&data, 0, 1, &mut rng).is_err());
        let m = em_fit(&data, 1, 1, &mut rng).unwrap();
        assert_eq!(assign(&m, &[1.0, 2.0]), Err(ClusterError::DimensionMismatch { expected: 1, got: 2 }));
    }

    #[test]
    fn responsibilities_sum_to_one_and_variances_floored() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        // duplicated points drive some variances to the floor
        let mut data: Vec<Vec<f64>> = (0..30).map(|_| vec![1.0, 2.0, 3.0]).collect();
        data.extend((0..30).map(|_| vec![rng.gen::<f64>(), rng.gen(), rng.gen()]));
        let m = em_fit(&data, 3, 4, &mut rng).unwrap();
        assert!(m.variances.iter().flatten().all(|&v| v >= VARIANCE_FLOOR));
        assert!((m.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for _ in 0..200 {
            let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-10.0..10.0)).collect();
            let (c, r) = assign(&m, &x).unwrap();
            assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(r.iter().all(|&v| v >= 0.0));
            assert!(r.iter().all(|&v| v <= r[c]));
        }
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let m = GmmModel {
            weights: vec![0.5, 0.5],
            means: vec![vec![-1.0], vec![1.0]],
            variances: vec![vec![1.0], vec![1.0]],
            log_likelihood: 0.0,
            iterations: 0,
            ll_history: vec![],
        };
        assert_eq!(assign(&m, &[0.0]).unwrap().0, 0);
    }

    fn archetypes() -> [Archetype; 5] {
        [
            Archetype { mean_ms: 49.0, cv: 1.12, loss: 0.0022 },
            Archetype { mean_ms: 131.0, cv: 6.37, loss: 0.0040 },
            Archetype { mean_ms: 167.0, cv: 0.33, loss: 0.0030 },
            Archetype { mean_ms: 269.0, cv: 0.96, loss: 0.0012 },
            Archetype { mean_ms: 358.0, cv: 0.44, loss: 0.0140 },
        ]
    }

    #[test]
    fn recovers_five_archetypes() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let arch = archetypes();
        let mut stats = Vec::new();
        let mut truth = BTreeMap::new();
        for i in 0..200usize {
            let (src, dst) = (NodeId((i / 14) as u8), NodeId((i % 14) as u8 + 15));
            let c = i % 5;
            truth.insert((src, dst), c);
            stats.push(synth_link_stats(src, dst, &arch[c], 2000, &mut rng));
        }
        let f = build_features(&stats);
        assert_eq!(f.vectors.len(), 200);
        let m = em_fit(&f.vectors, 5, 10, &mut rng).unwrap();
        let a = assign_all(&m, &f).unwrap();
        let t: Vec<usize> = a.iter().map(|x| truth[&x.link]).collect();
        let p: Vec<usize> = a.iter().map(|x| x.cluster).collect();
        assert!(best_agreement(&t, &p, 5) >= 0.9);
        let rows = cluster_summary(&a, &stats, 5);
        let pct: f64 = rows[..5].iter().map(|r| r.pct_links).sum();
        assert!((pct - 100.0).abs() < 1e-9);
        assert_eq!(rows[5].links, 200);
    }

    #[test]
    fn permuted_input_gives_same_model() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let arch = archetypes();
        let mut stats: Vec<LinkStats> =
            (0..60u8).map(|i| synth_link_stats(NodeId(i), NodeId(100), &arch[(i % 3) as usize * 2], 300, &mut rng)).collect();
        let fit = |s: &[LinkStats]| {
            let f = build_features(s);
            let m = em_fit(&f.vectors, 3, 4, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
            (m.log_likelihood, assign_all(&m, &f).unwrap())
        };
        let a = fit(&stats);
        stats.reverse();
        stats.swap(3, 40);
        assert_eq!(fit(&stats), a);
    }

    fn assignment(a: u8, b: u8, c: usize) -> ClusterAssignment {
        ClusterAssignment { link: (NodeId(a), NodeId(b)), cluster: c, responsibilities: vec![] }
    }

    #[test]
    fn crosstab_counts() {
        let mut v = Vec::new();
        for p in 0..10u8 {
            let (a, b) = (2 * p, 2 * p + 1);
            v.push(assignment(a, b, 0));
            v.push(assignment(b, a, if p == 3 { 1 } else { 0 }));
        }
        let t = direction_crosstab(&v, 2).unwrap();
        assert_eq!(t.cells, vec![vec![9, 1], vec![0, 0]]);
        assert_eq!(t.diagonal_pct, vec![Some(90.0), Some(0.0)]);
        let rows = t.to_rows();
        assert_eq!(rows[0], vec!["cluster", "c1", "c2"]);
        assert_eq!(rows[2], vec!["C2", "", "0"]);
        assert_eq!(rows[3], vec!["diagonal_pct", "90", "0"]);

        let sym: Vec<_> = (0..4u8).flat_map(|p| [assignment(p, p + 10, p as usize % 2), assignment(p + 10, p, p as usize % 2)]).collect();
        let t = direction_crosstab(&sym, 2).unwrap();
        assert_eq!(t.diagonal_pct, vec![Some(100.0), Some(100.0)]);
    }

    #[test]
    fn crosstab_missing_direction() {
        let v = vec![assignment(0, 1, 0), assignment(1, 0, 0), assignment(0, 2, 1)];
        assert_eq!(direction_crosstab(&v, 2), Err(ClusterError::MissingDirection((NodeId(0), NodeId(2)))));
        assert_eq!(direction_crosstab_lenient(&v, 2).unpaired, vec![(NodeId(0), NodeId(2))]);
    }

    #[test]
    fn single_cluster_summary_matches_global() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let stats: Vec<LinkStats> =
            (0..5u8).map(|i| synth_link_stats(NodeId(i), NodeId(9), &archetypes()[0], 100, &mut rng)).collect();
        let a: Vec<_> = stats.iter().map(|s| assignment(s.src, s.dst, 0)).collect();
        let rows = cluster_summary(&a, &stats, 1);
        assert_eq!(rows[0].links, rows[1].links);
        assert_eq!(rows[0].mean_rtt_ms, rows[1].mean_rtt_ms);
        assert_eq!(rows[0].cv, rows[1].cv);
        assert_eq!(rows[0].loss_pct, rows[1].loss_pct);
        assert_eq!(rows[1].cluster, "Global");
    }
}
