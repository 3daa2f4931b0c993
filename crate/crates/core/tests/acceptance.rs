//! Acceptance checks, one line of output per criterion.

use std::collections::BTreeMap;
use std::panic::{self, AssertUnwindSafe};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use twp_core::analysis::{analyze, relative_asymmetry};
use twp_core::clustering::{
    assign, assign_all, build_features, cluster_summary, direction_crosstab, em_fit, em_run, synth_link_stats,
    Archetype,
};
use twp_core::distfit::{fit_mle, gamma_moments, rank_fits, sample, DistFamily, DistParams};
use twp_core::peer::{initiator_of, partner_at_tick, rotation_len};
use twp_core::simnet::{run_scenario, DelayModel, LinkModel, LinkSpec, SimConfig};
use twp_core::wire::{
    decode_log, encode_log, Direction, LogRecord, MessageType, NodeId, TwpMessage, MESSAGE_LEN, RECORD_LEN,
};

const SHAPE: f64 = 4.63062;
const SCALE: f64 = 43.16537;
const N_LARGE: usize = 551_000;
const T0: u64 = 1_243_382_400_000;

type Outcome = Result<String, String>;
type Criterion<'a> = (u32, &'static str, Box<dyn Fn() -> Outcome + 'a>);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($fmt)+));
        }
    };
}

fn large_gamma_sample() -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(551);
    sample(&DistParams::Gamma { shape: SHAPE, scale: SCALE }, &mut rng, N_LARGE)
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

fn permutations(k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(k - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, k - 1);
            out.push(q);
        }
    }
    out
}

/// Best label agreement and the permutation achieving it (`perm[true] = predicted`).
fn best_matching(truth: &[usize], pred: &[usize], k: usize) -> (f64, Vec<usize>) {
    let mut best = (0usize, (0..k).collect::<Vec<_>>());
    for p in permutations(k) {
        let hits = truth.iter().zip(pred).filter(|(&t, &c)| p[t] == c).count();
        if hits > best.0 {
            best = (hits, p);
        }
    }
    (best.0 as f64 / truth.len() as f64, best.1)
}

fn c1_asymmetry() -> Outcome {
    let a = relative_asymmetry(60.0, 90.0).map_err(|e| e.to_string())?;
    ensure!(a == 0.5, "relative_asymmetry(60, 90) = {a}");
    Ok(format!("asymmetry {a:.2}"))
}

fn c2_gamma_moments() -> Outcome {
    let m = gamma_moments(&DistParams::Gamma { shape: SHAPE, scale: SCALE }).map_err(|e| e.to_string())?;
    ensure!((198.9..=200.9).contains(&m.mean), "mean {}", m.mean);
    ensure!((m.skewness - 0.927).abs() <= 0.005, "skewness {}", m.skewness);
    ensure!((m.excess_kurtosis - 1.294).abs() <= 0.005, "excess kurtosis {}", m.excess_kurtosis);
    Ok(format!("mean {:.2}, skewness {:.4}, excess kurtosis {:.4}", m.mean, m.skewness, m.excess_kurtosis))
}

fn c3_fit_recovery(data: &[f64]) -> Outcome {
    let p = fit_mle(DistFamily::Gamma, data).map_err(|e| e.to_string())?;
    let DistParams::Gamma { shape, scale } = p else {
        return Err(format!("unexpected params {p:?}"));
    };
    let (es, ec) = ((shape - SHAPE).abs() / SHAPE, (scale - SCALE).abs() / SCALE);
    ensure!(es <= 0.02, "shape {shape} off by {:.2}%", 100.0 * es);
    ensure!(ec <= 0.02, "scale {scale} off by {:.2}%", 100.0 * ec);
    Ok(format!("n {}, shape {shape:.4}, scale {scale:.4}", data.len()))
}

fn c4_ad_ordering(data: &[f64]) -> Outcome {
    let r = rank_fits(data, &DistFamily::ALL);
    let pos = |f: DistFamily| r.results.iter().position(|x| x.params.family() == f);
    let ad = |f: DistFamily| r.results.iter().find(|x| x.params.family() == f).map(|x| x.ad_stat);
    let (Some(g), Some(n), Some(e)) = (pos(DistFamily::Gamma), pos(DistFamily::Normal), pos(DistFamily::Exponential2))
    else {
        return Err(format!("missing fits; failures {:?}", r.failures));
    };
    let (ag, an, ae) = (ad(DistFamily::Gamma).unwrap(), ad(DistFamily::Normal).unwrap(), ad(DistFamily::Exponential2).unwrap());
    ensure!(g < n && n < e, "rank gamma {g}, normal {n}, exponential2 {e}");
    ensure!(ag < an && an < ae, "A² gamma {ag}, normal {an}, exponential2 {ae}");
    Ok(format!("A² gamma {ag:.1} < normal {an:.1} < exponential2 {ae:.1}"))
}

fn c5_simulation() -> Outcome {
    const NODES: usize = 5;
    const LOSS: f64 = 0.005;
    const GAMMA_SHAPE: f64 = 25.0;
    let control = |s: usize, d: usize| match (s, d) {
        (0, 1) => Some(20.0),
        (1, 0) => Some(30.0),
        _ => None,
    };
    let mut expected = BTreeMap::new();
    let mut links = Vec::new();
    for s in 0..NODES {
        for d in (0..NODES).filter(|&d| d != s) {
            let (delay, loss, mean) = match control(s, d) {
                Some(c) => (DelayModel::Constant { constant_ms: c }, 0.0, c),
                None => {
                    let scale = 0.4 + 0.1 * (s * NODES + d) as f64;
                    (DelayModel::Dist(DistParams::Gamma { shape: GAMMA_SHAPE, scale }), LOSS, GAMMA_SHAPE * scale)
                }
            };
            expected.insert((NodeId(s as u8), NodeId(d as u8)), (mean, loss));
            links.push(LinkSpec { src: s as u8, dst: d as u8, both: false, loss, delay });
        }
    }
    let mut cfg = SimConfig::uniform(NODES, 1000, LinkModel::constant(1.0));
    cfg.seed = 2009;
    cfg.links = links;

    let out = run_scenario(&cfg).map_err(|e| e.to_string())?;
    let logs: Vec<(NodeId, Vec<LogRecord>)> = out
        .node_logs()
        .map_err(|e| e.to_string())?
        .iter()
        .enumerate()
        .map(|(i, b)| Ok((NodeId(i as u8), decode_log(b).map_err(|e| e.to_string())?)))
        .collect::<Result<_, String>>()?;
    let an = analyze(&logs, NODES, None).map_err(|e| e.to_string())?;

    let mut worst_owd: f64 = 0.0;
    let mut worst_z: f64 = 0.0;
    for (&(s, d), &(mean, loss)) in &expected {
        let st = an.stats_for(s, d).ok_or(format!("no stats for {}->{}", s.0, d.0))?;
        let owd = st.owd_mean_ms.ok_or(format!("no one-way delays on {}->{}", s.0, d.0))?;
        let rel = (owd - mean).abs() / mean;
        ensure!(rel <= 0.05, "{}->{} one-way mean {owd:.3} vs {mean:.3}", s.0, d.0);
        worst_owd = worst_owd.max(rel);

        ensure!(st.sent > 0, "{}->{} sent nothing", s.0, d.0);
        let observed = st.lost as f64 / st.sent as f64;
        if loss == 0.0 {
            ensure!(st.lost == 0, "{}->{} lost {} on a lossless link", s.0, d.0, st.lost);
        } else {
            let sigma = (loss * (1.0 - loss) / st.sent as f64).sqrt();
            let z = (observed - loss).abs() / sigma;
            ensure!(z <= 3.0, "{}->{} loss {observed:.5} is {z:.2} sigma from {loss}", s.0, d.0);
            worst_z = worst_z.max(z);
        }
    }

    let mut control_rounds = 0;
    for smp in an.samples.iter().filter(|x| control(x.initiator.index(), x.responder.index()).is_some()) {
        let (Some(f), Some(r), Some(rtt)) = (smp.fwd_delay_ms, smp.rev_delay_ms, smp.rtt_ab_ms) else {
            continue;
        };
        ensure!(f + r == rtt, "seq {}: {f} + {r} != {rtt}", smp.seq);
        control_rounds += 1;
    }
    ensure!(control_rounds > 100, "only {control_rounds} complete control rounds");
    Ok(format!(
        "{} links, worst one-way error {:.2}%, worst loss z {worst_z:.2}, {control_rounds} exact control rounds",
        expected.len(),
        100.0 * worst_owd
    ))
}

fn c6_cluster_recovery() -> Outcome {
    let arch = archetypes();
    let mut rng = ChaCha8Rng::seed_from_u64(1606);
    let mut stats = Vec::new();
    let mut truth = BTreeMap::new();
    for i in 0..200usize {
        let (src, dst) = (NodeId((i / 20) as u8), NodeId((i % 20) as u8 + 20));
        let c = i % 5;
        truth.insert((src, dst), c);
        stats.push(synth_link_stats(src, dst, &arch[c], 2000, &mut rng));
    }
    let f = build_features(&stats);
    ensure!(f.vectors.len() == 200, "{} feature vectors", f.vectors.len());
    let model = em_fit(&f.vectors, 5, 10, &mut rng).map_err(|e| e.to_string())?;
    let a = assign_all(&model, &f).map_err(|e| e.to_string())?;
    let t: Vec<usize> = a.iter().map(|x| truth[&x.link]).collect();
    let p: Vec<usize> = a.iter().map(|x| x.cluster).collect();
    let (agreement, perm) = best_matching(&t, &p, 5);
    ensure!(agreement >= 0.9, "agreement {:.1}%", 100.0 * agreement);

    let rows = cluster_summary(&a, &stats, 5);
    let mut worst: f64 = 0.0;
    let (mut cv_err, mut loss_err): (f64, f64) = (0.0, 0.0);
    for (c, arc) in arch.iter().enumerate() {
        let row = &rows[perm[c]];
        let m = row.mean_rtt_ms.ok_or(format!("{} is empty", row.cluster))?;
        let rel = (m - arc.mean_ms).abs() / arc.mean_ms;
        ensure!(rel <= 0.10, "{} mean {m:.1} vs archetype {}", row.cluster, arc.mean_ms);
        worst = worst.max(rel);
        let cv = row.cv.ok_or(format!("{} has no CV", row.cluster))?;
        let rel_cv = (cv - arc.cv).abs() / arc.cv;
        ensure!(rel_cv <= 0.10, "{} CV {cv:.3} vs archetype {}", row.cluster, arc.cv);
        cv_err = cv_err.max(rel_cv);
        if let Some(loss) = row.loss_pct {
            loss_err = loss_err.max((loss / 100.0 - arc.loss).abs() / arc.loss);
        }
    }
    Ok(format!(
        "agreement {:.1}%, worst error mean RTT {:.2}%, CV {:.2}%, loss {:.1}% (loss reported only)",
        100.0 * agreement,
        100.0 * worst,
        100.0 * cv_err,
        100.0 * loss_err
    ))
}

/// A full mesh over `nodes` with each pair drawn from one archetype and
/// `perturb` of the directed links drawn from the next archetype instead.
fn mesh(nodes: u8, perturb: f64, rng: &mut ChaCha8Rng) -> (Vec<twp_core::analysis::LinkStats>, usize) {
    let arch = archetypes();
    let mut stats = Vec::new();
    let mut perturbed = 0;
    for a in 0..nodes {
        for b in (a + 1)..nodes {
            let c = rng.gen_range(0..arch.len());
            let fwd = synth_link_stats(NodeId(a), NodeId(b), &arch[c], 1000, rng);
            let rev = if rng.gen::<f64>() < perturb {
                perturbed += 1;
                let adj = if c + 1 < arch.len() { c + 1 } else { c - 1 };
                synth_link_stats(NodeId(b), NodeId(a), &arch[adj], 1000, rng)
            } else {
                let mut r = fwd.clone();
                (r.src, r.dst) = (b, a);
                r
            };
            stats.push(fwd);
            stats.push(rev);
        }
    }
    (stats, perturbed)
}

fn c7_direction_crosstab() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);

    let (sym, _) = mesh(20, 0.0, &mut rng);
    let f = build_features(&sym);
    let m = em_fit(&f.vectors, 5, 10, &mut rng).map_err(|e| e.to_string())?;
    let t = direction_crosstab(&assign_all(&m, &f).map_err(|e| e.to_string())?, 5).map_err(|e| e.to_string())?;
    for (c, p) in t.diagonal_pct.iter().enumerate() {
        ensure!(p.is_none_or(|p| p == 100.0), "symmetric mesh: c{} diagonal {p:?}", c + 1);
    }
    ensure!(t.diagonal_pct.iter().any(Option::is_some), "symmetric mesh: no populated cluster");

    // 20% of pairs with one perturbed direction is 10% of directed links.
    let (per, perturbed) = mesh(20, 0.2, &mut rng);
    let f = build_features(&per);
    let m = em_fit(&f.vectors, 5, 10, &mut rng).map_err(|e| e.to_string())?;
    let t = direction_crosstab(&assign_all(&m, &f).map_err(|e| e.to_string())?, 5).map_err(|e| e.to_string())?;
    let off: u64 = (0..5).flat_map(|i| ((i + 1)..5).map(move |j| (i, j))).map(|(i, j)| t.cells[i][j]).sum();
    let diag: u64 = (0..5).map(|i| t.cells[i][i]).sum();
    ensure!(off > 0, "perturbed mesh: no off-diagonal pairs");
    ensure!(off + diag == 190, "perturbed mesh: {} pairs", off + diag);
    for i in 0..5 {
        for j in 0..i {
            ensure!(t.cells[i][j] == 0, "lower triangle cell ({i},{j}) is {}", t.cells[i][j]);
        }
    }

    let rows = t.to_rows();
    ensure!(rows.len() == 7, "{} rows", rows.len());
    ensure!(rows[0] == ["cluster", "c1", "c2", "c3", "c4", "c5"], "header {:?}", rows[0]);
    for (i, r) in rows[1..6].iter().enumerate() {
        ensure!(r[0] == format!("C{}", i + 1), "row label {}", r[0]);
        ensure!(r[1..=i].iter().all(String::is_empty), "row {} lower triangle {:?}", i + 1, r);
        ensure!(r[i + 1..].iter().all(|c| c.parse::<u64>().is_ok()), "row {} upper triangle {:?}", i + 1, r);
    }
    ensure!(rows[6][0] == "diagonal_pct", "last row {:?}", rows[6]);

    let adjacent: u64 = (0..4).map(|i| t.cells[i][i + 1]).sum();
    Ok(format!(
        "{perturbed} perturbed pairs, {off} off-diagonal ({adjacent} between adjacent clusters), diagonal % {:?}",
        rows[6][1..].to_vec()
    ))
}

fn golden(name: &str) -> Vec<u8> {
    let p: PathBuf = [env!("CARGO_MANIFEST_DIR"), "tests", "golden", name].iter().collect();
    std::fs::read(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

fn rec(ts: u64, seq: u32, kind: MessageType, direction: Direction, src: u8, dst: u8) -> LogRecord {
    LogRecord { timestamp_ms: ts, seq, kind, direction, src: NodeId(src), dst: NodeId(dst) }
}

fn c8_codec() -> Outcome {
    use Direction::{Recv, Send};
    use MessageType::{Ack, Ping, PingAck};

    let node0 = vec![rec(T0, 10, Ping, Send, 0, 3), rec(T0 + 150, 10, PingAck, Recv, 3, 0), rec(T0 + 150, 10, Ack, Send, 0, 3)];
    let node3 = vec![rec(T0 + 60, 10, Ping, Recv, 0, 3), rec(T0 + 60, 10, PingAck, Send, 3, 0), rec(T0 + 200, 10, Ack, Recv, 0, 3)];
    let edge = vec![
        rec(0, 0, Ping, Send, 1, 0),
        rec(u64::MAX, u32::MAX, Ack, Recv, 255, 254),
        rec(T0, 0x0102_0304, PingAck, Send, 7, 200),
    ];
    for (name, recs) in [("round_node0.twplog", &node0), ("round_node3.twplog", &node3), ("edge_cases.twplog", &edge)] {
        let bytes = golden(name);
        ensure!(encode_log(recs).map_err(|e| e.to_string())? == bytes, "{name}: encoding differs");
        ensure!(&decode_log(&bytes).map_err(|e| e.to_string())? == recs, "{name}: decoding differs");
    }
    let msgs = [
        TwpMessage::new(Ping, 0),
        TwpMessage::new(Ack, 258),
        TwpMessage::new(PingAck, u32::MAX),
        TwpMessage::new(Ping, 10),
    ];
    let dgrams = golden("datagrams.bin");
    let encoded: Vec<u8> = msgs.iter().flat_map(|m| m.encode()).collect();
    ensure!(encoded == dgrams, "datagrams.bin: encoding differs");
    for (m, chunk) in msgs.iter().zip(dgrams.chunks(MESSAGE_LEN)) {
        ensure!(TwpMessage::decode(chunk).map_err(|e| e.to_string())? == *m, "datagram {m:?} decodes differently");
    }

    let an = analyze(&[(NodeId(0), node0), (NodeId(3), node3)], 8, None).map_err(|e| e.to_string())?;
    let s = an.samples.first().ok_or("golden round not matched")?;
    ensure!(s.rtt_ab_ms == Some(150.0) && s.rtt_ba_ms == Some(140.0), "golden RTTs {:?} {:?}", s.rtt_ab_ms, s.rtt_ba_ms);
    ensure!(s.fwd_delay_ms == Some(60.0) && s.rev_delay_ms == Some(90.0), "golden one-way {:?} {:?}", s.fwd_delay_ms, s.rev_delay_ms);

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    const N: usize = 100_000;
    let mut recs = Vec::with_capacity(N);
    for _ in 0..N {
        let src: u8 = rng.gen();
        let dst = src.wrapping_add(rng.gen_range(1..=255));
        let kind = MessageType::ALL[rng.gen_range(0..3)];
        let dir = if rng.gen() { Send } else { Recv };
        let r = rec(rng.gen(), rng.gen(), kind, dir, src, dst);
        let b = r.encode().map_err(|e| e.to_string())?;
        ensure!(b.len() == RECORD_LEN, "record is {} bytes", b.len());
        ensure!(LogRecord::decode(&b).map_err(|e| e.to_string())? == r, "round trip failed for {r:?}");
        recs.push(r);

        let m = TwpMessage::new(kind, rng.gen());
        ensure!(TwpMessage::decode(&m.encode()).map_err(|e| e.to_string())? == m, "round trip failed for {m:?}");
    }
    let log = encode_log(&recs).map_err(|e| e.to_string())?;
    ensure!(log.len() == N * RECORD_LEN, "log of {N} records is {} bytes", log.len());
    ensure!(decode_log(&log).map_err(|e| e.to_string())? == recs, "log round trip failed");
    Ok(format!("4 golden files match, {N} records and messages round-trip, {RECORD_LEN} bytes per record"))
}

fn c9_pairing() -> Outcome {
    for n in 2..=64usize {
        let rot = rotation_len(n);
        let mut seen = BTreeMap::new();
        for tick in 0..rot as u64 {
            for i in 0..n {
                let me = NodeId(i as u8);
                let Some(p) = partner_at_tick(me, n, tick).map_err(|e| e.to_string())? else {
                    continue;
                };
                ensure!(p != me, "n {n} tick {tick}: {i} paired with itself");
                let back = partner_at_tick(p, n, tick).map_err(|e| e.to_string())?;
                ensure!(back == Some(me), "n {n} tick {tick}: {i} -> {} -> {back:?}", p.0);
                if me < p {
                    *seen.entry((me, p)).or_insert(0) += 1;
                }
            }
        }
        ensure!(seen.len() == n * (n - 1) / 2, "n {n}: {} pairs covered", seen.len());
        ensure!(seen.values().all(|&c| c == 1), "n {n}: a pair repeats within one rotation");
        for tick in rot as u64..2 * rot as u64 {
            for i in 0..n {
                let me = NodeId(i as u8);
                ensure!(
                    partner_at_tick(me, n, tick).ok() == partner_at_tick(me, n, tick - rot as u64).ok(),
                    "n {n}: schedule does not repeat after {rot} ticks"
                );
            }
        }

        let mut initiated = vec![0i64; n];
        let mut responded = vec![0i64; n];
        for a in 0..n {
            for b in (a + 1)..n {
                let (x, y) = (NodeId(a as u8), NodeId(b as u8));
                let i1 = initiator_of(x, y, n).map_err(|e| e.to_string())?;
                let i2 = initiator_of(y, x, n).map_err(|e| e.to_string())?;
                ensure!(i1 == i2 && (i1 == x || i1 == y), "n {n}: pair ({a},{b}) initiators {i1:?} {i2:?}");
                let r = if i1 == x { y } else { x };
                initiated[i1.index()] += 1;
                responded[r.index()] += 1;
            }
        }
        for i in 0..n {
            ensure!((initiated[i] - responded[i]).abs() <= 1, "n {n}: node {i} initiates {} of {}", initiated[i], n - 1);
        }
    }
    Ok("n = 2..=64 valid matchings, each pair once per rotation, balanced initiators".into())
}

fn c10_em_invariants() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut iters = 0;
    let mut worst_sum: f64 = 0.0;
    for ds in 0..100 {
        let d = rng.gen_range(1..=8);
        let k = rng.gen_range(1..=6);
        let n = rng.gen_range(k.max(10)..=300);
        let groups = rng.gen_range(1..=6);
        let centres: Vec<Vec<f64>> = (0..groups).map(|_| (0..d).map(|_| rng.gen_range(-10.0..10.0)).collect()).collect();
        let spread = Normal::new(0.0, rng.gen_range(0.1..3.0)).unwrap();
        let data: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let c = &centres[rng.gen_range(0..groups)];
                c.iter().map(|&m| m + spread.sample(&mut rng)).collect()
            })
            .collect();

        let runs = [em_run(&data, k, &mut rng), em_fit(&data, k, 3, &mut rng)];
        for m in runs {
            let m = m.map_err(|e| format!("dataset {ds}: {e}"))?;
            for w in m.ll_history.windows(2) {
                let slack = 1e-9 * w[0].abs().max(1.0);
                ensure!(w[1] >= w[0] - slack, "dataset {ds}: log-likelihood fell {} -> {}", w[0], w[1]);
            }
            iters += m.ll_history.len();
            for x in &data {
                let (_, r) = assign(&m, x).map_err(|e| e.to_string())?;
                let err = (r.iter().sum::<f64>() - 1.0).abs();
                ensure!(err <= 1e-12, "dataset {ds}: responsibilities sum off by {err:e}");
                worst_sum = worst_sum.max(err);
            }
        }
    }
    Ok(format!("100 datasets, {iters} EM iterations monotone, worst responsibility sum error {worst_sum:.1e}"))
}

fn main() -> ExitCode {
    panic::set_hook(Box::new(|_| {}));
    let t = Instant::now();
    let data = large_gamma_sample();
    println!("generated {N_LARGE} gamma samples in {:.1}s", t.elapsed().as_secs_f64());

    let criteria: Vec<Criterion> = vec![
        (1, "asymmetry worked example", Box::new(c1_asymmetry)),
        (2, "gamma moments", Box::new(c2_gamma_moments)),
        (3, "gamma fit recovery", Box::new(|| c3_fit_recovery(&data))),
        (4, "Anderson-Darling ordering", Box::new(|| c4_ad_ordering(&data))),
        (5, "end-to-end simulation", Box::new(c5_simulation)),
        (6, "cluster recovery", Box::new(c6_cluster_recovery)),
        (7, "direction cross-tab", Box::new(c7_direction_crosstab)),
        (8, "codec golden files", Box::new(c8_codec)),
        (9, "pairing schedule", Box::new(c9_pairing)),
        (10, "EM invariants", Box::new(c10_em_invariants)),
    ];
    let mut failed = 0;
    for (n, name, check) in &criteria {
        let t = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into());
            Err(format!("panic: {msg}"))
        });
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {n} ({name}): PASS in {secs:.1}s; {detail}"),
            Err(why) => {
                failed += 1;
                println!("criterion {n} ({name}): FAIL in {secs:.1}s; {why}");
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
