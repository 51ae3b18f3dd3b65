//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mara::agtree::{build_unbranched_trees, enumerate_branched_trees, AggTree, GroupAllocator};
use mara::asac::{compute_bov, compute_readjust_plan, ClassId, CosState, CosTable};
use mara::engine::{run, MetricsReport};
use mara::report::run_seeds;
use mara::scenario::{Mode, ScenarioConfig};
use mara::topology::{shortest_paths_oracle, LinkId, Network, NodeId};

const SEEDS: [u64; 10] = [1, 2, 3, 4, 5, 6, 7, 8, 9, 10];

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

struct Outcome {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

// ---- arithmetic oracles, written independently of the library ----

fn floor_div(num: i128, den: i128) -> i128 {
    let q = num / den;
    if (num % den != 0) && ((num < 0) != (den < 0)) {
        q - 1
    } else {
        q
    }
}

fn oracle_bov(c: &CosState, brq: u64) -> i64 {
    if c.mrth == 0 {
        return -1;
    }
    let free = c.mrth as i128 - c.bu as i128 - brq as i128;
    floor_div(c.bu as i128 * free, c.mrth as i128) as i64
}

/// Released ceiling of one donor:
/// `floor(avail * ((brv - bu)/brv + avail/mrth) / 2)`.
fn oracle_brl(c: &CosState) -> u64 {
    if c.mrth == 0 {
        return 0;
    }
    let bref = if c.bu < c.crth { c.crth } else { c.brv };
    let avail = c.mrth.saturating_sub(bref) as u128;
    let (bn, bd) = if c.brv == 0 {
        (1u128, 1u128)
    } else {
        ((c.brv - c.bu) as u128, c.brv as u128)
    };
    let mrth = c.mrth as u128;
    // common denominator 2 * bd * mrth
    let num = avail * (bn * mrth + avail * bd);
    (num / (2 * bd * mrth)) as u64
}

fn random_state(rng: &mut ChaCha8Rng, class: u8, ceiling: u64) -> CosState {
    let mrth = if rng.gen_ratio(1, 50) {
        0
    } else {
        rng.gen_range(0..=ceiling)
    };
    let crth = rng.gen_range(0..=mrth);
    let brv = rng.gen_range(0..=mrth);
    let bu = rng.gen_range(0..=brv);
    CosState {
        brv,
        bu,
        ..CosState::new(ClassId(class), crth, mrth)
    }
}

fn random_table(rng: &mut ChaCha8Rng, capacity: u64) -> CosTable {
    let n = rng.gen_range(2..=5);
    let share = capacity / n as u64;
    CosTable {
        classes: (0..n).map(|i| random_state(rng, i, share)).collect(),
    }
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xb0);
    let mut mismatches = Vec::new();
    for case in 0..10_000 {
        let cap = [10_000u64, 10_000_000, 1_000_000_000, 100_000_000_000][case % 4];
        let table = random_table(&mut rng, cap);
        let k = rng.gen_range(0..table.classes.len());
        let c = &table.classes[k];
        let brq = rng.gen_range(0..=cap / 4);
        if compute_bov(c, brq) != oracle_bov(c, brq) {
            mismatches.push(format!("bov case {case}"));
        }
        let plan = compute_readjust_plan(&table, ClassId(k as u8)).expect("donors exist");
        let expect: Vec<u64> = table
            .classes
            .iter()
            .filter(|d| d.class.0 as usize != k)
            .map(oracle_brl)
            .collect();
        let got: Vec<u64> = plan.donors.iter().map(|d| d.brl).collect();
        if got != expect || plan.gain != expect.iter().sum::<u64>() {
            mismatches.push(format!("plan case {case}"));
        }
    }
    let took = start.elapsed();
    verdict(
        mismatches.is_empty() && took < Duration::from_secs(5),
        format!(
            "10000 surplus and transfer cases, {} mismatches, {:.2} s",
            mismatches.len(),
            took.as_secs_f64()
        ),
    )
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xc2);
    let mut broken = 0;
    let mut moved = 0u128;
    for _ in 0..1000 {
        let mut table = random_table(&mut rng, 1_000_000_000);
        let k = ClassId(rng.gen_range(0..table.classes.len()) as u8);
        let before: u64 = table.classes.iter().map(|c| c.mrth).sum();
        let plan = compute_readjust_plan(&table, k).expect("donors exist");
        plan.apply(&mut table).expect("plan applies");
        moved += plan.gain as u128;
        let after: u64 = table.classes.iter().map(|c| c.mrth).sum();
        let floor_ok = table.classes.iter().all(|c| c.mrth >= c.crth);
        let ledger_ok = table
            .classes
            .iter()
            .all(|c| c.bu <= c.brv && c.brv <= c.mrth);
        if before != after || !floor_ok || !ledger_ok {
            broken += 1;
        }
    }
    verdict(
        broken == 0,
        format!(
            "1000 applied transfers, {broken} broke conservation or commitments, {moved} b/s moved"
        ),
    )
}

// ---- tree enumeration oracle ----

fn union_ok(
    net: &Network,
    ingress: NodeId,
    subset: &[&AggTree],
    hop_cap: Option<usize>,
) -> Option<BTreeSet<LinkId>> {
    let edges: BTreeSet<LinkId> = subset
        .iter()
        .flat_map(|t| t.edges.iter().copied())
        .collect();
    let ingress_out = edges
        .iter()
        .filter(|&&l| net.link(l).from == ingress)
        .count();
    if ingress_out > 1 {
        return None;
    }
    let mut indeg: BTreeMap<NodeId, usize> = BTreeMap::new();
    for &l in &edges {
        *indeg.entry(net.link(l).to).or_default() += 1;
    }
    if indeg.values().any(|&d| d > 1) {
        return None;
    }
    let depth = subset.iter().map(|t| t.max_hop_depth).max().unwrap_or(0);
    if hop_cap.is_some_and(|c| depth > c) {
        return None;
    }
    Some(edges)
}

fn brute_force(
    net: &Network,
    ingress: NodeId,
    unbranched: &[AggTree],
    hop_cap: Option<usize>,
) -> BTreeSet<(BTreeSet<NodeId>, BTreeSet<LinkId>)> {
    let n = unbranched.len();
    let mut out = BTreeSet::new();
    for mask in 0u32..(1 << n) {
        if mask.count_ones() < 2 {
            continue;
        }
        let subset: Vec<&AggTree> = (0..n)
            .filter(|i| mask & (1 << i) != 0)
            .map(|i| &unbranched[i])
            .collect();
        if let Some(edges) = union_ok(net, ingress, &subset, hop_cap) {
            let egresses = subset
                .iter()
                .flat_map(|t| t.egresses.iter().copied())
                .collect();
            out.insert((egresses, edges));
        }
    }
    out
}

fn topology_fixtures() -> Vec<(String, Network)> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(fixtures())
        .expect("fixtures directory")
        .map(|e| e.expect("entry").path())
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    files.sort();
    files
        .into_iter()
        .filter_map(|p| {
            let text = std::fs::read_to_string(&p).ok()?;
            let net = Network::from_json(&text).ok()?;
            Some((p.file_name()?.to_string_lossy().into_owned(), net))
        })
        .collect()
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let mut checked = Vec::new();
    let mut failures = Vec::new();
    let (mut kept, mut total) = (0usize, 0usize);
    for (name, net) in topology_fixtures() {
        let ingress = net.ingresses()[0];
        let paths = shortest_paths_oracle(&net, ingress).into_iter().collect();
        let mut alloc = GroupAllocator::new(ingress);
        let unbranched = build_unbranched_trees(&net, ingress, &paths, &mut alloc).unwrap();
        if unbranched.len() > 5 {
            continue;
        }
        for cap in [None, Some(1), Some(2), Some(3), Some(4), Some(5), Some(6)] {
            let got: BTreeSet<_> = enumerate_branched_trees(&net, &unbranched, cap, &mut alloc)
                .into_iter()
                .map(|t| (t.egresses, t.edges))
                .collect();
            let expected = brute_force(&net, ingress, &unbranched, cap);
            kept += expected.len();
            total += (1usize << unbranched.len()) - unbranched.len() - 1;
            if got != expected {
                failures.push(format!("{name} cap {cap:?}"));
            }
        }
        checked.push(format!("{name}({})", unbranched.len()));
    }
    let took = start.elapsed();
    verdict(
        failures.is_empty() && !checked.is_empty() && took < Duration::from_secs(10),
        format!(
            "fixtures {} at 7 hop caps, {kept} of {total} subsets kept, mismatches {:?}, {:.2} s",
            checked.join(" "),
            failures,
            took.as_secs_f64()
        ),
    )
}

// ---- paired runs on the 14-node fixture ----

struct Paired {
    mira: Vec<MetricsReport>,
    mara: Vec<MetricsReport>,
    took: Duration,
}

fn paired_runs() -> Paired {
    let cfg = ScenarioConfig::from_path(&fixtures().join("default14.json")).unwrap();
    assert_eq!(cfg.workload.session_count, 1000);
    assert_eq!(cfg.workload.duration_s, 120.0);
    assert_eq!(cfg.hop_cap, Some(6));
    let start = Instant::now();
    let reports = |mode| {
        run_seeds(&cfg, mode, &SEEDS)
            .unwrap()
            .into_iter()
            .map(|o| o.report)
            .collect::<Vec<_>>()
    };
    let mira = reports(Mode::Mira);
    let mara = reports(Mode::Mara);
    Paired {
        mira,
        mara,
        took: start.elapsed(),
    }
}

fn criterion_4(p: &Paired) -> Outcome {
    let mira: u64 = p.mira.iter().map(|r| r.total_signaling_bytes).sum();
    let mara: u64 = p.mara.iter().map(|r| r.total_signaling_bytes).sum();
    let worst = p
        .mira
        .iter()
        .zip(&p.mara)
        .map(|(a, b)| b.total_signaling_bytes as f64 / a.total_signaling_bytes as f64)
        .fold(0.0, f64::max);
    let ratio = mara as f64 / mira as f64;
    verdict(
        ratio <= 0.60 && p.took < Duration::from_secs(120),
        format!(
            "mara/mira signaling bytes {:.3} over 10 seeds (reduction {:.1}%, worst seed {:.3}), {:.1} s",
            ratio,
            100.0 * (1.0 - ratio),
            worst,
            p.took.as_secs_f64()
        ),
    )
}

fn criterion_5(p: &Paired) -> Outcome {
    let admitted: u64 = p.mara.iter().map(|r| r.admissions).sum();
    let free: u64 = p.mara.iter().map(|r| r.signaling_free_admissions).sum();
    let share = 100.0 * free as f64 / admitted as f64;
    verdict(
        share >= 50.0,
        format!("{free} of {admitted} admissions without signaling ({share:.1}%)"),
    )
}

fn criterion_6(p: &Paired) -> Outcome {
    let constant = p
        .mara
        .iter()
        .all(|r| r.multicast_state_changes_after_init == 0);
    let ratios: Vec<f64> = p
        .mira
        .iter()
        .zip(&p.mara)
        .map(|(a, b)| b.multicast_state_mean / a.multicast_state_mean)
        .collect();
    let worst = ratios.iter().copied().fold(0.0, f64::max);
    verdict(
        constant && worst <= 0.5,
        format!(
            "state constant after init: {constant}; mean state mara/mira worst seed {worst:.3} (mara {:.1}, mira {:.1})",
            p.mara[0].multicast_state_mean,
            p.mira[0].multicast_state_mean
        ),
    )
}

fn criterion_7(p: &Paired) -> Outcome {
    let mara_t: u64 = p.mara.iter().map(|r| r.reserve_t_bytes()).sum();
    let mira_ok = p
        .mira
        .iter()
        .all(|r| r.admissions == 0 || r.reserve_t_bytes() > 0);
    let mira_t: u64 = p.mira.iter().map(|r| r.reserve_t_bytes()).sum();
    verdict(
        mara_t == 0 && mira_ok,
        format!("teardown bytes mara {mara_t}, mira {mira_t} (every admitting run > 0: {mira_ok})"),
    )
}

fn criterion_8(p: &Paired) -> Outcome {
    let share = p
        .mara
        .iter()
        .map(|r| r.init_peak_link_share)
        .fold(0.0, f64::max);
    let diameters = p
        .mara
        .iter()
        .map(|r| r.init_time_s / r.delay_diameter_s)
        .fold(0.0, f64::max);
    verdict(
        share <= 0.10 && diameters <= 5.0,
        format!(
            "peak init link load {:.2}% of capacity, init {:.4} s = {diameters:.2} delay diameters",
            100.0 * share,
            p.mara[0].init_time_s
        ),
    )
}

fn criterion_9(p: &Paired) -> Outcome {
    let mut hist: BTreeMap<usize, u64> = BTreeMap::new();
    for r in &p.mara {
        for (&d, &n) in &r.selected_depths {
            *hist.entry(d).or_default() += n;
        }
    }
    let max = hist.keys().max().copied().unwrap_or(0);
    verdict(
        max <= 6 && !hist.is_empty(),
        format!("selected tree depths {hist:?}, max {max} with hop cap 6"),
    )
}

fn criterion_10() -> Outcome {
    let mut checked = 0;
    let mut differing = Vec::new();
    for (file, mode) in [
        ("default14.json", Mode::Mara),
        ("default14.json", Mode::Mira),
        ("scripted14.json", Mode::Mara),
        ("scripted14.json", Mode::Mira),
    ] {
        let mut cfg = ScenarioConfig::from_path(&fixtures().join(file)).unwrap();
        cfg.mode = mode;
        for seed in [3, 7] {
            cfg.seed = Some(seed);
            let a = run(&cfg).unwrap().report;
            let b = run(&cfg).unwrap().report;
            checked += 1;
            if a.summary_json() != b.summary_json() || a.to_csv() != b.to_csv() || a != b {
                differing.push(format!("{file} {} seed {seed}", mode.name()));
            }
        }
    }
    verdict(
        differing.is_empty(),
        format!("{checked} replayed runs, differing {differing:?}"),
    )
}

fn main() -> ExitCode {
    let mut results = vec![
        ("equation oracles", criterion_1()),
        ("ceiling conservation", criterion_2()),
        ("tree enumeration", criterion_3()),
    ];
    let p = paired_runs();
    results.push(("signaling reduction", criterion_4(&p)));
    results.push(("signaling-free admissions", criterion_5(&p)));
    results.push(("multicast state", criterion_6(&p)));
    results.push(("teardown signaling", criterion_7(&p)));
    results.push(("initialization cost", criterion_8(&p)));
    results.push(("hop cap", criterion_9(&p)));
    results.push(("determinism", criterion_10()));
    let mut failed = 0;
    for (i, (name, o)) in results.iter().enumerate() {
        println!(
            "criterion {:>2} {} {name}: {}",
            i + 1,
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        failed += usize::from(!o.pass);
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
