use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::atomic::{AtomicUsize, Ordering};

use serde_json::Value;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn scratch(tag: &str) -> PathBuf {
    static NEXT: AtomicUsize = AtomicUsize::new(0);
    let dir = std::env::temp_dir().join(format!(
        "mara-cli-{}-{tag}-{}",
        std::process::id(),
        NEXT.fetch_add(1, Ordering::Relaxed)
    ));
    let _ = fs::remove_dir_all(&dir);
    dir
}

fn mara(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mara"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn run_writes_metrics_and_summary() {
    let out = scratch("run");
    let scenario = fixtures().join("two_node.json");
    let o = mara(&["run", "--scenario", s(&scenario), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("mara-1/metrics.csv")).unwrap();
    assert!(csv.starts_with("time_s,reserve_i_bytes"));
    assert_eq!(csv.lines().count(), 62);
    let summary = json(&out.join("mara-1/summary.json"));
    assert_eq!(summary["admissions"], 1);
    assert!(!out.join("mara-1/trees.json").exists());
}

#[test]
fn missing_scenario_is_an_io_error_without_outputs() {
    let out = scratch("missing");
    let o = mara(&[
        "run",
        "--scenario",
        "/nonexistent/scenario.json",
        "--out",
        s(&out),
    ]);
    assert_eq!(o.status.code(), Some(3));
    assert!(!out.exists());
}

#[test]
fn malformed_scenario_is_an_input_error() {
    let dir = scratch("bad");
    fs::create_dir_all(&dir).unwrap();
    let bad = dir.join("bad.json");
    fs::write(&bad, r#"{"mode": "mara""#).unwrap();
    let out = dir.join("out");
    let o = mara(&["run", "--scenario", s(&bad), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(4));
    assert!(!out.exists());

    let o = mara(&[
        "run",
        "--scenario",
        s(&fixtures().join("two_node.json")),
        "--out",
        s(&out),
        "--init-factor",
        "2",
    ]);
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn tree_dump_has_both_kinds() {
    let out = scratch("trees");
    let scenario = fixtures().join("default14.json");
    let o = mara(&[
        "run",
        "--scenario",
        s(&scenario),
        "--out",
        s(&out),
        "--dump-trees",
        "--seeds",
        "2",
    ]);
    assert!(o.status.success());
    let trees = json(&out.join("mara-2/trees.json"));
    let kinds: Vec<&str> = trees
        .as_array()
        .unwrap()
        .iter()
        .map(|t| t["kind"].as_str().unwrap())
        .collect();
    assert!(kinds.contains(&"unbranched"));
    assert!(kinds.contains(&"branched"));
}

#[test]
fn self_comparison_shows_no_reduction() {
    let out = scratch("same");
    let scenario = fixtures().join("two_node.json");
    let o = mara(&[
        "compare",
        "--scenario",
        s(&scenario),
        "--out",
        s(&out),
        "--same-mode",
        "mara",
    ]);
    assert!(o.status.success());
    let summary = json(&out.join("compare.json"));
    for m in summary["metrics"].as_array().unwrap() {
        assert_eq!(m["reduction_percent"], 0.0, "{m}");
    }
}

#[test]
fn compare_on_two_nodes() {
    let out = scratch("cmp");
    let scenario = fixtures().join("two_node.json");
    let o = mara(&[
        "compare",
        "--scenario",
        s(&scenario),
        "--out",
        s(&out),
        "--seeds",
        "1",
    ]);
    assert!(o.status.success());
    let table = String::from_utf8(o.stdout).unwrap();
    assert!(table.contains("total_signaling_bytes"));
    assert_eq!(
        json(&out.join("mara-1/summary.json"))["post_init_reserve_bytes"],
        0
    );
    assert!(
        json(&out.join("mira-1/summary.json"))["post_init_reserve_bytes"]
            .as_u64()
            .unwrap()
            > 0
    );
}

#[test]
fn compare_matches_individual_runs() {
    let scenario = fixtures().join("default14.json");
    let cmp = scratch("pair");
    let o = mara(&[
        "compare",
        "--scenario",
        s(&scenario),
        "--out",
        s(&cmp),
        "--seeds",
        "4,5",
    ]);
    assert!(o.status.success());
    let summary = json(&cmp.join("compare.json"));
    assert_eq!(summary["seeds"].as_array().unwrap().len(), 2);
    let sig = summary["metrics"]
        .as_array()
        .unwrap()
        .iter()
        .find(|m| m["metric"] == "total_signaling_bytes")
        .unwrap();
    assert!(sig["reduction_percent"].as_f64().unwrap() > 0.0);
    for mode in ["mara", "mira"] {
        let single = scratch("single");
        let o = mara(&[
            "run",
            "--scenario",
            s(&scenario),
            "--out",
            s(&single),
            "--seeds",
            "5",
            "--mode",
            mode,
        ]);
        assert!(o.status.success());
        let dir = format!("{mode}-5");
        for f in ["summary.json", "metrics.csv"] {
            assert_eq!(
                fs::read(cmp.join(&dir).join(f)).unwrap(),
                fs::read(single.join(&dir).join(f)).unwrap()
            );
        }
    }
}

#[test]
fn topology_generation_is_reproducible() {
    let dir = scratch("topo");
    let a = dir.join("a.json");
    let b = dir.join("b.json");
    for p in [&a, &b] {
        assert!(
            mara(&["gen-topo", "--nodes", "14", "--seed", "7", "--out", s(p)])
                .status
                .success()
        );
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let net = mara::topology::Network::from_json(&fs::read_to_string(&a).unwrap()).unwrap();
    assert_eq!(net.nodes().len(), 14);

    let small = dir.join("small.json");
    assert!(mara(&[
        "gen-topo",
        "--nodes",
        "2",
        "--seed",
        "1",
        "--out",
        s(&small)
    ])
    .status
    .success());
    let net = mara::topology::Network::from_json(&fs::read_to_string(&small).unwrap()).unwrap();
    assert_eq!(net.nodes().len(), 2);

    assert_eq!(
        mara(&["gen-topo", "--nodes", "1", "--out", s(&dir.join("x.json"))])
            .status
            .code(),
        Some(4)
    );
}

#[test]
fn bad_seed_list_is_rejected() {
    let out = scratch("seeds");
    let scenario = fixtures().join("two_node.json");
    let o = mara(&[
        "run",
        "--scenario",
        s(&scenario),
        "--out",
        s(&out),
        "--seeds",
        "5..2",
    ]);
    assert_eq!(o.status.code(), Some(4));
    assert!(!out.exists());
}
