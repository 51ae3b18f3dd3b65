//! Multi-seed runs and the side-by-side comparison of both modes.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::engine::{run, EngineError, MetricsReport, RunOutput};
use crate::scenario::{Mode, ScenarioConfig};

/// A run that failed, with the seed it ran under.
#[derive(Debug, thiserror::Error)]
#[error("{mode} run with seed {seed} failed: {source}")]
pub struct SeedError {
    pub seed: u64,
    pub mode: &'static str,
    #[source]
    pub source: EngineError,
}

/// Runs `cfg` once per seed in `mode`, in parallel. Results follow the
/// order of `seeds`; the first failing seed is reported.
pub fn run_seeds(
    cfg: &ScenarioConfig,
    mode: Mode,
    seeds: &[u64],
) -> Result<Vec<RunOutput>, SeedError> {
    let results: Vec<Result<RunOutput, EngineError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = seeds
            .iter()
            .map(|&seed| {
                let mut c = cfg.clone();
                c.mode = mode;
                c.seed = Some(seed);
                scope.spawn(move || run(&c))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("simulation thread panicked"))
            .collect()
    });
    results
        .into_iter()
        .zip(seeds)
        .map(|(r, &seed)| {
            r.map_err(|source| SeedError {
                seed,
                mode: mode.name(),
                source,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedComparison {
    pub seed: u64,
    pub mira_bytes: u64,
    pub mara_bytes: u64,
    pub reduction_percent: f64,
    pub mira_state_mean: f64,
    pub mara_state_mean: f64,
    pub mara_signaling_free_percent: f64,
}

/// One quantity measured in both modes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricComparison {
    pub metric: String,
    pub mira_value: f64,
    pub mara_value: f64,
    /// `100 * (mira - mara) / mira`, zero when the baseline is zero.
    pub reduction_percent: f64,
}

impl MetricComparison {
    fn new(metric: impl Into<String>, mira_value: f64, mara_value: f64) -> Self {
        Self {
            metric: metric.into(),
            mira_value,
            mara_value,
            reduction_percent: reduction_percent(mira_value, mara_value),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareSummary {
    pub scenario: String,
    pub seeds: Vec<SeedComparison>,
    /// Means over seeds.
    pub metrics: Vec<MetricComparison>,
}

impl CompareSummary {
    pub fn metric(&self, name: &str) -> Option<&MetricComparison> {
        self.metrics.iter().find(|m| m.metric == name)
    }
}

pub fn reduction_percent(mira: f64, mara: f64) -> f64 {
    if mira > 0.0 {
        100.0 * (mira - mara) / mira
    } else {
        0.0
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Pairs are `(mira, mara)` reports of the same seed.
pub fn compare(pairs: &[(MetricsReport, MetricsReport)]) -> CompareSummary {
    let seeds = pairs
        .iter()
        .map(|(mi, ma)| SeedComparison {
            seed: ma.seed,
            mira_bytes: mi.total_signaling_bytes,
            mara_bytes: ma.total_signaling_bytes,
            reduction_percent: reduction_percent(
                mi.total_signaling_bytes as f64,
                ma.total_signaling_bytes as f64,
            ),
            mira_state_mean: mi.multicast_state_mean,
            mara_state_mean: ma.multicast_state_mean,
            mara_signaling_free_percent: ma.signaling_free_percent,
        })
        .collect();
    let both = |name: &str, f: &dyn Fn(&MetricsReport) -> f64| {
        MetricComparison::new(
            name,
            mean(pairs.iter().map(|p| f(&p.0))),
            mean(pairs.iter().map(|p| f(&p.1))),
        )
    };
    let mut metrics = vec![
        both("total_reserve_bytes", &|r| r.total_reserve_bytes as f64),
        both("total_signaling_bytes", &|r| r.total_signaling_bytes as f64),
        both("reserve_t_bytes", &|r| r.reserve_t_bytes() as f64),
        both("mean_multicast_state", &|r| r.multicast_state_mean),
        both("signaling_free_percent", &|r| r.signaling_free_percent),
    ];
    if let Some((first, _)) = pairs.first() {
        for (i, c) in first.classes.iter().enumerate() {
            if pairs.iter().all(|(m, _)| m.classes[i].requests == 0) {
                continue;
            }
            metrics.push(both(&format!("blocking_percent.{}", c.name), &|r| {
                r.classes[i].blocking_percent()
            }));
        }
    }
    CompareSummary {
        scenario: pairs
            .first()
            .map(|p| p.1.scenario.clone())
            .unwrap_or_default(),
        seeds,
        metrics,
    }
}

pub fn render_table(s: &CompareSummary) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:>6} {:>12} {:>12} {:>9} {:>10} {:>10} {:>8}",
        "seed", "mira_bytes", "mara_bytes", "saved_%", "mira_state", "mara_state", "free_%"
    );
    for r in &s.seeds {
        let _ = writeln!(
            out,
            "{:>6} {:>12} {:>12} {:>9.1} {:>10.1} {:>10.1} {:>8.1}",
            r.seed,
            r.mira_bytes,
            r.mara_bytes,
            r.reduction_percent,
            r.mira_state_mean,
            r.mara_state_mean,
            r.mara_signaling_free_percent
        );
    }
    let _ = writeln!(
        out,
        "\n{:<26} {:>14} {:>14} {:>11}",
        "metric (mean over seeds)", "mira", "mara", "reduction_%"
    );
    for m in &s.metrics {
        let _ = writeln!(
            out,
            "{:<26} {:>14.2} {:>14.2} {:>11.1}",
            m.metric, m.mira_value, m.mara_value, m.reduction_percent
        );
    }
    out
}
