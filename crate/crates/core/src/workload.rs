//! Reproducible multi-user session workloads.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::asac::{ClassConfig, ClassId};
use crate::topology::NodeId;
use crate::units::{Bps, SimTime, KBPS};

#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SessionId(pub u64);

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionRequest {
    pub id: SessionId,
    pub arrival: SimTime,
    pub lifetime: SimTime,
    pub class: ClassId,
    pub egress_set: BTreeSet<NodeId>,
    pub flows: Vec<Bps>,
    pub total_rate: Bps,
}

impl SessionRequest {
    pub fn end(&self) -> SimTime {
        self.arrival + self.lifetime
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassWeight {
    pub class: String,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorkloadConfig {
    pub session_count: usize,
    pub duration_s: f64,
    /// Arrivals per second. Unset means `session_count` arrivals spread
    /// as a Poisson process conditioned on its count over the duration.
    pub arrival_rate: Option<f64>,
    pub lifetime_s: (f64, f64),
    pub flows_bps: Vec<Bps>,
    pub class_weights: Vec<ClassWeight>,
    /// Receiver-set sizes, drawn uniformly.
    pub egress_set_sizes: Vec<usize>,
    pub seed: u64,
}

impl Default for WorkloadConfig {
    fn default() -> Self {
        let w = |class: &str, weight| ClassWeight {
            class: class.into(),
            weight,
        };
        Self {
            session_count: 1000,
            duration_s: 120.0,
            arrival_rate: None,
            lifetime_s: (20.0, 120.0),
            flows_bps: vec![32 * KBPS, 64 * KBPS, 128 * KBPS],
            class_weights: vec![w("Premium", 0.40), w("Gold", 0.35), w("Silver", 0.25)],
            egress_set_sizes: vec![1, 2, 3],
            seed: 1,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum WorkloadError {
    #[error("invalid workload: {0}")]
    Invalid(String),
}

fn invalid(msg: impl Into<String>) -> WorkloadError {
    WorkloadError::Invalid(msg.into())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WorkloadEvent {
    Arrival { time: SimTime, session: SessionId },
    Teardown { time: SimTime, session: SessionId },
}

impl WorkloadEvent {
    pub fn time(&self) -> SimTime {
        match self {
            WorkloadEvent::Arrival { time, .. } | WorkloadEvent::Teardown { time, .. } => *time,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Workload {
    pub requests: Vec<SessionRequest>,
    pub events: Vec<WorkloadEvent>,
}

impl WorkloadConfig {
    pub fn validate(&self) -> Result<(), WorkloadError> {
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return Err(invalid("duration must be positive"));
        }
        if self.session_count == 0 {
            return Err(invalid("session count must be positive"));
        }
        if let Some(r) = self.arrival_rate {
            if !(r.is_finite() && r > 0.0) {
                return Err(invalid("arrival rate must be positive"));
            }
        }
        let (lo, hi) = self.lifetime_s;
        if !(lo.is_finite() && hi.is_finite() && 0.0 < lo && lo <= hi) {
            return Err(invalid(format!("bad lifetime range {lo}..={hi}")));
        }
        if self.flows_bps.is_empty() || self.flows_bps.contains(&0) {
            return Err(invalid(
                "every session needs at least one flow of positive rate",
            ));
        }
        if self
            .class_weights
            .iter()
            .any(|w| w.weight.is_nan() || w.weight < 0.0)
        {
            return Err(invalid("class weights must be non-negative"));
        }
        let total: f64 = self.class_weights.iter().map(|w| w.weight).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(invalid(format!("class weights sum to {total}, not 1")));
        }
        if self.egress_set_sizes.is_empty() || self.egress_set_sizes.contains(&0) {
            return Err(invalid("egress set sizes must be positive"));
        }
        Ok(())
    }
}

/// Draws the session requests and their arrival/teardown event list.
///
/// All sessions enter at one ingress; receiver sets are drawn from
/// `egresses` without replacement.
pub fn generate(
    config: &WorkloadConfig,
    classes: &[ClassConfig],
    egresses: &[NodeId],
) -> Result<Workload, WorkloadError> {
    config.validate()?;
    if egresses.is_empty() {
        return Err(invalid("no egress routers to deliver to"));
    }
    let weights: Vec<(ClassId, f64)> = config
        .class_weights
        .iter()
        .map(|w| {
            classes
                .iter()
                .position(|c| c.name == w.class)
                .map(|i| (ClassId(i as u8), w.weight))
                .ok_or_else(|| invalid(format!("unknown class {:?}", w.class)))
        })
        .collect::<Result<_, _>>()?;
    if let Some((c, _)) = weights.iter().find(|(c, _)| classes[c.index()].best_effort) {
        return Err(invalid(format!(
            "class {} is best effort and cannot carry sessions",
            classes[c.index()].name
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let arrivals = arrival_times(config, &mut rng);
    let total_rate: Bps = config.flows_bps.iter().sum();
    let (lt_lo, lt_hi) = config.lifetime_s;

    let mut requests = Vec::with_capacity(arrivals.len());
    for (i, arrival) in arrivals.into_iter().enumerate() {
        let lifetime = if lt_hi > lt_lo {
            rng.gen_range(lt_lo..=lt_hi)
        } else {
            lt_lo
        };
        let mut pick: f64 = rng.gen();
        let class = weights
            .iter()
            .find(|(_, w)| {
                pick -= w;
                pick < 0.0
            })
            .or(weights.last())
            .map(|&(c, _)| c)
            .expect("weights are non-empty");
        let size = *config
            .egress_set_sizes
            .choose(&mut rng)
            .expect("sizes are non-empty");
        let egress_set = egresses
            .choose_multiple(&mut rng, size.min(egresses.len()))
            .copied()
            .collect();
        requests.push(SessionRequest {
            id: SessionId(i as u64),
            arrival: SimTime::from_secs_f64(arrival),
            lifetime: SimTime::from_secs_f64((lifetime * 1e6).round() / 1e6),
            class,
            egress_set,
            flows: config.flows_bps.clone(),
            total_rate,
        });
    }

    let mut events: Vec<WorkloadEvent> = requests
        .iter()
        .flat_map(|r| {
            [
                WorkloadEvent::Arrival {
                    time: r.arrival,
                    session: r.id,
                },
                WorkloadEvent::Teardown {
                    time: r.end(),
                    session: r.id,
                },
            ]
        })
        .collect();
    events.sort_by_key(|e| match *e {
        WorkloadEvent::Teardown { time, session } => (time, 0, session),
        WorkloadEvent::Arrival { time, session } => (time, 1, session),
    });
    Ok(Workload { requests, events })
}

fn arrival_times(config: &WorkloadConfig, rng: &mut ChaCha8Rng) -> Vec<f64> {
    match config.arrival_rate {
        Some(rate) => {
            let mut t = 0.0;
            let mut out = Vec::new();
            while out.len() < config.session_count {
                let u: f64 = rng.gen();
                t += -(1.0 - u).ln() / rate;
                if t > config.duration_s {
                    break;
                }
                out.push(t);
            }
            out
        }
        None => {
            let mut out: Vec<f64> = (0..config.session_count)
                .map(|_| rng.gen_range(0.0..config.duration_s))
                .collect();
            out.sort_by(f64::total_cmp);
            out
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn egresses() -> Vec<NodeId> {
        (1..=5).map(NodeId).collect()
    }

    fn gen(cfg: &WorkloadConfig) -> Workload {
        generate(cfg, &ClassConfig::defaults(), &egresses()).unwrap()
    }

    #[test]
    fn default_profile() {
        let w = gen(&WorkloadConfig::default());
        assert_eq!(w.requests.len(), 1000);
        assert_eq!(w.events.len(), 2000);
        for r in &w.requests {
            assert_eq!(r.flows, vec![32_000, 64_000, 128_000]);
            assert_eq!(r.total_rate, 224_000);
            assert!(!r.egress_set.is_empty() && r.egress_set.len() <= 3);
            assert!(r.arrival <= SimTime::from_secs_f64(120.0));
            assert!(r.class.index() < 3);
        }
        assert!(w.events.windows(2).all(|p| p[0].time() <= p[1].time()));
    }

    #[test]
    fn deterministic() {
        let cfg = WorkloadConfig::default();
        assert_eq!(gen(&cfg), gen(&cfg));
        let other = WorkloadConfig {
            seed: 2,
            ..cfg.clone()
        };
        assert_ne!(gen(&cfg), gen(&other));
    }

    #[test]
    fn lifetimes_in_range() {
        let (mut lo, mut hi) = (f64::MAX, f64::MIN);
        for seed in 0..10 {
            let w = gen(&WorkloadConfig {
                seed,
                ..Default::default()
            });
            for r in &w.requests {
                lo = lo.min(r.lifetime.as_secs_f64());
                hi = hi.max(r.lifetime.as_secs_f64());
            }
        }
        assert!(lo >= 20.0 && hi <= 120.0, "{lo} {hi}");
    }

    #[test]
    fn class_mix_follows_weights() {
        let w = gen(&WorkloadConfig {
            session_count: 20_000,
            ..Default::default()
        });
        let mut counts = [0usize; 3];
        for r in &w.requests {
            counts[r.class.index()] += 1;
        }
        let share = |i: usize| counts[i] as f64 / 20_000.0;
        assert!((share(0) - 0.40).abs() < 0.02);
        assert!((share(1) - 0.35).abs() < 0.02);
        assert!((share(2) - 0.25).abs() < 0.02);
    }

    /// One-sample Kolmogorov-Smirnov statistic against Exp(rate).
    fn ks_exponential(samples: &mut [f64], rate: f64) -> f64 {
        samples.sort_by(f64::total_cmp);
        let n = samples.len() as f64;
        samples
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let cdf = 1.0 - (-rate * x).exp();
                (cdf - i as f64 / n)
                    .abs()
                    .max(((i + 1) as f64 / n - cdf).abs())
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn inter_arrivals_are_exponential() {
        for cfg in [
            WorkloadConfig::default(),
            WorkloadConfig {
                arrival_rate: Some(1000.0 / 120.0),
                session_count: 5000,
                duration_s: 600.0,
                ..Default::default()
            },
        ] {
            let w = gen(&cfg);
            let mut gaps: Vec<f64> = w
                .requests
                .windows(2)
                .map(|p| (p[1].arrival - p[0].arrival).as_secs_f64())
                .collect();
            let rate = cfg
                .arrival_rate
                .unwrap_or(cfg.session_count as f64 / cfg.duration_s);
            let d = ks_exponential(&mut gaps, rate);
            // alpha = 0.01
            let critical = 1.628 / (gaps.len() as f64).sqrt();
            assert!(d < critical, "D = {d}, critical = {critical}");
        }
    }

    #[test]
    fn errors() {
        let bad = [
            WorkloadConfig {
                duration_s: 0.0,
                ..Default::default()
            },
            WorkloadConfig {
                arrival_rate: Some(0.0),
                ..Default::default()
            },
            WorkloadConfig {
                flows_bps: vec![],
                ..Default::default()
            },
            WorkloadConfig {
                class_weights: vec![ClassWeight {
                    class: "Premium".into(),
                    weight: 0.5,
                }],
                ..Default::default()
            },
        ];
        for cfg in bad {
            assert!(generate(&cfg, &ClassConfig::defaults(), &egresses()).is_err());
        }
        let be = WorkloadConfig {
            class_weights: vec![ClassWeight {
                class: "BestEffort".into(),
                weight: 1.0,
            }],
            ..Default::default()
        };
        assert!(generate(&be, &ClassConfig::defaults(), &egresses()).is_err());
    }
}
