//! Run metrics: signaling volume, admissions, multicast state and the
//! per-tick time series written to CSV.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::mirap::{DropReason, MsgClass};
use crate::scenario::Mode;
use crate::topology::{LinkId, Network};
use crate::units::SimTime;

#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KindStats {
    /// Link transmissions.
    pub count: u64,
    pub bytes: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassStats {
    pub name: String,
    pub requests: u64,
    pub admitted: u64,
    pub blocked: u64,
}

impl ClassStats {
    pub fn blocking_percent(&self) -> f64 {
        if self.requests == 0 {
            0.0
        } else {
            100.0 * self.blocked as f64 / self.requests as f64
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TickRow {
    pub time_s: f64,
    /// Cumulative bytes per message class, in [`MsgClass::ALL`] order.
    pub bytes: Vec<u64>,
    /// RESERVE bytes sent by the ingress since the previous tick.
    pub ingress_reserve_bytes: u64,
    pub multicast_state: usize,
    pub admitted: Vec<u64>,
    pub blocked: Vec<u64>,
    /// Sum of each class ceiling over all links.
    pub class_mrth_total: Vec<u128>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub scenario: String,
    pub mode: Mode,
    pub seed: u64,
    pub duration_s: f64,
    pub messages: BTreeMap<MsgClass, KindStats>,
    pub total_signaling_bytes: u64,
    pub total_reserve_bytes: u64,
    /// RESERVE bytes sent after initialization completed.
    pub post_init_reserve_bytes: u64,
    pub classes: Vec<ClassStats>,
    pub admissions: u64,
    /// Admissions decided from the ingress view alone, with no messages.
    pub signaling_free_admissions: u64,
    pub signaling_free_percent: f64,
    pub adjustments: u64,
    pub readjustments: u64,
    pub failed_adjustments: u64,
    pub superset_deliveries: u64,
    pub switches: u64,
    pub switch_denials: u64,
    pub terminated_sessions: u64,
    pub ignored_script_events: u64,
    pub multicast_state_mean: f64,
    pub multicast_state_max: usize,
    /// Ingress multicast state at the end of the run.
    pub multicast_state_final: usize,
    /// Changes of the ingress multicast state after initialization.
    pub multicast_state_changes_after_init: u64,
    pub catalog_size: usize,
    pub unbranched_trees: usize,
    pub branched_trees: usize,
    /// Depth of the tree chosen for each admitted session.
    pub selected_depths: BTreeMap<usize, u64>,
    pub distinct_selected_trees: usize,
    pub init_time_s: f64,
    pub delay_diameter_s: f64,
    pub rate_window_s: f64,
    /// Highest signaling rate on any link over any window, as a fraction
    /// of capacity.
    pub peak_link_share: f64,
    /// Initialization bytes on the busiest link averaged over the
    /// initialization phase, as a fraction of capacity.
    pub init_peak_link_share: f64,
    pub flood_copies: u64,
    pub drops: BTreeMap<DropReason, u64>,
    pub view_checks: u64,
    pub view_mismatches: u64,
    pub ledger_violations: u64,
    pub accounting_errors: u64,
    pub mrth_resizes: u64,
    pub trace_hash: String,
    pub events_processed: u64,
    #[serde(skip)]
    pub ticks: Vec<TickRow>,
}

impl MetricsReport {
    pub fn reserve_t_bytes(&self) -> u64 {
        self.messages
            .get(&MsgClass::ReserveT)
            .map_or(0, |k| k.bytes)
    }

    pub fn class_requests(&self) -> u64 {
        self.classes.iter().map(|c| c.requests).sum()
    }

    pub fn summary_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn csv_header(&self) -> String {
        let mut h = String::from("time_s");
        for k in MsgClass::ALL {
            let _ = write!(h, ",{}_bytes", k.name());
        }
        h.push_str(",ingress_reserve_bytes,multicast_state");
        for c in &self.classes {
            let _ = write!(h, ",{0}_admitted,{0}_blocked", c.name);
        }
        for c in &self.classes {
            let _ = write!(h, ",{}_mrth_total", c.name);
        }
        h
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.csv_header();
        out.push('\n');
        for r in &self.ticks {
            let _ = write!(out, "{:.3}", r.time_s);
            for b in &r.bytes {
                let _ = write!(out, ",{b}");
            }
            let _ = write!(out, ",{},{}", r.ingress_reserve_bytes, r.multicast_state);
            for (a, b) in r.admitted.iter().zip(&r.blocked) {
                let _ = write!(out, ",{a},{b}");
            }
            for m in &r.class_mrth_total {
                let _ = write!(out, ",{m}");
            }
            out.push('\n');
        }
        out
    }
}

/// Mutable counters behind a report.
pub(crate) struct Recorder {
    pub messages: BTreeMap<MsgClass, KindStats>,
    pub classes: Vec<ClassStats>,
    pub signaling_free: u64,
    pub adjustments: u64,
    pub readjustments: u64,
    pub failed_adjustments: u64,
    pub superset_deliveries: u64,
    pub switches: u64,
    pub switch_denials: u64,
    pub terminated: u64,
    pub ignored_script_events: u64,
    pub selected_depths: BTreeMap<usize, u64>,
    pub selected_trees: BTreeMap<u32, u64>,
    pub post_init_reserve_bytes: u64,
    pub init_done: Option<SimTime>,
    pub flood_copies: u64,
    pub drops: BTreeMap<DropReason, u64>,
    pub view_checks: u64,
    pub view_mismatches: u64,
    pub ledger_violations: u64,
    pub accounting_errors: u64,
    pub mrth_resizes: u64,
    window: SimTime,
    link_windows: BTreeMap<(LinkId, u64), u64>,
    init_link_bytes: BTreeMap<LinkId, u64>,
    ingress_reserve_since_tick: u64,
    state_level: usize,
    state_since: SimTime,
    state_area: u128,
    state_max: usize,
    state_changes_after_init: u64,
    pub ticks: Vec<TickRow>,
}

impl Recorder {
    pub fn new(class_names: Vec<String>, window: SimTime) -> Self {
        Self {
            messages: MsgClass::ALL
                .iter()
                .map(|&k| (k, KindStats::default()))
                .collect(),
            classes: class_names
                .into_iter()
                .map(|name| ClassStats {
                    name,
                    ..Default::default()
                })
                .collect(),
            signaling_free: 0,
            adjustments: 0,
            readjustments: 0,
            failed_adjustments: 0,
            superset_deliveries: 0,
            switches: 0,
            switch_denials: 0,
            terminated: 0,
            ignored_script_events: 0,
            selected_depths: BTreeMap::new(),
            selected_trees: BTreeMap::new(),
            post_init_reserve_bytes: 0,
            init_done: None,
            flood_copies: 0,
            drops: BTreeMap::new(),
            view_checks: 0,
            view_mismatches: 0,
            ledger_violations: 0,
            accounting_errors: 0,
            mrth_resizes: 0,
            window,
            link_windows: BTreeMap::new(),
            init_link_bytes: BTreeMap::new(),
            ingress_reserve_since_tick: 0,
            state_level: 0,
            state_since: SimTime::ZERO,
            state_area: 0,
            state_max: 0,
            state_changes_after_init: 0,
            ticks: Vec::new(),
        }
    }

    /// One message crossing one link at `at`.
    pub fn transmit(
        &mut self,
        at: SimTime,
        link: LinkId,
        kind: MsgClass,
        bytes: usize,
        from_ingress: bool,
        init_phase: bool,
    ) {
        let bytes = bytes as u64;
        let k = self.messages.entry(kind).or_default();
        k.count += 1;
        k.bytes += bytes;
        *self
            .link_windows
            .entry((link, at.as_nanos() / self.window.as_nanos().max(1)))
            .or_default() += bytes;
        if init_phase {
            *self.init_link_bytes.entry(link).or_default() += bytes;
        }
        if kind.is_reserve() {
            if from_ingress {
                self.ingress_reserve_since_tick += bytes;
            }
            if self.init_done.is_some_and(|t| at >= t) {
                self.post_init_reserve_bytes += bytes;
            }
        }
        if kind == MsgClass::ReserveI {
            self.flood_copies += 1;
        }
    }

    pub fn drop(&mut self, reason: DropReason) {
        *self.drops.entry(reason).or_default() += 1;
    }

    pub fn multicast_state(&mut self, at: SimTime, level: usize) {
        if level == self.state_level {
            return;
        }
        self.state_area += self.state_level as u128 * (at - self.state_since).as_nanos() as u128;
        self.state_since = at;
        self.state_level = level;
        self.state_max = self.state_max.max(level);
        if self.init_done.is_some_and(|t| at > t) {
            self.state_changes_after_init += 1;
        }
    }

    pub fn tick(&mut self, at: SimTime, row: TickRow) {
        debug_assert_eq!(SimTime::from_secs_f64(row.time_s), at);
        self.ingress_reserve_since_tick = 0;
        self.ticks.push(row);
    }

    pub fn take_ingress_reserve(&self) -> u64 {
        self.ingress_reserve_since_tick
    }

    #[allow(clippy::too_many_arguments)]
    pub fn finish(
        self,
        net: &Network,
        scenario: String,
        mode: Mode,
        seed: u64,
        duration: SimTime,
        catalog: (usize, usize, usize),
        trace_hash: String,
        events_processed: u64,
    ) -> MetricsReport {
        let total_signaling_bytes = self.messages.values().map(|k| k.bytes).sum();
        let total_reserve_bytes = self
            .messages
            .iter()
            .filter(|(k, _)| k.is_reserve())
            .map(|(_, v)| v.bytes)
            .sum();
        let admissions: u64 = self.classes.iter().map(|c| c.admitted).sum();
        let area = self.state_area
            + self.state_level as u128 * (duration - self.state_since).as_nanos() as u128;
        let mean = if duration.as_nanos() == 0 {
            self.state_level as f64
        } else {
            area as f64 / duration.as_nanos() as f64
        };
        let window_s = self.window.as_secs_f64();
        let share = |link: LinkId, bytes: u64| {
            bytes as f64 * 8.0 / window_s / net.link(link).capacity as f64
        };
        let peak = self
            .link_windows
            .iter()
            .map(|(&(l, _), &b)| share(l, b))
            .fold(0.0, f64::max);
        let init_s = self.init_done.unwrap_or(SimTime::ZERO).as_secs_f64();
        let init_peak = self
            .init_link_bytes
            .iter()
            .map(|(&l, &b)| {
                if init_s > 0.0 {
                    b as f64 * 8.0 / init_s / net.link(l).capacity as f64
                } else {
                    0.0
                }
            })
            .fold(0.0, f64::max);
        MetricsReport {
            scenario,
            mode,
            seed,
            duration_s: duration.as_secs_f64(),
            total_signaling_bytes,
            total_reserve_bytes,
            post_init_reserve_bytes: self.post_init_reserve_bytes,
            messages: self.messages,
            classes: self.classes,
            admissions,
            signaling_free_admissions: self.signaling_free,
            signaling_free_percent: if admissions == 0 {
                0.0
            } else {
                100.0 * self.signaling_free as f64 / admissions as f64
            },
            adjustments: self.adjustments,
            readjustments: self.readjustments,
            failed_adjustments: self.failed_adjustments,
            superset_deliveries: self.superset_deliveries,
            switches: self.switches,
            switch_denials: self.switch_denials,
            terminated_sessions: self.terminated,
            ignored_script_events: self.ignored_script_events,
            multicast_state_mean: mean,
            multicast_state_max: self.state_max,
            multicast_state_final: self.state_level,
            multicast_state_changes_after_init: self.state_changes_after_init,
            catalog_size: catalog.0,
            unbranched_trees: catalog.1,
            branched_trees: catalog.2,
            distinct_selected_trees: self.selected_trees.len(),
            selected_depths: self.selected_depths,
            init_time_s: self.init_done.unwrap_or(SimTime::ZERO).as_secs_f64(),
            delay_diameter_s: net.delay_diameter().as_secs_f64(),
            rate_window_s: window_s,
            peak_link_share: peak,
            init_peak_link_share: init_peak,
            flood_copies: self.flood_copies,
            drops: self.drops,
            view_checks: self.view_checks,
            view_mismatches: self.view_mismatches,
            ledger_violations: self.ledger_violations,
            accounting_errors: self.accounting_errors,
            mrth_resizes: self.mrth_resizes,
            trace_hash,
            events_processed,
            ticks: self.ticks,
        }
    }
}
