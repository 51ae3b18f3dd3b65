//! Per-class bandwidth ledger and the over-reservation controller.
//!
//! Every directed link keeps one [`CosState`] per class of service. The
//! ingress admits a session for free while the class usage plus the request
//! fits inside the current reservation; otherwise it grows the reservation
//! by a utilization-weighted surplus, and when even the class ceiling is too
//! small it moves ceiling bandwidth over from the other classes.
//!
//! All arithmetic is integer bits per second. Fractions are evaluated as
//! exact rationals and floored once at the end, so re-sizing conserves the
//! per-link ceiling total exactly.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::topology::{LinkId, Network};
use crate::units::Bps;

#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassId(pub u8);

impl ClassId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Scenario-level description of one class of service.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassConfig {
    pub name: String,
    /// Ceiling as a fraction of link capacity.
    pub mrth_fraction: f64,
    /// Committed floor as a fraction of the ceiling.
    pub crth_fraction_of_mrth: f64,
    /// Best effort is never admission controlled and never donates.
    #[serde(default)]
    pub best_effort: bool,
}

impl ClassConfig {
    pub fn new(name: &str, mrth_fraction: f64, crth_fraction_of_mrth: f64) -> Self {
        Self {
            name: name.to_owned(),
            mrth_fraction,
            crth_fraction_of_mrth,
            best_effort: false,
        }
    }

    /// Premium, Gold and Silver plus best effort, each with a ceiling of
    /// 20% of capacity and a commitment of half the ceiling.
    pub fn defaults() -> Vec<ClassConfig> {
        let mut be = ClassConfig::new("BestEffort", 0.20, 0.50);
        be.best_effort = true;
        vec![
            ClassConfig::new("Premium", 0.20, 0.50),
            ClassConfig::new("Gold", 0.20, 0.50),
            ClassConfig::new("Silver", 0.20, 0.50),
            be,
        ]
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AsacError {
    #[error("unknown class {0:?}")]
    UnknownClass(ClassId),
    #[error("class {0:?} is not admission controlled")]
    NotControlled(ClassId),
    #[error("no other admission-controlled class to borrow from")]
    NoDonor,
    #[error("release of {requested} bps on link {link:?} class {class:?} exceeds usage {usage}")]
    Underflow {
        link: LinkId,
        class: ClassId,
        requested: Bps,
        usage: Bps,
    },
    #[error("class configuration invalid: {0}")]
    Config(String),
}

/// Bandwidth ledger of one class on one link.
///
/// Holds `0 <= bu <= brv <= mrth` and `crth <= mrth`.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CosState {
    pub class: ClassId,
    pub crth: Bps,
    pub mrth: Bps,
    pub brv: Bps,
    pub bu: Bps,
    pub controlled: bool,
    /// Set once the bootstrap reservation has been applied.
    pub initialized: bool,
}

impl CosState {
    pub fn new(class: ClassId, crth: Bps, mrth: Bps) -> Self {
        Self {
            class,
            crth,
            mrth,
            brv: 0,
            bu: 0,
            controlled: true,
            initialized: false,
        }
    }

    pub fn headroom(&self) -> Bps {
        self.brv.saturating_sub(self.bu)
    }

    pub fn invariant_holds(&self) -> bool {
        self.bu <= self.brv && self.brv <= self.mrth && self.crth <= self.mrth
    }
}

/// The per-class ledgers of one link.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CosTable {
    pub classes: Vec<CosState>,
}

impl CosTable {
    pub fn from_config(capacity: Bps, classes: &[ClassConfig]) -> Result<CosTable, AsacError> {
        let mut total = 0;
        let mut out = Vec::with_capacity(classes.len());
        for (i, c) in classes.iter().enumerate() {
            if !(0.0..=1.0).contains(&c.mrth_fraction)
                || !(0.0..=1.0).contains(&c.crth_fraction_of_mrth)
            {
                return Err(AsacError::Config(format!(
                    "class {} fractions must lie in [0, 1]",
                    c.name
                )));
            }
            let mrth = (capacity as f64 * c.mrth_fraction).floor() as Bps;
            let crth = (mrth as f64 * c.crth_fraction_of_mrth).floor() as Bps;
            total += mrth;
            let mut st = CosState::new(ClassId(i as u8), crth, mrth);
            st.controlled = !c.best_effort;
            out.push(st);
        }
        if total > capacity {
            return Err(AsacError::Config(format!(
                "class ceilings sum to {total} bps, above capacity {capacity} bps"
            )));
        }
        Ok(CosTable { classes: out })
    }

    pub fn get(&self, class: ClassId) -> Result<&CosState, AsacError> {
        self.classes
            .get(class.index())
            .ok_or(AsacError::UnknownClass(class))
    }

    pub fn get_mut(&mut self, class: ClassId) -> Result<&mut CosState, AsacError> {
        self.classes
            .get_mut(class.index())
            .ok_or(AsacError::UnknownClass(class))
    }

    pub fn total_mrth(&self) -> Bps {
        self.classes.iter().map(|c| c.mrth).sum()
    }

    pub fn invariant_holds(&self, capacity: Bps) -> bool {
        self.classes.iter().all(CosState::invariant_holds) && self.total_mrth() <= capacity
    }
}

/// Authoritative per-link class ledgers, indexed by [`LinkId`].
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Ledger {
    tables: Vec<CosTable>,
}

impl Ledger {
    pub fn new(net: &Network, classes: &[ClassConfig]) -> Result<Ledger, AsacError> {
        let tables = net
            .links()
            .iter()
            .map(|l| CosTable::from_config(l.capacity, classes))
            .collect::<Result<_, _>>()?;
        Ok(Ledger { tables })
    }

    pub fn table(&self, link: LinkId) -> &CosTable {
        &self.tables[link.index()]
    }

    pub fn table_mut(&mut self, link: LinkId) -> &mut CosTable {
        &mut self.tables[link.index()]
    }

    pub fn tables(&self) -> &[CosTable] {
        &self.tables
    }

    /// Sum of one class's ceiling over all links.
    pub fn class_mrth_total(&self, class: ClassId) -> u128 {
        self.tables
            .iter()
            .filter_map(|t| t.get(class).ok())
            .map(|c| c.mrth as u128)
            .sum()
    }
}

/// Bootstrap reservation: `brv = factor * mrth` for every class without
/// reservation state. Returns whether anything changed.
pub fn init_class_reservations(table: &mut CosTable, factor: f64) -> bool {
    debug_assert!(factor > 0.0 && factor <= 1.0);
    let mut changed = false;
    for c in table.classes.iter_mut().filter(|c| !c.initialized) {
        c.brv = ((c.mrth as f64 * factor).floor() as Bps)
            .max(c.bu)
            .min(c.mrth);
        c.initialized = true;
        changed = true;
    }
    changed
}

/// Over-reservation surplus `(bu / mrth) * (mrth - bu - brq)`, floored.
///
/// Negative means the request does not fit under the ceiling. A zero
/// ceiling always fails.
pub fn compute_bov(cos: &CosState, brq: Bps) -> i64 {
    if cos.mrth == 0 {
        return -1;
    }
    let mrth = cos.mrth as i128;
    let bu = cos.bu as i128;
    let available = mrth - bu - brq as i128;
    let num = bu * available;
    num.div_euclid(mrth) as i64
}

/// How a grown reservation is derived from the surplus.
#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BrvRule {
    /// `brv = bu + brq + bov`, clamped to the ceiling.
    #[default]
    Cumulative,
    /// `brv = bov + brq`, clamped to the ceiling. Can leave `brv < bu`.
    Literal,
}

/// New class state after growing the reservation by `bov`.
pub fn apply_over_reservation(cos: &CosState, bov: i64, brq: Bps, rule: BrvRule) -> CosState {
    debug_assert!(bov >= 0);
    let bov = bov.max(0) as Bps;
    let target = match rule {
        BrvRule::Cumulative => cos.bu + brq + bov,
        BrvRule::Literal => bov + brq,
    };
    CosState {
        brv: target.min(cos.mrth),
        ..*cos
    }
}

/// Exact non-negative fraction used to report the indexes.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ratio {
    pub num: u128,
    pub den: u128,
}

impl Ratio {
    pub fn one() -> Ratio {
        Ratio { num: 1, den: 1 }
    }

    pub fn as_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

/// Contribution of one donor class to a re-sizing.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Donation {
    pub class: ClassId,
    pub b_idx: Ratio,
    pub th_idx: Ratio,
    pub bref: Bps,
    pub brl: Bps,
}

/// Ceiling transfer from the donor classes to a congested class.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReadjustPlan {
    pub target: ClassId,
    pub donors: Vec<Donation>,
    pub gain: Bps,
}

impl ReadjustPlan {
    pub fn is_effective(&self) -> bool {
        self.gain > 0
    }

    /// Applies the transfer. Donor reservations above their new ceiling are
    /// trimmed to it.
    pub fn apply(&self, table: &mut CosTable) -> Result<(), AsacError> {
        for d in &self.donors {
            let c = table.get_mut(d.class)?;
            c.mrth -= d.brl;
            c.brv = c.brv.min(c.mrth);
        }
        table.get_mut(self.target)?.mrth += self.gain;
        Ok(())
    }
}

/// Donation of a single class.
///
/// `bref` is the commitment while the class uses less than it, and the
/// current reservation otherwise. The released amount is
/// `((b_idx + th_idx) / 2) * (mrth - bref)` with
/// `b_idx = (brv - bu) / brv` (1 for an empty reservation) and
/// `th_idx = (mrth - bref) / mrth`.
pub fn donation(cos: &CosState) -> Donation {
    let bref = if cos.bu < cos.crth { cos.crth } else { cos.brv };
    let b_idx = if cos.brv == 0 {
        Ratio::one()
    } else {
        Ratio {
            num: (cos.brv - cos.bu) as u128,
            den: cos.brv as u128,
        }
    };
    if cos.mrth == 0 {
        return Donation {
            class: cos.class,
            b_idx,
            th_idx: Ratio { num: 0, den: 1 },
            bref,
            brl: 0,
        };
    }
    let avail = cos.mrth.saturating_sub(bref) as u128;
    let th_idx = Ratio {
        num: avail,
        den: cos.mrth as u128,
    };
    // (b.num/b.den + t.num/t.den) / 2 * avail
    let num = (b_idx.num * th_idx.den + th_idx.num * b_idx.den) * avail;
    let den = 2 * b_idx.den * th_idx.den;
    Donation {
        class: cos.class,
        b_idx,
        th_idx,
        bref,
        brl: (num / den) as Bps,
    }
}

/// Plans moving ceiling bandwidth from every other admission-controlled
/// class to `congested`.
pub fn compute_readjust_plan(
    table: &CosTable,
    congested: ClassId,
) -> Result<ReadjustPlan, AsacError> {
    let target = table.get(congested)?;
    if !target.controlled {
        return Err(AsacError::NotControlled(congested));
    }
    let donors: Vec<Donation> = table
        .classes
        .iter()
        .filter(|c| c.controlled && c.class != congested)
        .map(donation)
        .collect();
    if donors.is_empty() {
        return Err(AsacError::NoDonor);
    }
    let gain = donors.iter().map(|d| d.brl).sum();
    Ok(ReadjustPlan {
        target: congested,
        donors,
        gain,
    })
}

/// A session's class and rate.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Qspec {
    pub class: ClassId,
    pub brq: Bps,
}

/// What a link must do before a request fits.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LinkUpdate {
    pub link: LinkId,
    pub class: ClassId,
    pub readjust: Option<ReadjustPlan>,
    pub new_brv: Bps,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Admission {
    AdmitFree,
    NeedsAdjust(Vec<LinkUpdate>),
    NeedsReadjust(Vec<LinkUpdate>),
    Reject,
}

impl Admission {
    pub fn admits(&self) -> bool {
        !matches!(self, Admission::Reject)
    }

    pub fn label(&self) -> &'static str {
        match self {
            Admission::AdmitFree => "admit_free",
            Admission::NeedsAdjust(_) => "needs_adjust",
            Admission::NeedsReadjust(_) => "needs_readjust",
            Admission::Reject => "reject",
        }
    }
}

/// The ingress's picture of the class ledgers on the links its trees use.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct IngressPathView {
    links: BTreeMap<LinkId, CosTable>,
}

impl IngressPathView {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn learn(&mut self, link: LinkId, table: CosTable) {
        self.links.insert(link, table);
    }

    pub fn table(&self, link: LinkId) -> Option<&CosTable> {
        self.links.get(&link)
    }

    pub fn table_mut(&mut self, link: LinkId) -> Option<&mut CosTable> {
        self.links.get_mut(&link)
    }

    pub fn links(&self) -> impl Iterator<Item = (&LinkId, &CosTable)> {
        self.links.iter()
    }

    pub fn forget(&mut self, link: LinkId) {
        self.links.remove(&link);
    }

    /// Link with the least free reservation for `class`; ties go to the
    /// lowest link id.
    pub fn bottleneck(&self, links: &[LinkId], class: ClassId) -> Option<(LinkId, CosState)> {
        links
            .iter()
            .filter_map(|&l| {
                let st = self.links.get(&l)?.get(class).ok()?;
                Some((l, *st))
            })
            .min_by_key(|(l, st)| (st.headroom(), *l))
    }

    /// Classifies a request against every link of a tree.
    ///
    /// Links whose reservation already covers the request need nothing.
    /// For the others the surplus is computed on the link's own ledger;
    /// where the ceiling is too small, a ceiling transfer is planned first
    /// and the request is rejected if no transfer makes it fit.
    pub fn admission_check(
        &self,
        links: &[LinkId],
        qspec: &Qspec,
        rule: BrvRule,
    ) -> Result<Admission, AsacError> {
        let mut updates = Vec::new();
        let mut readjust = false;
        for &l in links {
            let Some(table) = self.links.get(&l) else {
                return Ok(Admission::Reject);
            };
            let st = table.get(qspec.class)?;
            if !st.controlled {
                return Ok(Admission::AdmitFree);
            }
            if st.bu + qspec.brq <= st.brv {
                continue;
            }
            let mut table = table.clone();
            let mut plan = None;
            if st.bu + qspec.brq > st.mrth {
                let p = match compute_readjust_plan(&table, qspec.class) {
                    Ok(p) => p,
                    Err(AsacError::NoDonor) => return Ok(Admission::Reject),
                    Err(e) => return Err(e),
                };
                if !p.is_effective() {
                    return Ok(Admission::Reject);
                }
                p.apply(&mut table)?;
                plan = Some(p);
                readjust = true;
            }
            let st = table.get(qspec.class)?;
            let bov = compute_bov(st, qspec.brq);
            if bov < 0 {
                return Ok(Admission::Reject);
            }
            let grown = apply_over_reservation(st, bov, qspec.brq, rule);
            updates.push(LinkUpdate {
                link: l,
                class: qspec.class,
                readjust: plan,
                new_brv: grown.brv,
            });
        }
        Ok(if updates.is_empty() {
            Admission::AdmitFree
        } else if readjust {
            Admission::NeedsReadjust(updates)
        } else {
            Admission::NeedsAdjust(updates)
        })
    }
}

/// Applies a planned update to one link's ledger. Fails without side
/// effects if the ledger no longer accepts it.
pub fn apply_link_update(table: &mut CosTable, update: &LinkUpdate) -> Result<(), AsacError> {
    let mut next = table.clone();
    if let Some(plan) = &update.readjust {
        plan.apply(&mut next)?;
    }
    let st = next.get_mut(update.class)?;
    if update.new_brv > st.mrth {
        return Err(AsacError::Config(format!(
            "reservation {} above ceiling {}",
            update.new_brv, st.mrth
        )));
    }
    st.brv = st.brv.max(update.new_brv);
    if !next.classes.iter().all(CosState::invariant_holds) {
        return Err(AsacError::Config("update breaks the class ledger".into()));
    }
    *table = next;
    Ok(())
}

/// Adds `brq` to the class usage on every link.
pub fn commit_flow<'a>(
    tables: impl IntoIterator<Item = &'a mut CosTable>,
    class: ClassId,
    brq: Bps,
) -> Result<(), AsacError> {
    for t in tables {
        let st = t.get_mut(class)?;
        if st.controlled {
            st.bu += brq;
        }
    }
    Ok(())
}

/// Removes `brq` from the class usage on every link, leaving the
/// reservation in place. Usage is clamped at zero and reported as an error.
pub fn release_flow<'a>(
    tables: impl IntoIterator<Item = (LinkId, &'a mut CosTable)>,
    class: ClassId,
    brq: Bps,
) -> Result<(), AsacError> {
    let mut first_err = None;
    for (link, t) in tables {
        let st = t.get_mut(class)?;
        if !st.controlled {
            continue;
        }
        if st.bu < brq {
            first_err.get_or_insert(AsacError::Underflow {
                link,
                class,
                requested: brq,
                usage: st.bu,
            });
            st.bu = 0;
        } else {
            st.bu -= brq;
        }
    }
    first_err.map_or(Ok(()), Err)
}
