//! Edge-to-edge signaling messages and the per-router handlers.
//!
//! A `RESERVE` carries one purpose flag:
//!
//! * `I` floods the domain from the ingress, bootstraps class reservations
//!   on every router and records the outgoing interfaces in its RSVPATH.
//! * `M` walks a recorded RSVPATH and installs multicast forwarding state.
//! * `O` walks an aggregation tree and grows a class reservation.
//! * `R` reserves one flow along a per-flow tree (baseline only).
//! * `T` tears one per-flow reservation down (baseline only).
//!
//! `RESPONSE` returns toward the originating ingress with `OK` or a failure
//! indication. Handlers are pure transitions on one router's state plus the
//! class ledgers of its outgoing links; the engine moves the messages.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::agtree::SsmChannel;
use crate::asac::{self, init_class_reservations, ClassId, CosTable, Ledger, LinkUpdate, Qspec};
use crate::topology::{InterfaceId, LinkId, Network, NodeId, Role};
use crate::units::Bps;

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ReserveFlag {
    /// Initialization.
    I,
    /// Multicast tree setup.
    M,
    /// Over-reservation update.
    O,
    /// Tear.
    T,
    /// Per-flow request.
    R,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ResponseStatus {
    Ok,
    Fail,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MessageKind {
    Reserve(ReserveFlag),
    Response(ResponseStatus),
}

/// Accounting bucket for signaling metrics.
#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MsgClass {
    ReserveI,
    ReserveM,
    ReserveO,
    ReserveR,
    ReserveT,
    Response,
}

impl MsgClass {
    pub const ALL: [MsgClass; 6] = [
        MsgClass::ReserveI,
        MsgClass::ReserveM,
        MsgClass::ReserveO,
        MsgClass::ReserveR,
        MsgClass::ReserveT,
        MsgClass::Response,
    ];

    pub fn is_reserve(self) -> bool {
        self != MsgClass::Response
    }

    pub fn name(self) -> &'static str {
        match self {
            MsgClass::ReserveI => "reserve_i",
            MsgClass::ReserveM => "reserve_m",
            MsgClass::ReserveO => "reserve_o",
            MsgClass::ReserveR => "reserve_r",
            MsgClass::ReserveT => "reserve_t",
            MsgClass::Response => "response",
        }
    }
}

impl fmt::Display for MsgClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitPayload {
    pub factor: f64,
    pub per_class_mrth: Vec<(ClassId, Bps)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub kind: MessageKind,
    pub rsvpath: Option<Vec<InterfaceId>>,
    pub qspec: Option<Qspec>,
    pub init: Option<InitPayload>,
    /// Session or channel reference; carries the group of an SSM channel
    /// for tree-routed messages.
    pub session_ref: Option<u64>,
    pub origin: NodeId,
}

pub const HEADER_BYTES: usize = 24;
pub const RSVPATH_BASE_BYTES: usize = 4;
pub const RSVPATH_ENTRY_BYTES: usize = 4;
pub const QSPEC_BYTES: usize = 12;
pub const INIT_BASE_BYTES: usize = 4;
pub const INIT_CLASS_BYTES: usize = 12;
pub const SESSION_REF_BYTES: usize = 8;

/// Modeled size on the wire: the common header plus each present object.
pub fn wire_size(msg: &Message) -> usize {
    HEADER_BYTES
        + msg
            .rsvpath
            .as_ref()
            .map_or(0, |p| RSVPATH_BASE_BYTES + RSVPATH_ENTRY_BYTES * p.len())
        + msg.qspec.map_or(0, |_| QSPEC_BYTES)
        + msg.init.as_ref().map_or(0, |i| {
            INIT_BASE_BYTES + INIT_CLASS_BYTES * i.per_class_mrth.len()
        })
        + msg.session_ref.map_or(0, |_| SESSION_REF_BYTES)
}

impl Message {
    fn bare(kind: MessageKind, origin: NodeId) -> Message {
        Message {
            kind,
            rsvpath: None,
            qspec: None,
            init: None,
            session_ref: None,
            origin,
        }
    }

    pub fn reserve_i(origin: NodeId, init: InitPayload) -> Message {
        Message {
            rsvpath: Some(Vec::new()),
            init: Some(init),
            ..Message::bare(MessageKind::Reserve(ReserveFlag::I), origin)
        }
    }

    pub fn reserve_m(channel: SsmChannel, rsvpath: Vec<InterfaceId>) -> Message {
        Message {
            rsvpath: Some(rsvpath),
            session_ref: Some(channel.group as u64),
            ..Message::bare(MessageKind::Reserve(ReserveFlag::M), channel.source)
        }
    }

    pub fn reserve_o(channel: SsmChannel, qspec: Qspec) -> Message {
        Message {
            qspec: Some(qspec),
            session_ref: Some(channel.group as u64),
            ..Message::bare(MessageKind::Reserve(ReserveFlag::O), channel.source)
        }
    }

    pub fn reserve_r(channel: SsmChannel, qspec: Qspec) -> Message {
        Message {
            qspec: Some(qspec),
            session_ref: Some(channel.group as u64),
            ..Message::bare(MessageKind::Reserve(ReserveFlag::R), channel.source)
        }
    }

    pub fn reserve_t(channel: SsmChannel) -> Message {
        Message {
            session_ref: Some(channel.group as u64),
            ..Message::bare(MessageKind::Reserve(ReserveFlag::T), channel.source)
        }
    }

    pub fn response(status: ResponseStatus, origin: NodeId, session_ref: Option<u64>) -> Message {
        Message {
            session_ref,
            ..Message::bare(MessageKind::Response(status), origin)
        }
    }

    pub fn class(&self) -> MsgClass {
        match self.kind {
            MessageKind::Reserve(ReserveFlag::I) => MsgClass::ReserveI,
            MessageKind::Reserve(ReserveFlag::M) => MsgClass::ReserveM,
            MessageKind::Reserve(ReserveFlag::O) => MsgClass::ReserveO,
            MessageKind::Reserve(ReserveFlag::R) => MsgClass::ReserveR,
            MessageKind::Reserve(ReserveFlag::T) => MsgClass::ReserveT,
            MessageKind::Response(_) => MsgClass::Response,
        }
    }

    /// Channel named by a tree-routed message.
    pub fn channel(&self) -> Option<SsmChannel> {
        self.session_ref.map(|g| SsmChannel {
            source: self.origin,
            group: g as u32,
        })
    }

    /// Checks the per-flag object requirements.
    pub fn is_well_formed(&self) -> bool {
        let path_simple = self
            .rsvpath
            .as_ref()
            .is_none_or(|p| p.iter().collect::<BTreeSet<_>>().len() == p.len());
        path_simple
            && match self.kind {
                MessageKind::Reserve(ReserveFlag::I) => self.init.is_some(),
                MessageKind::Reserve(ReserveFlag::M) => {
                    self.rsvpath.as_ref().is_some_and(|p| !p.is_empty())
                        && self.session_ref.is_some()
                }
                MessageKind::Reserve(ReserveFlag::O | ReserveFlag::R) => {
                    self.qspec.is_some() && self.session_ref.is_some()
                }
                MessageKind::Reserve(ReserveFlag::T) => self.session_ref.is_some(),
                MessageKind::Response(_) => true,
            }
    }
}

/// Per-flow reservation held on one outgoing link.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct FlowReservation {
    pub class: ClassId,
    pub rate: Bps,
}

/// Signaling state of one router.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NodeState {
    pub node: NodeId,
    pub role: Role,
    /// Channel to outgoing interfaces. An empty set marks local delivery.
    pub mrib: BTreeMap<SsmChannel, BTreeSet<InterfaceId>>,
    pub flows: BTreeMap<(SsmChannel, LinkId), FlowReservation>,
}

impl NodeState {
    pub fn new(net: &Network, node: NodeId) -> Self {
        Self {
            node,
            role: net.node(node).role,
            mrib: BTreeMap::new(),
            flows: BTreeMap::new(),
        }
    }

    pub fn multicast_state(&self) -> usize {
        self.mrib.len()
    }

    fn install(&mut self, channel: SsmChannel, out: Option<InterfaceId>) -> bool {
        let entry = self.mrib.entry(channel).or_default();
        match out {
            Some(i) => entry.insert(i),
            None => false,
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    /// RSVPATH already holds one of this router's interfaces.
    Loop,
    /// Path reached the hop limit before an egress.
    HopLimit,
    /// Another edge router does not relay floods.
    EdgeRelay,
    /// Router is not on the message's path.
    NotOnPath,
    /// No state for the referenced channel or session.
    UnknownRef,
    Malformed,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Action {
    /// Send over a directed link.
    Forward {
        link: LinkId,
        msg: Message,
    },
    /// Send back toward the originating ingress.
    Respond(Message),
    Drop(DropReason),
    /// A link ledger changed; `previous` allows rollback.
    Applied {
        link: LinkId,
        previous: CosTable,
    },
    /// Bootstrap reservation applied on a link.
    Initialized(LinkId),
}

/// Bootstraps the ingress and produces the first flood copies.
pub fn originate_reserve_i(
    net: &Network,
    state: &mut NodeState,
    ledger: &mut Ledger,
    factor: f64,
) -> Vec<Action> {
    let mut out = init_local(net, state.node, ledger, factor);
    let payload = InitPayload {
        factor,
        per_class_mrth: net
            .out_links(state.node)
            .first()
            .map(|&l| {
                ledger
                    .table(l)
                    .classes
                    .iter()
                    .map(|c| (c.class, c.mrth))
                    .collect()
            })
            .unwrap_or_default(),
    };
    let base = Message::reserve_i(state.node, payload);
    for &l in net.out_links(state.node) {
        let mut m = base.clone();
        m.rsvpath
            .get_or_insert_with(Vec::new)
            .push(net.link(l).out_if);
        out.push(Action::Forward { link: l, msg: m });
    }
    out
}

fn init_local(net: &Network, node: NodeId, ledger: &mut Ledger, factor: f64) -> Vec<Action> {
    net.out_links(node)
        .iter()
        .filter(|&&l| init_class_reservations(ledger.table_mut(l), factor))
        .map(|&l| Action::Initialized(l))
        .collect()
}

/// Flooded initialization request arriving on `arrival`.
///
/// With `hop_limit` set, a core router does not extend a path that already
/// has that many hops.
pub fn handle_reserve_i(
    net: &Network,
    state: &mut NodeState,
    ledger: &mut Ledger,
    msg: &Message,
    arrival: InterfaceId,
    hop_limit: Option<usize>,
) -> Vec<Action> {
    let (Some(init), Some(path)) = (&msg.init, &msg.rsvpath) else {
        return vec![Action::Drop(DropReason::Malformed)];
    };
    let mut out = init_local(net, state.node, ledger, init.factor);
    let local = &net.node(state.node).interfaces;
    if path.iter().any(|i| local.contains(i)) {
        out.push(Action::Drop(DropReason::Loop));
        return out;
    }
    match state.role {
        Role::Egress => {
            let mut resp = Message::response(ResponseStatus::Ok, state.node, None);
            resp.rsvpath = Some(path.clone());
            out.push(Action::Respond(resp));
        }
        Role::Ingress => out.push(Action::Drop(DropReason::EdgeRelay)),
        Role::Core => {
            if hop_limit.is_some_and(|h| path.len() >= h) {
                out.push(Action::Drop(DropReason::HopLimit));
                return out;
            }
            for &itf in local.iter().filter(|&&i| i != arrival) {
                let mut m = msg.clone();
                m.rsvpath.get_or_insert_with(Vec::new).push(itf);
                out.push(Action::Forward {
                    link: net.interface(itf).out_link,
                    msg: m,
                });
            }
        }
    }
    out
}

/// Installs forwarding state for the channel along the RSVPATH.
pub fn handle_reserve_m(net: &Network, state: &mut NodeState, msg: &Message) -> Vec<Action> {
    let (Some(path), Some(channel)) = (&msg.rsvpath, msg.channel()) else {
        return vec![Action::Drop(DropReason::Malformed)];
    };
    if let Some(&itf) = path.iter().find(|&&i| net.interface(i).node == state.node) {
        state.install(channel, Some(itf));
        return vec![Action::Forward {
            link: net.interface(itf).out_link,
            msg: msg.clone(),
        }];
    }
    let terminal = path.last().map(|&i| net.link(net.interface(i).out_link).to);
    if terminal == Some(state.node) {
        state.install(channel, None);
        return vec![Action::Respond(Message::response(
            ResponseStatus::Ok,
            state.node,
            msg.session_ref,
        ))];
    }
    vec![Action::Drop(DropReason::NotOnPath)]
}

/// Grows reservations on this router's outgoing tree links and forwards the
/// update down the tree. `updates` are the per-link targets computed at the
/// ingress; links without an entry are left alone.
pub fn handle_reserve_o(
    net: &Network,
    state: &mut NodeState,
    ledger: &mut Ledger,
    msg: &Message,
    updates: &[LinkUpdate],
) -> Vec<Action> {
    let (Some(channel), Some(_)) = (msg.channel(), msg.qspec) else {
        return vec![Action::Drop(DropReason::Malformed)];
    };
    let Some(outs) = state.mrib.get(&channel) else {
        return vec![Action::Drop(DropReason::UnknownRef)];
    };
    let links: Vec<LinkId> = outs.iter().map(|&i| net.interface(i).out_link).collect();
    let mut out = Vec::new();
    for &l in &links {
        let Some(update) = updates.iter().find(|u| u.link == l) else {
            continue;
        };
        let previous = ledger.table(l).clone();
        if asac::apply_link_update(ledger.table_mut(l), update).is_err() {
            out.push(Action::Respond(Message::response(
                ResponseStatus::Fail,
                state.node,
                msg.session_ref,
            )));
            return out;
        }
        out.push(Action::Applied { link: l, previous });
    }
    if links.is_empty() {
        out.push(Action::Respond(Message::response(
            ResponseStatus::Ok,
            state.node,
            msg.session_ref,
        )));
    }
    for l in links {
        out.push(Action::Forward {
            link: l,
            msg: msg.clone(),
        });
    }
    out
}

/// Per-flow reservation along `out_links`, all or nothing at this router.
pub fn handle_reserve_r(
    state: &mut NodeState,
    net: &Network,
    ledger: &mut Ledger,
    msg: &Message,
    out_links: &[LinkId],
) -> Vec<Action> {
    let (Some(channel), Some(q)) = (msg.channel(), msg.qspec) else {
        return vec![Action::Drop(DropReason::Malformed)];
    };
    let fits = out_links.iter().all(|&l| {
        ledger
            .table(l)
            .get(q.class)
            .is_ok_and(|st| st.bu + q.brq <= st.mrth)
    });
    if !fits {
        return vec![Action::Respond(Message::response(
            ResponseStatus::Fail,
            state.node,
            msg.session_ref,
        ))];
    }
    let mut out = Vec::new();
    state.install(channel, None);
    for &l in out_links {
        let previous = ledger.table(l).clone();
        let st = ledger.table_mut(l).get_mut(q.class).expect("checked above");
        st.bu += q.brq;
        st.brv += q.brq;
        state.flows.insert(
            (channel, l),
            FlowReservation {
                class: q.class,
                rate: q.brq,
            },
        );
        state.install(channel, Some(net.link(l).out_if));
        out.push(Action::Applied { link: l, previous });
        out.push(Action::Forward {
            link: l,
            msg: msg.clone(),
        });
    }
    if out_links.is_empty() {
        out.push(Action::Respond(Message::response(
            ResponseStatus::Ok,
            state.node,
            msg.session_ref,
        )));
    }
    out
}

/// Releases the per-flow reservation and forwarding state of a channel.
pub fn handle_reserve_t(
    net: &Network,
    state: &mut NodeState,
    ledger: &mut Ledger,
    msg: &Message,
) -> Vec<Action> {
    let Some(channel) = msg.channel() else {
        return vec![Action::Drop(DropReason::Malformed)];
    };
    let Some(outs) = state.mrib.remove(&channel) else {
        return vec![Action::Drop(DropReason::UnknownRef)];
    };
    let mut out = Vec::new();
    for itf in outs {
        let l = net.interface(itf).out_link;
        if let Some(f) = state.flows.remove(&(channel, l)) {
            if let Ok(st) = ledger.table_mut(l).get_mut(f.class) {
                st.bu = st.bu.saturating_sub(f.rate);
                st.brv = st.brv.saturating_sub(f.rate);
            }
        }
        out.push(Action::Forward {
            link: l,
            msg: msg.clone(),
        });
    }
    out
}
