//! Discrete-event simulation of one scenario in either mode.
//!
//! Signaling messages travel hop by hop over directed links; each router
//! runs the protocol handlers from [`crate::mirap`] against the shared
//! per-link ledgers. The ingress keeps its own view of those ledgers for
//! signaling-free admission.

mod metrics;

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, VecDeque};

use sha2::{Digest, Sha256};
use thiserror::Error;

pub use metrics::{ClassStats, KindStats, MetricsReport, TickRow};

use crate::agtree::{
    build_unbranched_trees, enumerate_branched_trees, switch_session, AgTreeError, GroupAllocator,
    SessionMapping, SsmChannel, SwitchOutcome, TreeCatalog, TreeChoice, TreeDump, TreeId, TreeKind,
};
use crate::asac::{
    commit_flow, release_flow, Admission, AsacError, ClassId, CosTable, IngressPathView, Ledger,
    LinkUpdate, Qspec,
};
use crate::mirap::{
    self, handle_reserve_i, handle_reserve_m, handle_reserve_o, handle_reserve_r, handle_reserve_t,
    originate_reserve_i, Action, DropReason, Message, MessageKind, NodeState, ReserveFlag,
    ResponseStatus,
};
use crate::scenario::{Mode, ScenarioConfig, ScenarioError, ScriptedEvent};
use crate::topology::{shortest_paths_with, EdgePath, LinkId, Network, NodeId};
use crate::units::SimTime;
use crate::workload::{generate, SessionId, SessionRequest, WorkloadError, WorkloadEvent};
use metrics::Recorder;

/// Attempts per request before it is blocked for lack of progress.
const MAX_ATTEMPTS: u32 = 3;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Workload(#[from] WorkloadError),
    #[error(transparent)]
    Asac(#[from] AsacError),
    #[error(transparent)]
    Tree(#[from] AgTreeError),
    #[error("unknown router {0:?}")]
    UnknownNode(String),
    #[error("{0} is not an ingress router")]
    NotIngress(String),
    #[error("no link between {0} and {1}")]
    UnknownLink(String, String),
    #[error("initialization failed: {0}")]
    Init(String),
}

/// Result of a run: the metrics and the tree catalog it used.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub report: MetricsReport,
    pub trees: Vec<TreeDump>,
}

pub fn run(cfg: &ScenarioConfig) -> Result<RunOutput, EngineError> {
    let mut sim = Simulation::new(cfg)?;
    sim.run()?;
    Ok(sim.finish())
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
enum OpRef {
    Untracked,
    Flood,
    Setup { tree: TreeId },
    Adjust(u64),
    Mira { op: u64, flow: usize },
}

#[derive(Clone, Debug)]
enum Event {
    Deliver {
        link: LinkId,
        msg: Message,
        op: OpRef,
    },
    Response {
        msg: Message,
        op: OpRef,
    },
    Arrival(SessionId),
    End(SessionId),
    Script(usize),
    Tick,
}

struct Queued {
    at: SimTime,
    seq: u64,
    ev: Event,
}

impl PartialEq for Queued {
    fn eq(&self, other: &Self) -> bool {
        (self.at, self.seq) == (other.at, other.seq)
    }
}

impl Eq for Queued {}

impl PartialOrd for Queued {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Queued {
    fn cmp(&self, other: &Self) -> Ordering {
        (other.at, other.seq).cmp(&(self.at, self.seq))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum Work {
    Admit(SessionId),
    Switch {
        session: SessionId,
        egresses: BTreeSet<NodeId>,
        failure: bool,
    },
}

struct AdjustOp {
    work: Work,
    tree: TreeId,
    updates: Vec<LinkUpdate>,
    attempt: u32,
    outstanding: u64,
    failed: bool,
    rollback: Vec<(LinkId, CosTable)>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
enum Status {
    Waiting,
    Pending,
    Active,
    Cancelled,
    Done,
}

struct MiraFlow {
    channel: SsmChannel,
    outstanding: u64,
    failed: bool,
}

struct MiraOp {
    session: SessionId,
    edges: BTreeSet<LinkId>,
    receivers: BTreeSet<NodeId>,
    flows: Vec<MiraFlow>,
    resignal: bool,
}

struct MiraSession {
    edges: BTreeSet<LinkId>,
    receivers: BTreeSet<NodeId>,
    channels: Vec<SsmChannel>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
enum InitPhase {
    Flooding,
    Building,
    Done,
}

pub struct Simulation {
    cfg: ScenarioConfig,
    net: Network,
    mode: Mode,
    ingress: NodeId,
    seed: u64,
    duration: SimTime,
    proc_delay: SimTime,
    ledger: Ledger,
    nodes: Vec<NodeState>,
    queue: BinaryHeap<Queued>,
    seq: u64,
    now: SimTime,
    requests: Vec<SessionRequest>,
    status: Vec<Status>,
    rec: Recorder,
    hasher: Sha256,
    events: u64,
    started: bool,
    failed_links: BTreeSet<LinkId>,
    alloc: GroupAllocator,
    // MARA
    view: IngressPathView,
    catalog: TreeCatalog,
    mapping: SessionMapping,
    phase: InitPhase,
    collected: BTreeMap<NodeId, Vec<EdgePath>>,
    flood_outstanding: u64,
    setup_outstanding: u64,
    init_buffer: Vec<SessionId>,
    ops: BTreeMap<u64, AdjustOp>,
    next_op: u64,
    active_op: Option<u64>,
    waiting: VecDeque<(Work, u32)>,
    // MIRA
    mira_ops: BTreeMap<u64, MiraOp>,
    mira_sessions: BTreeMap<SessionId, MiraSession>,
}

impl Simulation {
    pub fn new(cfg: &ScenarioConfig) -> Result<Simulation, EngineError> {
        cfg.validate()?;
        let net = cfg.load_network()?;
        let ingress = match &cfg.ingress {
            Some(name) => {
                let id = net
                    .node_by_name(name)
                    .ok_or_else(|| EngineError::UnknownNode(name.clone()))?;
                if !net.ingresses().contains(&id) {
                    return Err(EngineError::NotIngress(name.clone()));
                }
                id
            }
            None => net.ingresses()[0],
        };
        let seed = cfg.effective_seed();
        let mut wl_cfg = cfg.workload.clone();
        wl_cfg.seed = seed;
        let workload = generate(&wl_cfg, &cfg.classes, &net.egresses())?;
        let ledger = Ledger::new(&net, &cfg.classes)?;
        let nodes = net
            .nodes()
            .iter()
            .map(|n| NodeState::new(&net, n.id))
            .collect();
        let duration = SimTime::from_secs_f64(wl_cfg.duration_s);
        let tick = SimTime::from_secs_f64(cfg.tick_s);
        let names = cfg.classes.iter().map(|c| c.name.clone()).collect();
        let mut sim = Simulation {
            mode: cfg.mode,
            cfg: cfg.clone(),
            ingress,
            seed,
            duration,
            proc_delay: SimTime::from_secs_f64(cfg.processing_delay_s),
            ledger,
            nodes,
            queue: BinaryHeap::new(),
            seq: 0,
            now: SimTime::ZERO,
            status: vec![Status::Waiting; workload.requests.len()],
            requests: workload.requests,
            rec: Recorder::new(names, tick),
            hasher: Sha256::new(),
            events: 0,
            started: false,
            failed_links: BTreeSet::new(),
            alloc: GroupAllocator::new(ingress),
            view: IngressPathView::new(),
            catalog: TreeCatalog::default(),
            mapping: SessionMapping::new(),
            phase: InitPhase::Flooding,
            collected: BTreeMap::new(),
            flood_outstanding: 0,
            setup_outstanding: 0,
            init_buffer: Vec::new(),
            ops: BTreeMap::new(),
            next_op: 0,
            active_op: None,
            waiting: VecDeque::new(),
            mira_ops: BTreeMap::new(),
            mira_sessions: BTreeMap::new(),
            net,
        };
        let ticks = duration.as_nanos() / tick.as_nanos().max(1);
        for k in 0..=ticks {
            sim.schedule(SimTime(k * tick.as_nanos()), Event::Tick);
        }
        for e in workload.events {
            match e {
                WorkloadEvent::Arrival { time, session } => {
                    sim.schedule(time, Event::Arrival(session))
                }
                WorkloadEvent::Teardown { time, session } => {
                    sim.schedule(time.min(duration), Event::End(session))
                }
            }
        }
        for (i, e) in cfg.events.iter().enumerate() {
            sim.schedule(SimTime::from_secs_f64(e.time_s()), Event::Script(i));
        }
        Ok(sim)
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn catalog(&self) -> &TreeCatalog {
        &self.catalog
    }

    pub fn ledger(&self) -> &Ledger {
        &self.ledger
    }

    pub fn view(&self) -> &IngressPathView {
        &self.view
    }

    pub fn mapping(&self) -> &SessionMapping {
        &self.mapping
    }

    pub fn node_state(&self, node: NodeId) -> &NodeState {
        &self.nodes[node.index()]
    }

    pub fn ingress(&self) -> NodeId {
        self.ingress
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn requests(&self) -> &[SessionRequest] {
        &self.requests
    }

    /// Whether the session currently holds an admitted reservation.
    pub fn is_active(&self, s: SessionId) -> bool {
        self.status.get(s.0 as usize) == Some(&Status::Active)
    }

    /// Receivers of a running baseline session.
    pub fn mira_receivers(&self, s: SessionId) -> Option<&BTreeSet<NodeId>> {
        self.mira_sessions.get(&s).map(|m| &m.receivers)
    }

    fn start(&mut self) {
        if self.started {
            return;
        }
        self.started = true;
        match self.mode {
            Mode::Mara => self.start_init(),
            Mode::Mira => {
                self.phase = InitPhase::Done;
                self.rec.init_done = Some(SimTime::ZERO);
            }
        }
    }

    /// Processes every event scheduled at or before `limit`.
    pub fn run_until(&mut self, limit: SimTime) -> Result<(), EngineError> {
        self.start();
        while self.queue.peek().is_some_and(|q| q.at <= limit) {
            let q = self.queue.pop().expect("peeked");
            self.now = q.at;
            self.events += 1;
            self.hasher
                .update(format!("{} {} {:?}\n", q.at.as_nanos(), q.seq, q.ev).as_bytes());
            self.dispatch(q.ev)?;
            self.note_state();
        }
        Ok(())
    }

    pub fn run(&mut self) -> Result<(), EngineError> {
        self.run_until(SimTime(u64::MAX))?;
        if self.phase != InitPhase::Done {
            return Err(EngineError::Init("initialization never completed".into()));
        }
        Ok(())
    }

    pub fn finish(self) -> RunOutput {
        let trees = self.catalog.dump(&self.net);
        let unbranched = self
            .catalog
            .trees()
            .iter()
            .filter(|t| t.kind == TreeKind::Unbranched)
            .count();
        let catalog = (
            self.catalog.len(),
            unbranched,
            self.catalog.len() - unbranched,
        );
        let hash = format!("{:x}", self.hasher.finalize());
        let report = self.rec.finish(
            &self.net,
            self.cfg.name.clone(),
            self.mode,
            self.seed,
            self.duration,
            catalog,
            hash,
            self.events,
        );
        RunOutput { report, trees }
    }

    fn schedule(&mut self, at: SimTime, ev: Event) {
        self.seq += 1;
        self.queue.push(Queued {
            at,
            seq: self.seq,
            ev,
        });
    }

    fn dispatch(&mut self, ev: Event) -> Result<(), EngineError> {
        match ev {
            Event::Deliver { link, msg, op } => self.deliver(link, msg, op),
            Event::Response { msg, op } => self.on_response(msg, op),
            Event::Arrival(s) => self.on_arrival(s),
            Event::End(s) => self.on_end(s),
            Event::Script(i) => self.on_script(i),
            Event::Tick => {
                self.on_tick();
                Ok(())
            }
        }
    }

    fn note_state(&mut self) {
        let level = self.nodes[self.ingress.index()].multicast_state();
        self.rec.multicast_state(self.now, level);
    }

    // ---- message transport ----

    fn counter(&mut self, op: OpRef) -> Option<&mut u64> {
        match op {
            OpRef::Untracked => None,
            OpRef::Flood => Some(&mut self.flood_outstanding),
            OpRef::Setup { .. } => Some(&mut self.setup_outstanding),
            OpRef::Adjust(id) => self.ops.get_mut(&id).map(|o| &mut o.outstanding),
            OpRef::Mira { op, flow } => self
                .mira_ops
                .get_mut(&op)
                .map(|o| &mut o.flows[flow].outstanding),
        }
    }

    fn mark_failed(&mut self, op: OpRef) {
        match op {
            OpRef::Adjust(id) => {
                if let Some(o) = self.ops.get_mut(&id) {
                    o.failed = true;
                }
            }
            OpRef::Mira { op, flow } => {
                if let Some(o) = self.mira_ops.get_mut(&op) {
                    o.flows[flow].failed = true;
                }
            }
            _ => {}
        }
    }

    fn is_init(op: OpRef) -> bool {
        matches!(op, OpRef::Flood | OpRef::Setup { .. })
    }

    fn transmit(&mut self, link: LinkId, msg: Message, op: OpRef, at: SimTime) -> SimTime {
        let l = self.net.link(link);
        let arrive = at + l.delay;
        self.rec.transmit(
            at,
            link,
            msg.class(),
            mirap::wire_size(&msg),
            l.from == self.ingress,
            Self::is_init(op),
        );
        arrive
    }

    fn route_back(&self, node: NodeId, msg: &Message, op: OpRef) -> Vec<LinkId> {
        match op {
            OpRef::Flood => msg
                .rsvpath
                .iter()
                .flatten()
                .rev()
                .map(|&i| self.net.link(self.net.interface(i).out_link).reverse)
                .collect(),
            OpRef::Setup { tree } => self.catalog.get(tree).path_to_root(&self.net, node),
            OpRef::Adjust(id) => match self.ops.get(&id) {
                Some(o) => self.catalog.get(o.tree).path_to_root(&self.net, node),
                None => Vec::new(),
            },
            OpRef::Mira { op, .. } => match self.mira_ops.get(&op) {
                Some(o) => root_route(&self.net, &o.edges, self.ingress, node),
                None => Vec::new(),
            },
            OpRef::Untracked => Vec::new(),
        }
    }

    fn apply_actions(&mut self, node: NodeId, actions: Vec<Action>, op: OpRef) {
        for a in actions {
            match a {
                Action::Forward { link, msg } => {
                    if self.failed_links.contains(&link) {
                        self.rec.drop(DropReason::NotOnPath);
                        self.mark_failed(op);
                        continue;
                    }
                    let depart = self.now + self.proc_delay;
                    let arrive = self.transmit(link, msg.clone(), op, depart);
                    if let Some(c) = self.counter(op) {
                        *c += 1;
                    }
                    self.schedule(arrive, Event::Deliver { link, msg, op });
                }
                Action::Respond(msg) => {
                    let route = self.route_back(node, &msg, op);
                    let mut at = self.now;
                    for l in route {
                        at = self.transmit(l, msg.clone(), op, at + self.proc_delay);
                    }
                    if let Some(c) = self.counter(op) {
                        *c += 1;
                    }
                    self.schedule(at, Event::Response { msg, op });
                }
                Action::Drop(r) => self.rec.drop(r),
                Action::Applied { link, previous } => {
                    if let OpRef::Adjust(id) = op {
                        if let Some(o) = self.ops.get_mut(&id) {
                            o.rollback.push((link, previous));
                        }
                    }
                }
                Action::Initialized(_) => {}
            }
        }
    }

    fn deliver(&mut self, link: LinkId, msg: Message, op: OpRef) -> Result<(), EngineError> {
        if let Some(c) = self.counter(op) {
            *c = c.saturating_sub(1);
        }
        let node = self.net.link(link).to;
        let arrival_if = self.net.link(link).in_if;
        let hop_cap = self.cfg.hop_cap;
        let st = &mut self.nodes[node.index()];
        let actions = match msg.kind {
            MessageKind::Reserve(ReserveFlag::I) => {
                handle_reserve_i(&self.net, st, &mut self.ledger, &msg, arrival_if, hop_cap)
            }
            MessageKind::Reserve(ReserveFlag::M) => handle_reserve_m(&self.net, st, &msg),
            MessageKind::Reserve(ReserveFlag::O) => {
                let updates = match op {
                    OpRef::Adjust(id) => self.ops.get(&id).map(|o| o.updates.clone()),
                    _ => None,
                }
                .unwrap_or_default();
                handle_reserve_o(&self.net, st, &mut self.ledger, &msg, &updates)
            }
            MessageKind::Reserve(ReserveFlag::R) => {
                let outs = match op {
                    OpRef::Mira { op, .. } => self
                        .mira_ops
                        .get(&op)
                        .map(|o| children(&self.net, &o.edges, node)),
                    _ => None,
                }
                .unwrap_or_default();
                handle_reserve_r(st, &self.net, &mut self.ledger, &msg, &outs)
            }
            MessageKind::Reserve(ReserveFlag::T) => {
                handle_reserve_t(&self.net, st, &mut self.ledger, &msg)
            }
            MessageKind::Response(_) => vec![Action::Drop(DropReason::Malformed)],
        };
        self.apply_actions(node, actions, op);
        self.check_done(op)
    }

    fn on_response(&mut self, msg: Message, op: OpRef) -> Result<(), EngineError> {
        if let Some(c) = self.counter(op) {
            *c = c.saturating_sub(1);
        }
        let ok = msg.kind == MessageKind::Response(ResponseStatus::Ok);
        match op {
            OpRef::Flood if ok => {
                if let Some(path) = msg.rsvpath {
                    for l in self.net.path_links(&path) {
                        self.view.learn(l, self.ledger.table(l).clone());
                    }
                    self.collected.entry(msg.origin).or_default().push(path);
                }
            }
            OpRef::Setup { .. } if !ok => {
                return Err(EngineError::Init("tree setup was refused".into()));
            }
            _ if !ok => self.mark_failed(op),
            _ => {}
        }
        self.check_done(op)
    }

    fn check_done(&mut self, op: OpRef) -> Result<(), EngineError> {
        match op {
            OpRef::Flood if self.flood_outstanding == 0 && self.phase == InitPhase::Flooding => {
                self.build_trees()
            }
            OpRef::Setup { .. }
                if self.setup_outstanding == 0 && self.phase == InitPhase::Building =>
            {
                self.init_complete()
            }
            OpRef::Adjust(id) if self.ops.get(&id).is_some_and(|o| o.outstanding == 0) => {
                self.complete_adjust(id)
            }
            OpRef::Mira { op, .. }
                if self
                    .mira_ops
                    .get(&op)
                    .is_some_and(|o| o.flows.iter().all(|f| f.outstanding == 0)) =>
            {
                self.complete_mira(op);
                Ok(())
            }
            _ => Ok(()),
        }
    }

    // ---- MARA initialization ----

    fn start_init(&mut self) {
        let st = &mut self.nodes[self.ingress.index()];
        let actions = originate_reserve_i(&self.net, st, &mut self.ledger, self.cfg.init_factor);
        self.apply_actions(self.ingress, actions, OpRef::Flood);
        if self.flood_outstanding == 0 {
            self.phase = InitPhase::Building;
        }
    }

    fn build_trees(&mut self) -> Result<(), EngineError> {
        self.phase = InitPhase::Building;
        let paths: BTreeMap<NodeId, EdgePath> = self
            .collected
            .iter()
            .filter_map(|(&e, ps)| {
                ps.iter()
                    .min_by(|a, b| (a.len(), *a).cmp(&(b.len(), *b)))
                    .map(|p| (e, p.clone()))
            })
            .collect();
        let unbranched = build_unbranched_trees(&self.net, self.ingress, &paths, &mut self.alloc)
            .map_err(|e| EngineError::Init(e.to_string()))?;
        let branched =
            enumerate_branched_trees(&self.net, &unbranched, self.cfg.hop_cap, &mut self.alloc);
        self.catalog = TreeCatalog::new(unbranched.into_iter().chain(branched).collect());
        for i in 0..self.catalog.len() {
            let tree = self.catalog.trees()[i].clone();
            for path in tree.paths.values() {
                let msg = Message::reserve_m(tree.channel, path.clone());
                let st = &mut self.nodes[self.ingress.index()];
                let actions = handle_reserve_m(&self.net, st, &msg);
                self.apply_actions(self.ingress, actions, OpRef::Setup { tree: tree.id });
            }
        }
        if self.setup_outstanding == 0 {
            self.init_complete()?;
        }
        Ok(())
    }

    fn init_complete(&mut self) -> Result<(), EngineError> {
        self.phase = InitPhase::Done;
        self.rec.init_done = Some(self.now);
        for t in self.catalog.trees() {
            for l in &t.edges {
                self.view.learn(*l, self.ledger.table(*l).clone());
            }
        }
        for s in std::mem::take(&mut self.init_buffer) {
            if self.status[s.0 as usize] == Status::Waiting {
                self.mara_admit(s, 0)?;
            } else {
                self.block(s);
            }
        }
        Ok(())
    }

    // ---- sessions ----

    fn request(&self, s: SessionId) -> &SessionRequest {
        &self.requests[s.0 as usize]
    }

    fn qspec(&self, s: SessionId) -> Qspec {
        let r = self.request(s);
        Qspec {
            class: r.class,
            brq: r.total_rate,
        }
    }

    fn on_arrival(&mut self, s: SessionId) -> Result<(), EngineError> {
        let class = self.request(s).class.index();
        self.rec.classes[class].requests += 1;
        match self.mode {
            Mode::Mara if self.phase != InitPhase::Done => {
                self.init_buffer.push(s);
                Ok(())
            }
            Mode::Mara => self.mara_admit(s, 0),
            Mode::Mira => {
                let set = self.request(s).egress_set.clone();
                self.status[s.0 as usize] = Status::Pending;
                if !self.mira_setup(s, set, false) {
                    self.block(s);
                }
                Ok(())
            }
        }
    }

    fn block(&mut self, s: SessionId) {
        let class = self.request(s).class.index();
        self.rec.classes[class].blocked += 1;
        self.status[s.0 as usize] = Status::Done;
    }

    fn admitted(&mut self, s: SessionId, free: bool) {
        let class = self.request(s).class.index();
        self.rec.classes[class].admitted += 1;
        if free {
            self.rec.signaling_free += 1;
        }
        self.status[s.0 as usize] = Status::Active;
    }

    fn on_end(&mut self, s: SessionId) -> Result<(), EngineError> {
        let idx = s.0 as usize;
        match self.status[idx] {
            Status::Active => {
                match self.mode {
                    Mode::Mara => self.mara_release(s),
                    Mode::Mira => self.mira_teardown(s),
                }
                self.status[idx] = Status::Done;
            }
            Status::Pending => self.status[idx] = Status::Cancelled,
            Status::Waiting => {
                self.status[idx] = Status::Cancelled;
            }
            Status::Cancelled | Status::Done => {}
        }
        Ok(())
    }

    fn on_script(&mut self, i: usize) -> Result<(), EngineError> {
        match self.cfg.events[i].clone() {
            ScriptedEvent::LeafChange {
                session, egresses, ..
            } => {
                let s = SessionId(session);
                let set = egresses
                    .iter()
                    .map(|n| {
                        self.net
                            .node_by_name(n)
                            .ok_or_else(|| EngineError::UnknownNode(n.clone()))
                    })
                    .collect::<Result<BTreeSet<_>, _>>()?;
                if (s.0 as usize) >= self.requests.len()
                    || self.status[s.0 as usize] != Status::Active
                    || set.is_empty()
                {
                    self.rec.ignored_script_events += 1;
                    return Ok(());
                }
                match self.mode {
                    Mode::Mara => self.mara_switch(s, set, false, 0),
                    Mode::Mira => {
                        self.mira_resignal(s, set);
                        Ok(())
                    }
                }
            }
            ScriptedEvent::LinkFail { from, to, .. } => {
                let a = self
                    .net
                    .node_by_name(&from)
                    .ok_or_else(|| EngineError::UnknownNode(from.clone()))?;
                let b = self
                    .net
                    .node_by_name(&to)
                    .ok_or_else(|| EngineError::UnknownNode(to.clone()))?;
                let link = self
                    .net
                    .out_links(a)
                    .iter()
                    .copied()
                    .find(|&l| self.net.link(l).to == b)
                    .ok_or(EngineError::UnknownLink(from, to))?;
                self.link_fail(link)
            }
        }
    }

    fn link_fail(&mut self, link: LinkId) -> Result<(), EngineError> {
        let pair = [link, self.net.link(link).reverse];
        if !self.failed_links.insert(pair[0]) {
            self.rec.ignored_script_events += 1;
            return Ok(());
        }
        self.failed_links.insert(pair[1]);
        match self.mode {
            Mode::Mara => {
                let mut hit = BTreeSet::new();
                for l in pair {
                    hit.extend(self.catalog.invalidate_link(l));
                }
                for &t in &hit {
                    let ch = self.catalog.get(t).channel;
                    for n in &mut self.nodes {
                        n.mrib.remove(&ch);
                    }
                }
                for t in hit {
                    for s in self.mapping.on_tree(t) {
                        let set = self.mapping.get(s).expect("mapped").receivers.clone();
                        self.mara_switch(s, set, true, 0)?;
                    }
                }
            }
            Mode::Mira => {
                let affected: Vec<SessionId> = self
                    .mira_sessions
                    .iter()
                    .filter(|(_, m)| pair.iter().any(|l| m.edges.contains(l)))
                    .map(|(&s, _)| s)
                    .collect();
                for s in affected {
                    let m = self.mira_sessions.remove(&s).expect("listed");
                    self.purge_channels(&m.channels);
                    self.mira_setup(s, m.receivers, true);
                }
            }
        }
        Ok(())
    }

    // ---- MARA admission ----

    fn mara_admit(&mut self, s: SessionId, attempt: u32) -> Result<(), EngineError> {
        let idx = s.0 as usize;
        if self.status[idx] == Status::Cancelled {
            self.block(s);
            return Ok(());
        }
        let q = self.qspec(s);
        let set = self.request(s).egress_set.clone();
        let mut chosen = None;
        let mut escalate = None;
        for c in self.catalog.candidates(&set) {
            let links = self.catalog.get(c.tree).links();
            match self.view.admission_check(&links, &q, self.cfg.brv_rule)? {
                Admission::AdmitFree => {
                    chosen = Some((c, None));
                    break;
                }
                Admission::NeedsAdjust(u) => {
                    chosen = Some((c, Some(u)));
                    break;
                }
                Admission::NeedsReadjust(u) => {
                    escalate.get_or_insert((c, Some(u)));
                }
                Admission::Reject => {}
            }
        }
        match chosen.or(escalate) {
            None => self.block(s),
            Some((c, None)) => {
                let receivers = set;
                self.mara_commit(s, c, receivers)?;
                self.admitted(s, attempt == 0);
            }
            Some((c, Some(updates))) => {
                if self.active_op.is_some() {
                    self.status[idx] = Status::Pending;
                    self.waiting.push_back((Work::Admit(s), attempt));
                } else if attempt >= MAX_ATTEMPTS {
                    self.block(s);
                } else {
                    self.status[idx] = Status::Pending;
                    self.start_adjust(Work::Admit(s), c, updates, attempt);
                }
            }
        }
        Ok(())
    }

    fn mara_commit(
        &mut self,
        s: SessionId,
        c: TreeChoice,
        receivers: BTreeSet<NodeId>,
    ) -> Result<(), EngineError> {
        let q = self.qspec(s);
        let tree = self.catalog.get(c.tree).clone();
        let links = tree.links();
        for &l in &links {
            commit_flow([self.ledger.table_mut(l)], q.class, q.brq)?;
            if let Some(t) = self.view.table_mut(l) {
                commit_flow([t], q.class, q.brq)?;
            }
        }
        let flows = self.request(s).flows.clone();
        self.mapping.map_session(s, &flows, receivers, &tree)?;
        *self
            .rec
            .selected_depths
            .entry(tree.max_hop_depth)
            .or_default() += 1;
        *self.rec.selected_trees.entry(tree.id.0).or_default() += 1;
        if c.superset {
            self.rec.superset_deliveries += 1;
        }
        Ok(())
    }

    fn mara_release(&mut self, s: SessionId) {
        let Some(m) = self.mapping.unmap(s) else {
            return;
        };
        let q = self.qspec(s);
        self.release_on(&self.catalog.get(m.tree).links(), q);
    }

    fn release_on(&mut self, links: &[LinkId], q: Qspec) {
        let mut errs = 0;
        for &l in links {
            if release_flow([(l, self.ledger.table_mut(l))], q.class, q.brq).is_err() {
                errs += 1;
            }
            if let Some(t) = self.view.table_mut(l) {
                if release_flow([(l, t)], q.class, q.brq).is_err() {
                    errs += 1;
                }
            }
        }
        self.rec.accounting_errors += errs;
    }

    fn mara_switch(
        &mut self,
        s: SessionId,
        set: BTreeSet<NodeId>,
        failure: bool,
        attempt: u32,
    ) -> Result<(), EngineError> {
        if self.status[s.0 as usize] != Status::Active || self.mapping.get(s).is_none() {
            return Ok(());
        }
        let q = self.qspec(s);
        let work = Work::Switch {
            session: s,
            egresses: set.clone(),
            failure,
        };
        if self.active_op.is_some() {
            self.waiting.push_back((work, attempt));
            return Ok(());
        }
        let outcome = switch_session(
            &self.mapping,
            s,
            &set,
            &self.catalog,
            &self.view,
            &q,
            self.cfg.brv_rule,
        )?;
        match outcome {
            SwitchOutcome::Switched(c) => self.move_session(s, c, set)?,
            SwitchOutcome::Readjusted(c, updates) if attempt < MAX_ATTEMPTS => {
                self.start_adjust(work, c, updates, attempt);
            }
            SwitchOutcome::Readjusted(..) | SwitchOutcome::Denied => {
                self.rec.switch_denials += 1;
                if failure {
                    self.mara_release(s);
                    self.status[s.0 as usize] = Status::Done;
                    self.rec.terminated += 1;
                } else {
                    let tree = self
                        .catalog
                        .get(self.mapping.get(s).expect("mapped").tree)
                        .clone();
                    self.mapping.remap(s, set, &tree)?;
                }
            }
        }
        Ok(())
    }

    fn move_session(
        &mut self,
        s: SessionId,
        c: TreeChoice,
        set: BTreeSet<NodeId>,
    ) -> Result<(), EngineError> {
        self.mara_release(s);
        self.mara_commit(s, c, set)?;
        self.rec.switches += 1;
        Ok(())
    }

    fn start_adjust(
        &mut self,
        work: Work,
        choice: TreeChoice,
        updates: Vec<LinkUpdate>,
        attempt: u32,
    ) {
        let id = self.next_op;
        self.next_op += 1;
        let tree = self.catalog.get(choice.tree);
        let channel = tree.channel;
        let q = match &work {
            Work::Admit(s) | Work::Switch { session: s, .. } => self.qspec(*s),
        };
        self.ops.insert(
            id,
            AdjustOp {
                work,
                tree: tree.id,
                updates,
                attempt,
                outstanding: 0,
                failed: false,
                rollback: Vec::new(),
            },
        );
        self.active_op = Some(id);
        let msg = Message::reserve_o(channel, q);
        let updates = self.ops[&id].updates.clone();
        let st = &mut self.nodes[self.ingress.index()];
        let actions = handle_reserve_o(&self.net, st, &mut self.ledger, &msg, &updates);
        self.apply_actions(self.ingress, actions, OpRef::Adjust(id));
    }

    fn complete_adjust(&mut self, id: u64) -> Result<(), EngineError> {
        let op = self.ops.remove(&id).expect("op exists");
        if op.failed {
            self.rec.failed_adjustments += 1;
            for (link, prev) in op.rollback.iter().rev() {
                let cur = self.ledger.table(*link).clone();
                let mut restored = prev.clone();
                for (r, c) in restored.classes.iter_mut().zip(&cur.classes) {
                    r.bu = c.bu;
                    r.brv = r.brv.max(c.bu);
                }
                if restored.invariant_holds(self.net.link(*link).capacity) {
                    *self.ledger.table_mut(*link) = restored;
                }
            }
        } else {
            self.rec.adjustments += 1;
            let plans = op.updates.iter().filter(|u| u.readjust.is_some()).count() as u64;
            if plans > 0 {
                self.rec.readjustments += 1;
                self.rec.mrth_resizes += plans;
            }
        }
        for l in self.catalog.get(op.tree).links() {
            self.view.learn(l, self.ledger.table(l).clone());
        }
        self.active_op = None;
        match op.work {
            Work::Admit(s) => self.mara_admit(s, op.attempt + 1)?,
            Work::Switch {
                session,
                egresses,
                failure,
            } => self.mara_switch(session, egresses, failure, op.attempt + 1)?,
        }
        while self.active_op.is_none() {
            let Some((work, attempt)) = self.waiting.pop_front() else {
                break;
            };
            match work {
                Work::Admit(s) => self.mara_admit(s, attempt)?,
                Work::Switch {
                    session,
                    egresses,
                    failure,
                } => self.mara_switch(session, egresses, failure, attempt)?,
            }
        }
        Ok(())
    }

    // ---- MIRA ----

    fn mira_tree(&self, set: &BTreeSet<NodeId>) -> Option<BTreeSet<LinkId>> {
        let paths = shortest_paths_with(&self.net, self.ingress, &self.failed_links);
        let mut edges = BTreeSet::new();
        let mut found = 0;
        for (e, p) in paths {
            if set.contains(&e) {
                found += 1;
                edges.extend(self.net.path_links(&p));
            }
        }
        (found == set.len()).then_some(edges)
    }

    /// Signals one reservation per flow. `resignal` is set when an active
    /// session is being moved.
    fn mira_setup(&mut self, s: SessionId, set: BTreeSet<NodeId>, resignal: bool) -> bool {
        let Some(edges) = self.mira_tree(&set) else {
            if resignal {
                self.mira_switch_failed(s);
            }
            return false;
        };
        let id = self.next_op;
        self.next_op += 1;
        let r = self.request(s).clone();
        let flows: Vec<MiraFlow> = r
            .flows
            .iter()
            .map(|_| MiraFlow {
                channel: self.alloc.allocate(),
                outstanding: 0,
                failed: false,
            })
            .collect();
        let outs = children(&self.net, &edges, self.ingress);
        self.mira_ops.insert(
            id,
            MiraOp {
                session: s,
                edges,
                receivers: set,
                flows,
                resignal,
            },
        );
        for (f, &rate) in r.flows.iter().enumerate() {
            let ch = self.mira_ops[&id].flows[f].channel;
            let msg = Message::reserve_r(
                ch,
                Qspec {
                    class: r.class,
                    brq: rate,
                },
            );
            let st = &mut self.nodes[self.ingress.index()];
            let actions = handle_reserve_r(st, &self.net, &mut self.ledger, &msg, &outs);
            self.apply_actions(self.ingress, actions, OpRef::Mira { op: id, flow: f });
        }
        true
    }

    fn complete_mira(&mut self, id: u64) {
        let op = self.mira_ops.remove(&id).expect("op exists");
        let s = op.session;
        let channels: Vec<SsmChannel> = op.flows.iter().map(|f| f.channel).collect();
        let failed = op.flows.iter().any(|f| f.failed);
        let cancelled = self.status[s.0 as usize] == Status::Cancelled;
        if failed || cancelled {
            self.send_teardown(&channels);
        }
        match op.resignal {
            false if failed || cancelled => self.block(s),
            false => {
                self.admitted(s, false);
                self.mira_sessions.insert(
                    s,
                    MiraSession {
                        edges: op.edges,
                        receivers: op.receivers,
                        channels,
                    },
                );
            }
            true if cancelled => self.status[s.0 as usize] = Status::Done,
            true if failed => self.mira_switch_failed(s),
            true => {
                self.rec.switches += 1;
                self.status[s.0 as usize] = Status::Active;
                self.mira_sessions.insert(
                    s,
                    MiraSession {
                        edges: op.edges,
                        receivers: op.receivers,
                        channels,
                    },
                );
            }
        }
    }

    fn mira_switch_failed(&mut self, s: SessionId) {
        self.rec.switch_denials += 1;
        self.rec.terminated += 1;
        self.status[s.0 as usize] = Status::Done;
    }

    fn mira_resignal(&mut self, s: SessionId, set: BTreeSet<NodeId>) {
        let Some(m) = self.mira_sessions.remove(&s) else {
            return;
        };
        self.send_teardown(&m.channels);
        self.status[s.0 as usize] = Status::Pending;
        self.mira_setup(s, set, true);
    }

    fn mira_teardown(&mut self, s: SessionId) {
        if let Some(m) = self.mira_sessions.remove(&s) {
            self.send_teardown(&m.channels);
        }
    }

    fn send_teardown(&mut self, channels: &[SsmChannel]) {
        for &ch in channels {
            let msg = Message::reserve_t(ch);
            let st = &mut self.nodes[self.ingress.index()];
            let actions = handle_reserve_t(&self.net, st, &mut self.ledger, &msg);
            self.apply_actions(self.ingress, actions, OpRef::Untracked);
        }
    }

    /// Drops forwarding and reservation state for the channels at every
    /// router without signaling.
    fn purge_channels(&mut self, channels: &[SsmChannel]) {
        for n in &mut self.nodes {
            for ch in channels {
                n.mrib.remove(ch);
                let keys: Vec<(SsmChannel, LinkId)> = n
                    .flows
                    .range((*ch, LinkId(0))..=(*ch, LinkId(u32::MAX)))
                    .map(|(k, _)| *k)
                    .collect();
                for k in keys {
                    let f = n.flows.remove(&k).expect("listed");
                    if let Ok(st) = self.ledger.table_mut(k.1).get_mut(f.class) {
                        st.bu = st.bu.saturating_sub(f.rate);
                        st.brv = st.brv.saturating_sub(f.rate);
                    }
                }
            }
        }
    }

    // ---- periodic sampling ----

    fn on_tick(&mut self) {
        let classes = self.cfg.classes.len();
        for (i, t) in self.ledger.tables().iter().enumerate() {
            if !t.invariant_holds(self.net.links()[i].capacity) {
                self.rec.ledger_violations += 1;
            }
        }
        if self.mode == Mode::Mara && self.phase == InitPhase::Done && self.active_op.is_none() {
            self.rec.view_checks += 1;
            let mismatch = self.view.links().any(|(&l, t)| t != self.ledger.table(l));
            if mismatch {
                self.rec.view_mismatches += 1;
            }
        }
        let row = TickRow {
            time_s: self.now.as_secs_f64(),
            bytes: self.rec.messages.values().map(|k| k.bytes).collect(),
            ingress_reserve_bytes: self.rec.take_ingress_reserve(),
            multicast_state: self.nodes[self.ingress.index()].multicast_state(),
            admitted: self.rec.classes.iter().map(|c| c.admitted).collect(),
            blocked: self.rec.classes.iter().map(|c| c.blocked).collect(),
            class_mrth_total: (0..classes)
                .map(|c| self.ledger.class_mrth_total(ClassId(c as u8)))
                .collect(),
        };
        self.rec.tick(self.now, row);
    }
}

fn children(net: &Network, edges: &BTreeSet<LinkId>, node: NodeId) -> Vec<LinkId> {
    edges
        .iter()
        .copied()
        .filter(|&l| net.link(l).from == node)
        .collect()
}

/// Reverse links from `node` up to `root` along a tree's edges.
fn root_route(net: &Network, edges: &BTreeSet<LinkId>, root: NodeId, node: NodeId) -> Vec<LinkId> {
    let mut out = Vec::new();
    let mut cur = node;
    while cur != root {
        let Some(&l) = edges.iter().find(|&&l| net.link(l).to == cur) else {
            break;
        };
        out.push(net.link(l).reverse);
        cur = net.link(l).from;
    }
    out
}
