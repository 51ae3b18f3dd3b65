//! Aggregation trees.
//!
//! After initialization the ingress owns one single-path ("un-branched")
//! tree per egress. Branched trees are edge-unions of those paths that
//! survive three filters:
//!
//! * F1: the ingress is not a branch point.
//! * F2: no node is entered by more than one tree edge.
//! * F3: no path is longer than the hop cap, when one is configured.
//!
//! Sessions are encapsulated on a tree's SSM channel at the ingress and
//! moved between trees when their receiver set changes.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::asac::{Admission, AsacError, BrvRule, IngressPathView, LinkUpdate, Qspec};
use crate::topology::{EdgePath, LinkId, Network, NodeId};
use crate::units::Bps;
use crate::workload::SessionId;

/// Source-specific multicast channel `(S, G)`.
#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct SsmChannel {
    pub source: NodeId,
    pub group: u32,
}

impl SsmChannel {
    /// Group address in the 232/8 SSM range.
    pub fn group_addr(&self) -> String {
        let g = self.group;
        format!("232.{}.{}.{}", (g >> 16) & 0xff, (g >> 8) & 0xff, g & 0xff)
    }
}

impl fmt::Display for SsmChannel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(n{}, {})", self.source.0, self.group_addr())
    }
}

/// Monotonic per-ingress group allocator.
#[derive(Clone, Debug)]
pub struct GroupAllocator {
    source: NodeId,
    next: u32,
}

impl GroupAllocator {
    pub fn new(source: NodeId) -> Self {
        Self { source, next: 1 }
    }

    pub fn allocate(&mut self) -> SsmChannel {
        let ch = SsmChannel {
            source: self.source,
            group: self.next,
        };
        self.next += 1;
        ch
    }

    pub fn allocated(&self) -> u32 {
        self.next - 1
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct TreeId(pub u32);

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum TreeKind {
    Unbranched,
    Branched,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AggTree {
    pub id: TreeId,
    pub channel: SsmChannel,
    pub ingress: NodeId,
    pub egresses: BTreeSet<NodeId>,
    pub edges: BTreeSet<LinkId>,
    pub paths: BTreeMap<NodeId, EdgePath>,
    pub max_hop_depth: usize,
    pub branch_nodes: BTreeSet<NodeId>,
    pub kind: TreeKind,
}

impl AggTree {
    pub fn links(&self) -> Vec<LinkId> {
        self.edges.iter().copied().collect()
    }

    /// Outgoing tree links at `node`.
    pub fn children(&self, net: &Network, node: NodeId) -> Vec<LinkId> {
        self.edges
            .iter()
            .copied()
            .filter(|&l| net.link(l).from == node)
            .collect()
    }

    /// Links from `node` back up to the ingress.
    pub fn path_to_root(&self, net: &Network, node: NodeId) -> Vec<LinkId> {
        let mut out = Vec::new();
        let mut cur = node;
        while cur != self.ingress {
            let Some(&l) = self.edges.iter().find(|&&l| net.link(l).to == cur) else {
                break;
            };
            out.push(net.link(l).reverse);
            cur = net.link(l).from;
        }
        out
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AgTreeError {
    #[error("initialization collected no paths")]
    NoPaths,
    #[error("path to egress n{0} does not start at the ingress or is not contiguous")]
    BadPath(u32),
    #[error("session {0:?} is already mapped")]
    AlreadyMapped(SessionId),
    #[error("session {0:?} is not mapped")]
    UnknownSession(SessionId),
    #[error("session {0:?} carries no flows")]
    NoFlows(SessionId),
    #[error(transparent)]
    Asac(#[from] AsacError),
}

/// Why an edge set is not an acceptable aggregation tree.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum FilterViolation {
    /// F1
    IngressBranch,
    /// F2
    Converging(NodeId),
    /// F3
    TooDeep(usize),
}

/// Tree shape summary of an edge set rooted at `ingress`.
pub fn check_filters(
    net: &Network,
    ingress: NodeId,
    edges: &BTreeSet<LinkId>,
    depth: usize,
    hop_cap: Option<usize>,
) -> Result<BTreeSet<NodeId>, FilterViolation> {
    let mut indeg: BTreeMap<NodeId, usize> = BTreeMap::new();
    let mut outdeg: BTreeMap<NodeId, usize> = BTreeMap::new();
    for &l in edges {
        let link = net.link(l);
        *indeg.entry(link.to).or_default() += 1;
        *outdeg.entry(link.from).or_default() += 1;
    }
    if outdeg.get(&ingress).copied().unwrap_or(0) > 1 {
        return Err(FilterViolation::IngressBranch);
    }
    if let Some((&n, _)) = indeg.iter().find(|(_, &d)| d > 1) {
        return Err(FilterViolation::Converging(n));
    }
    if let Some(cap) = hop_cap {
        if depth > cap {
            return Err(FilterViolation::TooDeep(depth));
        }
    }
    Ok(outdeg
        .into_iter()
        .filter(|&(_, d)| d > 1)
        .map(|(n, _)| n)
        .collect())
}

fn path_is_contiguous(
    net: &Network,
    ingress: NodeId,
    egress: NodeId,
    path: &[crate::topology::InterfaceId],
) -> bool {
    let mut at = ingress;
    for &itf in path {
        let i = net.interface(itf);
        if i.node != at {
            return false;
        }
        at = net.link(i.out_link).to;
    }
    at == egress && !path.is_empty()
}

/// One single-path tree per egress, in egress order.
pub fn build_unbranched_trees(
    net: &Network,
    ingress: NodeId,
    paths: &BTreeMap<NodeId, EdgePath>,
    alloc: &mut GroupAllocator,
) -> Result<Vec<AggTree>, AgTreeError> {
    if paths.is_empty() {
        return Err(AgTreeError::NoPaths);
    }
    paths
        .iter()
        .map(|(&egress, path)| {
            if !path_is_contiguous(net, ingress, egress, path) {
                return Err(AgTreeError::BadPath(egress.0));
            }
            let edges = net.path_links(path).into_iter().collect();
            Ok(AggTree {
                id: TreeId(0),
                channel: alloc.allocate(),
                ingress,
                egresses: BTreeSet::from([egress]),
                edges,
                paths: BTreeMap::from([(egress, path.clone())]),
                max_hop_depth: path.len(),
                branch_nodes: BTreeSet::new(),
                kind: TreeKind::Unbranched,
            })
        })
        .collect()
}

/// All filtered combinations of at least two un-branched trees.
///
/// Round `k` extends every surviving `k`-combination with each later
/// un-branched tree, for `n - 1` rounds. A combination that fails a filter
/// is not extended: each filter is monotone under adding paths, so no
/// superset of it could pass. Output is ordered by egress count and then
/// lexicographically by egress ids.
pub fn enumerate_branched_trees(
    net: &Network,
    unbranched: &[AggTree],
    hop_cap: Option<usize>,
    alloc: &mut GroupAllocator,
) -> Vec<AggTree> {
    let mut base: Vec<&AggTree> = unbranched.iter().collect();
    base.sort_by_key(|t| t.egresses.iter().next().copied());
    let n = base.len();
    if n < 2 {
        return Vec::new();
    }
    let ingress = base[0].ingress;

    struct Combo {
        members: Vec<usize>,
        edges: BTreeSet<LinkId>,
        depth: usize,
    }
    let mut frontier: Vec<Combo> = (0..n)
        .filter(|&i| hop_cap.is_none_or(|c| base[i].max_hop_depth <= c))
        .map(|i| Combo {
            members: vec![i],
            edges: base[i].edges.clone(),
            depth: base[i].max_hop_depth,
        })
        .collect();
    let mut out = Vec::new();
    for _round in 1..n {
        let mut next = Vec::new();
        for combo in &frontier {
            let last = *combo.members.last().expect("non-empty combination");
            for j in last + 1..n {
                let mut edges = combo.edges.clone();
                edges.extend(base[j].edges.iter().copied());
                let depth = combo.depth.max(base[j].max_hop_depth);
                let Ok(branch_nodes) = check_filters(net, ingress, &edges, depth, hop_cap) else {
                    continue;
                };
                let mut members = combo.members.clone();
                members.push(j);
                let egresses = members
                    .iter()
                    .flat_map(|&m| base[m].egresses.iter().copied())
                    .collect();
                let paths = members
                    .iter()
                    .flat_map(|&m| base[m].paths.iter().map(|(&e, p)| (e, p.clone())))
                    .collect();
                out.push(AggTree {
                    id: TreeId(0),
                    channel: SsmChannel {
                        source: ingress,
                        group: 0,
                    },
                    ingress,
                    egresses,
                    edges: edges.clone(),
                    paths,
                    max_hop_depth: depth,
                    branch_nodes,
                    kind: TreeKind::Branched,
                });
                next.push(Combo {
                    members,
                    edges,
                    depth,
                });
            }
        }
        if next.is_empty() {
            break;
        }
        frontier = next;
    }
    out.sort_by(|a, b| (a.egresses.len(), &a.egresses).cmp(&(b.egresses.len(), &b.egresses)));
    for t in &mut out {
        t.channel = alloc.allocate();
    }
    out
}

/// The ingress's trees in selection order, un-branched first.
#[derive(Clone, Debug, Default)]
pub struct TreeCatalog {
    trees: Vec<AggTree>,
    valid: Vec<bool>,
}

/// A tree picked for a session.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct TreeChoice {
    pub tree: TreeId,
    /// The tree reaches egresses beyond the requested set.
    pub superset: bool,
}

impl TreeCatalog {
    /// Orders the trees by egress count and then egress ids and assigns
    /// ids in that order.
    pub fn new(mut trees: Vec<AggTree>) -> TreeCatalog {
        trees.sort_by(|a, b| (a.egresses.len(), &a.egresses).cmp(&(b.egresses.len(), &b.egresses)));
        for (i, t) in trees.iter_mut().enumerate() {
            t.id = TreeId(i as u32);
        }
        let valid = vec![true; trees.len()];
        TreeCatalog { trees, valid }
    }

    pub fn len(&self) -> usize {
        self.trees.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trees.is_empty()
    }

    pub fn get(&self, id: TreeId) -> &AggTree {
        &self.trees[id.0 as usize]
    }

    pub fn trees(&self) -> &[AggTree] {
        &self.trees
    }

    pub fn is_valid(&self, id: TreeId) -> bool {
        self.valid[id.0 as usize]
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    /// Marks every tree using `link` invalid and returns the newly
    /// invalidated ids.
    pub fn invalidate_link(&mut self, link: LinkId) -> Vec<TreeId> {
        let mut hit = Vec::new();
        for (t, v) in self.trees.iter().zip(self.valid.iter_mut()) {
            if *v && t.edges.contains(&link) {
                *v = false;
                hit.push(t.id);
            }
        }
        hit
    }

    /// Valid trees eligible for `egress_set`: the exact matches when any
    /// exist, otherwise every superset ordered by size.
    pub fn candidates(&self, egress_set: &BTreeSet<NodeId>) -> Vec<TreeChoice> {
        let live = || self.trees.iter().filter(|t| self.valid[t.id.0 as usize]);
        let exact: Vec<TreeChoice> = live()
            .filter(|t| t.egresses == *egress_set)
            .map(|t| TreeChoice {
                tree: t.id,
                superset: false,
            })
            .collect();
        if !exact.is_empty() {
            return exact;
        }
        live()
            .filter(|t| t.egresses.is_superset(egress_set))
            .map(|t| TreeChoice {
                tree: t.id,
                superset: true,
            })
            .collect()
    }

    /// First candidate the caller's admission test accepts.
    pub fn select_tree(
        &self,
        egress_set: &BTreeSet<NodeId>,
        mut admits: impl FnMut(&AggTree) -> bool,
    ) -> Option<TreeChoice> {
        self.candidates(egress_set)
            .into_iter()
            .find(|c| admits(self.get(c.tree)))
    }

    /// Diagnostic dump of the catalog.
    pub fn dump(&self, net: &Network) -> Vec<TreeDump> {
        self.trees
            .iter()
            .map(|t| TreeDump {
                id: t.id.0,
                kind: t.kind,
                channel: format!(
                    "({}, {})",
                    net.node(t.channel.source).name,
                    t.channel.group_addr()
                ),
                egresses: t
                    .egresses
                    .iter()
                    .map(|&e| net.node(e).name.clone())
                    .collect(),
                depth: t.max_hop_depth,
                branch_nodes: t
                    .branch_nodes
                    .iter()
                    .map(|&e| net.node(e).name.clone())
                    .collect(),
                edges: t
                    .edges
                    .iter()
                    .map(|&l| {
                        let l = net.link(l);
                        format!("{}->{}", net.node(l.from).name, net.node(l.to).name)
                    })
                    .collect(),
                valid: self.valid[t.id.0 as usize],
            })
            .collect()
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct TreeDump {
    pub id: u32,
    pub kind: TreeKind,
    pub channel: String,
    pub egresses: Vec<String>,
    pub depth: usize,
    pub branch_nodes: Vec<String>,
    pub edges: Vec<String>,
    pub valid: bool,
}

/// One session flow carried on a tree channel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Encapsulation {
    pub flow: usize,
    pub rate: Bps,
    pub channel: SsmChannel,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MappedSession {
    pub tree: TreeId,
    pub encapsulation: Vec<Encapsulation>,
    /// Egresses that restore the original headers.
    pub deaggregation: Vec<(NodeId, SsmChannel)>,
    pub receivers: BTreeSet<NodeId>,
}

/// Session to tree assignment kept at the ingress.
#[derive(Clone, Debug, Default)]
pub struct SessionMapping {
    sessions: BTreeMap<SessionId, MappedSession>,
}

impl SessionMapping {
    pub fn new() -> Self {
        Self::default()
    }

    fn record(tree: &AggTree, flows: &[Bps], receivers: BTreeSet<NodeId>) -> MappedSession {
        MappedSession {
            tree: tree.id,
            encapsulation: flows
                .iter()
                .enumerate()
                .map(|(flow, &rate)| Encapsulation {
                    flow,
                    rate,
                    channel: tree.channel,
                })
                .collect(),
            deaggregation: tree.egresses.iter().map(|&e| (e, tree.channel)).collect(),
            receivers,
        }
    }

    pub fn map_session(
        &mut self,
        session: SessionId,
        flows: &[Bps],
        receivers: BTreeSet<NodeId>,
        tree: &AggTree,
    ) -> Result<&MappedSession, AgTreeError> {
        if flows.is_empty() {
            return Err(AgTreeError::NoFlows(session));
        }
        if self.sessions.contains_key(&session) {
            return Err(AgTreeError::AlreadyMapped(session));
        }
        Ok(self
            .sessions
            .entry(session)
            .or_insert_with(|| Self::record(tree, flows, receivers)))
    }

    /// Moves a mapped session onto another tree.
    pub fn remap(
        &mut self,
        session: SessionId,
        receivers: BTreeSet<NodeId>,
        tree: &AggTree,
    ) -> Result<(), AgTreeError> {
        let m = self
            .sessions
            .get_mut(&session)
            .ok_or(AgTreeError::UnknownSession(session))?;
        let flows: Vec<Bps> = m.encapsulation.iter().map(|e| e.rate).collect();
        *m = Self::record(tree, &flows, receivers);
        Ok(())
    }

    pub fn unmap(&mut self, session: SessionId) -> Option<MappedSession> {
        self.sessions.remove(&session)
    }

    pub fn get(&self, session: SessionId) -> Option<&MappedSession> {
        self.sessions.get(&session)
    }

    pub fn len(&self) -> usize {
        self.sessions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sessions.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&SessionId, &MappedSession)> {
        self.sessions.iter()
    }

    pub fn on_tree(&self, tree: TreeId) -> Vec<SessionId> {
        self.sessions
            .iter()
            .filter(|(_, m)| m.tree == tree)
            .map(|(&s, _)| s)
            .collect()
    }
}

/// Result of re-selecting a tree for a running session.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SwitchOutcome {
    /// The new tree admits the session as is.
    Switched(TreeChoice),
    /// The new tree needs its reservation grown (and possibly ceilings
    /// re-sized) before the move.
    Readjusted(TreeChoice, Vec<LinkUpdate>),
    Denied,
}

/// Picks a tree for `session` over `new_egress_set`.
///
/// The session's own usage on its current tree is credited back before the
/// check, so links shared by both trees are not counted twice.
pub fn switch_session(
    mapping: &SessionMapping,
    session: SessionId,
    new_egress_set: &BTreeSet<NodeId>,
    catalog: &TreeCatalog,
    view: &IngressPathView,
    qspec: &Qspec,
    rule: BrvRule,
) -> Result<SwitchOutcome, AgTreeError> {
    let current = mapping
        .get(session)
        .ok_or(AgTreeError::UnknownSession(session))?;
    let mut credited = view.clone();
    for l in catalog.get(current.tree).links() {
        if let Some(t) = credited.table_mut(l) {
            let st = t.get_mut(qspec.class)?;
            st.bu = st.bu.saturating_sub(qspec.brq);
        }
    }
    let mut escalate = None;
    for choice in catalog.candidates(new_egress_set) {
        let tree = catalog.get(choice.tree);
        match credited.admission_check(&tree.links(), qspec, rule)? {
            Admission::AdmitFree => return Ok(SwitchOutcome::Switched(choice)),
            Admission::NeedsAdjust(u) => return Ok(SwitchOutcome::Readjusted(choice, u)),
            Admission::NeedsReadjust(u) => {
                escalate.get_or_insert((choice, u));
            }
            Admission::Reject => {}
        }
    }
    Ok(match escalate {
        Some((c, u)) => SwitchOutcome::Readjusted(c, u),
        None => SwitchOutcome::Denied,
    })
}
