//! Network model: routers with edge/core roles, directed links with
//! capacity and propagation delay, and one interface per incident link.
//!
//! Links are declared bidirectionally and expanded into two directed
//! links. Each router owns one interface per declared link; the interface
//! identifier doubles as the router's address on that link and is what the
//! flooding procedure records in a reserved path.

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::units::{Bps, SimTime, MBPS};

#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId(pub u32);

/// A directed link.
#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LinkId(pub u32);

#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct InterfaceId(pub u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl LinkId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl InterfaceId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Ingress,
    Core,
    Egress,
}

impl Role {
    pub fn is_edge(self) -> bool {
        !matches!(self, Role::Core)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Node {
    pub id: NodeId,
    pub name: String,
    pub role: Role,
    pub interfaces: Vec<InterfaceId>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Interface {
    pub id: InterfaceId,
    pub node: NodeId,
    /// 1-based position among the owning node's interfaces.
    pub local_index: u32,
    /// Directed link leaving the node through this interface.
    pub out_link: LinkId,
    /// Directed link entering the node through this interface.
    pub in_link: LinkId,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Link {
    pub id: LinkId,
    pub from: NodeId,
    pub to: NodeId,
    pub capacity: Bps,
    pub delay: SimTime,
    /// Sender-side interface.
    pub out_if: InterfaceId,
    /// Receiver-side interface.
    pub in_if: InterfaceId,
    pub reverse: LinkId,
}

#[derive(Debug, Error)]
pub enum TopologyError {
    #[error("malformed topology document: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid topology: {0}")]
    Invalid(String),
    #[error("invalid generator parameters: {0}")]
    Params(String),
}

fn invalid(msg: impl Into<String>) -> TopologyError {
    TopologyError::Invalid(msg.into())
}

/// On-disk form of a topology.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopologyDoc {
    pub nodes: Vec<NodeDoc>,
    pub links: Vec<LinkDoc>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeDoc {
    pub id: String,
    pub role: Role,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkDoc {
    pub from: String,
    pub to: String,
    pub capacity_bps: Bps,
    pub delay_s: f64,
}

/// An ingress-to-egress path as the ordered list of outgoing interfaces.
pub type EdgePath = Vec<InterfaceId>;

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    nodes: Vec<Node>,
    links: Vec<Link>,
    interfaces: Vec<Interface>,
    out_links: Vec<Vec<LinkId>>,
    by_name: HashMap<String, NodeId>,
}

impl Network {
    pub fn from_json(text: &str) -> Result<Network, TopologyError> {
        let doc: TopologyDoc = serde_json::from_str(text)?;
        Network::from_doc(&doc)
    }

    pub fn from_doc(doc: &TopologyDoc) -> Result<Network, TopologyError> {
        let mut by_name = HashMap::new();
        let mut nodes = Vec::with_capacity(doc.nodes.len());
        for (i, nd) in doc.nodes.iter().enumerate() {
            let id = NodeId(i as u32);
            if by_name.insert(nd.id.clone(), id).is_some() {
                return Err(invalid(format!("duplicate node id {:?}", nd.id)));
            }
            nodes.push(Node {
                id,
                name: nd.id.clone(),
                role: nd.role,
                interfaces: Vec::new(),
            });
        }

        let mut links = Vec::with_capacity(doc.links.len() * 2);
        let mut interfaces = Vec::with_capacity(doc.links.len() * 2);
        let mut pairs = BTreeSet::new();
        for ld in &doc.links {
            let lookup = |name: &str| {
                by_name
                    .get(name)
                    .copied()
                    .ok_or_else(|| invalid(format!("link references unknown node {name:?}")))
            };
            let a = lookup(&ld.from)?;
            let b = lookup(&ld.to)?;
            if a == b {
                return Err(invalid(format!("self-loop on {:?}", ld.from)));
            }
            if !pairs.insert((a.min(b), a.max(b))) {
                return Err(invalid(format!(
                    "more than one link between {:?} and {:?}",
                    ld.from, ld.to
                )));
            }
            if ld.capacity_bps == 0 {
                return Err(invalid(format!(
                    "link {}-{} has zero capacity",
                    ld.from, ld.to
                )));
            }
            if !(ld.delay_s.is_finite() && ld.delay_s >= 0.0) {
                return Err(invalid(format!(
                    "link {}-{} has invalid delay {}",
                    ld.from, ld.to, ld.delay_s
                )));
            }
            let delay = SimTime::from_secs_f64(ld.delay_s);
            let ab = LinkId(links.len() as u32);
            let ba = LinkId(ab.0 + 1);
            let if_a = InterfaceId(interfaces.len() as u32);
            let if_b = InterfaceId(if_a.0 + 1);
            for (ifid, node, out_link, in_link) in [(if_a, a, ab, ba), (if_b, b, ba, ab)] {
                let n = &mut nodes[node.index()];
                n.interfaces.push(ifid);
                interfaces.push(Interface {
                    id: ifid,
                    node,
                    local_index: n.interfaces.len() as u32,
                    out_link,
                    in_link,
                });
            }
            links.push(Link {
                id: ab,
                from: a,
                to: b,
                capacity: ld.capacity_bps,
                delay,
                out_if: if_a,
                in_if: if_b,
                reverse: ba,
            });
            links.push(Link {
                id: ba,
                from: b,
                to: a,
                capacity: ld.capacity_bps,
                delay,
                out_if: if_b,
                in_if: if_a,
                reverse: ab,
            });
        }

        let mut out_links = vec![Vec::new(); nodes.len()];
        for l in &links {
            out_links[l.from.index()].push(l.id);
        }

        let net = Network {
            nodes,
            links,
            interfaces,
            out_links,
            by_name,
        };
        net.validate()?;
        Ok(net)
    }

    fn validate(&self) -> Result<(), TopologyError> {
        let ingresses = self.ingresses();
        let egresses = self.egresses();
        if ingresses.is_empty() {
            return Err(invalid("no ingress node"));
        }
        if egresses.is_empty() {
            return Err(invalid("no egress node"));
        }
        for &i in &ingresses {
            let reach = self.edge_transit_reachable(i);
            for &e in &egresses {
                if !reach[e.index()] {
                    return Err(invalid(format!(
                        "egress {} is not reachable from ingress {} through core routers",
                        self.node(e).name,
                        self.node(i).name
                    )));
                }
            }
        }
        Ok(())
    }

    /// Nodes reachable from `src` when only core routers may relay.
    fn edge_transit_reachable(&self, src: NodeId) -> Vec<bool> {
        let mut seen = vec![false; self.nodes.len()];
        seen[src.index()] = true;
        let mut queue = VecDeque::from([src]);
        while let Some(u) = queue.pop_front() {
            if u != src && self.node(u).role.is_edge() {
                continue;
            }
            for &l in &self.out_links[u.index()] {
                let v = self.links[l.index()].to;
                if !seen[v.index()] {
                    seen[v.index()] = true;
                    queue.push_back(v);
                }
            }
        }
        seen
    }

    pub fn to_doc(&self) -> TopologyDoc {
        TopologyDoc {
            nodes: self
                .nodes
                .iter()
                .map(|n| NodeDoc {
                    id: n.name.clone(),
                    role: n.role,
                })
                .collect(),
            links: self
                .links
                .iter()
                .step_by(2)
                .map(|l| LinkDoc {
                    from: self.node(l.from).name.clone(),
                    to: self.node(l.to).name.clone(),
                    capacity_bps: l.capacity,
                    delay_s: l.delay.as_secs_f64(),
                })
                .collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_doc()).expect("topology serializes")
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn interfaces(&self) -> &[Interface] {
        &self.interfaces
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.index()]
    }

    pub fn link(&self, id: LinkId) -> &Link {
        &self.links[id.index()]
    }

    pub fn interface(&self, id: InterfaceId) -> &Interface {
        &self.interfaces[id.index()]
    }

    pub fn node_by_name(&self, name: &str) -> Option<NodeId> {
        self.by_name.get(name).copied()
    }

    pub fn out_links(&self, node: NodeId) -> &[LinkId] {
        &self.out_links[node.index()]
    }

    pub fn ingresses(&self) -> Vec<NodeId> {
        self.with_role(Role::Ingress)
    }

    pub fn egresses(&self) -> Vec<NodeId> {
        self.with_role(Role::Egress)
    }

    fn with_role(&self, role: Role) -> Vec<NodeId> {
        self.nodes
            .iter()
            .filter(|n| n.role == role)
            .map(|n| n.id)
            .collect()
    }

    pub fn degree(&self, node: NodeId) -> usize {
        self.out_links[node.index()].len()
    }

    /// Human-readable interface name, `<node>.if<k>`.
    pub fn interface_name(&self, id: InterfaceId) -> String {
        let itf = self.interface(id);
        format!("{}.if{}", self.node(itf.node).name, itf.local_index)
    }

    /// Directed links traversed by a path of outgoing interfaces.
    pub fn path_links(&self, path: &[InterfaceId]) -> Vec<LinkId> {
        path.iter().map(|&i| self.interface(i).out_link).collect()
    }

    /// Largest shortest-path propagation delay between any two nodes.
    pub fn delay_diameter(&self) -> SimTime {
        let n = self.nodes.len();
        let mut best = SimTime::ZERO;
        for s in 0..n {
            let mut dist = vec![u64::MAX; n];
            let mut done = vec![false; n];
            dist[s] = 0;
            for _ in 0..n {
                let Some(u) = (0..n)
                    .filter(|&v| !done[v] && dist[v] != u64::MAX)
                    .min_by_key(|&v| dist[v])
                else {
                    break;
                };
                done[u] = true;
                for &l in &self.out_links[u] {
                    let link = &self.links[l.index()];
                    let alt = dist[u] + link.delay.as_nanos();
                    let v = link.to.index();
                    if alt < dist[v] {
                        dist[v] = alt;
                    }
                }
            }
            for d in dist.into_iter().filter(|&d| d != u64::MAX) {
                best = best.max(SimTime(d));
            }
        }
        best
    }
}

/// Minimum-hop path from `ingress` to every egress, relaying only through
/// core routers. Ties go to the lexicographically smallest interface
/// sequence. `excluded` links are treated as absent.
pub fn shortest_paths_with(
    net: &Network,
    ingress: NodeId,
    excluded: &BTreeSet<LinkId>,
) -> Vec<(NodeId, EdgePath)> {
    let n = net.nodes().len();
    let mut best: Vec<Option<EdgePath>> = vec![None; n];
    best[ingress.index()] = Some(Vec::new());
    let mut frontier = vec![ingress];
    while !frontier.is_empty() {
        let mut next: Vec<Option<EdgePath>> = vec![None; n];
        for &u in &frontier {
            if u != ingress && net.node(u).role.is_edge() {
                continue;
            }
            let base = best[u.index()].clone().expect("frontier node has a path");
            for &l in net.out_links(u) {
                if excluded.contains(&l) {
                    continue;
                }
                let link = net.link(l);
                let v = link.to.index();
                if best[v].is_some() {
                    continue;
                }
                let mut cand = base.clone();
                cand.push(link.out_if);
                match &next[v] {
                    Some(cur) if *cur <= cand => {}
                    _ => next[v] = Some(cand),
                }
            }
        }
        frontier.clear();
        for (v, p) in next.into_iter().enumerate() {
            if let Some(p) = p {
                best[v] = Some(p);
                frontier.push(NodeId(v as u32));
            }
        }
    }
    net.egresses()
        .into_iter()
        .filter_map(|e| best[e.index()].clone().map(|p| (e, p)))
        .collect()
}

/// Independent minimum-hop oracle used to check flooding results.
pub fn shortest_paths_oracle(net: &Network, ingress: NodeId) -> Vec<(NodeId, EdgePath)> {
    shortest_paths_with(net, ingress, &BTreeSet::new())
}

/// Knobs for the Waxman-style generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RandomTopologyParams {
    pub alpha: f64,
    pub beta: f64,
    pub capacity_bps: (Bps, Bps),
    pub delay_s: (f64, f64),
    /// Nodes at or below this degree are boundary (edge) candidates.
    pub boundary_degree: usize,
    pub max_egresses: usize,
}

impl Default for RandomTopologyParams {
    fn default() -> Self {
        Self {
            alpha: 0.4,
            beta: 0.4,
            capacity_bps: (10 * MBPS, 100 * MBPS),
            delay_s: (0.001, 0.010),
            boundary_degree: 2,
            max_egresses: 6,
        }
    }
}

/// Generates a connected random network with Waxman edge probabilities
/// `beta * exp(-d / (alpha * L))` over points in the unit square.
pub fn random_topology(
    n: usize,
    seed: u64,
    params: &RandomTopologyParams,
) -> Result<Network, TopologyError> {
    if n < 2 {
        return Err(TopologyError::Params(format!(
            "need at least 2 nodes, got {n}"
        )));
    }
    let (cap_lo, cap_hi) = params.capacity_bps;
    if cap_lo == 0 || cap_lo > cap_hi {
        return Err(TopologyError::Params(format!(
            "empty or non-positive capacity range {cap_lo}..={cap_hi}"
        )));
    }
    let (d_lo, d_hi) = params.delay_s;
    if !(d_lo.is_finite() && d_hi.is_finite() && 0.0 <= d_lo && d_lo <= d_hi) {
        return Err(TopologyError::Params(format!(
            "invalid delay range {d_lo}..={d_hi}"
        )));
    }
    if !(params.alpha > 0.0 && (0.0..=1.0).contains(&params.beta)) {
        return Err(TopologyError::Params(
            "alpha must be > 0, beta in [0, 1]".into(),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pts: Vec<(f64, f64)> = (0..n).map(|_| (rng.gen(), rng.gen())).collect();
    let dist = |a: usize, b: usize| {
        let (dx, dy) = (pts[a].0 - pts[b].0, pts[a].1 - pts[b].1);
        (dx * dx + dy * dy).sqrt()
    };
    let max_d = (0..n)
        .flat_map(|a| (a + 1..n).map(move |b| (a, b)))
        .map(|(a, b)| dist(a, b))
        .fold(f64::MIN_POSITIVE, f64::max);

    let mut edges: Vec<(usize, usize)> = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            let p = params.beta * (-dist(a, b) / (params.alpha * max_d)).exp();
            if rng.gen::<f64>() < p {
                edges.push((a, b));
            }
        }
    }

    // Join components to the one holding node 0 through their closest pair.
    loop {
        let comp = components(n, &edges);
        if comp.iter().all(|&c| c == comp[0]) {
            break;
        }
        let (a, b) = (0..n)
            .filter(|&a| comp[a] == comp[0])
            .flat_map(|a| (0..n).filter(|&b| comp[b] != comp[0]).map(move |b| (a, b)))
            .min_by(|&(a1, b1), &(a2, b2)| dist(a1, b1).total_cmp(&dist(a2, b2)))
            .expect("disconnected graph has a crossing pair");
        edges.push((a.min(b), a.max(b)));
    }

    let mut degree = vec![0usize; n];
    for &(a, b) in &edges {
        degree[a] += 1;
        degree[b] += 1;
    }
    let roles = assign_roles(n, &edges, &degree, params);

    let links = edges
        .iter()
        .map(|&(a, b)| {
            let cap = rng.gen_range(cap_lo..=cap_hi);
            let cap = (cap / 1000).max(1) * 1000;
            let delay = if d_hi > d_lo {
                rng.gen_range(d_lo..=d_hi)
            } else {
                d_lo
            };
            LinkDoc {
                from: format!("n{a}"),
                to: format!("n{b}"),
                capacity_bps: cap,
                delay_s: (delay * 1e6).round() / 1e6,
            }
        })
        .collect();
    let nodes = roles
        .into_iter()
        .enumerate()
        .map(|(i, role)| NodeDoc {
            id: format!("n{i}"),
            role,
        })
        .collect();
    Network::from_doc(&TopologyDoc { nodes, links })
}

fn components(n: usize, edges: &[(usize, usize)]) -> Vec<usize> {
    let mut adj = vec![Vec::new(); n];
    for &(a, b) in edges {
        adj[a].push(b);
        adj[b].push(a);
    }
    let mut comp = vec![usize::MAX; n];
    for s in 0..n {
        if comp[s] != usize::MAX {
            continue;
        }
        comp[s] = s;
        let mut stack = vec![s];
        while let Some(u) = stack.pop() {
            for &v in &adj[u] {
                if comp[v] == usize::MAX {
                    comp[v] = s;
                    stack.push(v);
                }
            }
        }
    }
    comp
}

/// Ingress is the lowest-degree node; further low-degree nodes become
/// egresses as long as every chosen egress stays reachable from the
/// ingress through core routers.
fn assign_roles(
    n: usize,
    edges: &[(usize, usize)],
    degree: &[usize],
    params: &RandomTopologyParams,
) -> Vec<Role> {
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&v| (degree[v], v));
    let mut roles = vec![Role::Core; n];
    roles[order[0]] = Role::Ingress;
    if n == 2 {
        roles[order[1]] = Role::Egress;
        return roles;
    }
    let mut adj = vec![Vec::new(); n];
    for &(a, b) in edges {
        adj[a].push(b);
        adj[b].push(a);
    }
    let reachable = |roles: &[Role]| {
        let src = order[0];
        let mut seen = vec![false; n];
        seen[src] = true;
        let mut stack = vec![src];
        while let Some(u) = stack.pop() {
            if u != src && roles[u].is_edge() {
                continue;
            }
            for &v in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        (0..n).all(|v| roles[v] != Role::Egress || seen[v])
    };
    let want = params.max_egresses.clamp(1, n - 1);
    let min_egress = 2.min(n - 1);
    let mut count = 0;
    for &v in &order[1..] {
        if count >= want {
            break;
        }
        let boundary = degree[v] <= params.boundary_degree;
        if !boundary && count >= min_egress {
            continue;
        }
        roles[v] = Role::Egress;
        if reachable(&roles) {
            count += 1;
        } else {
            roles[v] = Role::Core;
        }
    }
    roles
}

impl fmt::Display for Network {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} nodes, {} links ({} ingress, {} egress)",
            self.nodes.len(),
            self.links.len() / 2,
            self.ingresses().len(),
            self.egresses().len()
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line() -> Network {
        Network::from_json(
            r#"{"nodes":[{"id":"I","role":"ingress"},{"id":"A","role":"core"},{"id":"E","role":"egress"}],
                "links":[{"from":"I","to":"A","capacity_bps":10000000,"delay_s":0.001},
                         {"from":"A","to":"E","capacity_bps":10000000,"delay_s":0.002}]}"#,
        )
        .unwrap()
    }

    #[test]
    fn minimal_network() {
        let net = Network::from_json(
            r#"{"nodes":[{"id":"I","role":"ingress"},{"id":"E","role":"egress"}],
                "links":[{"from":"I","to":"E","capacity_bps":10000000,"delay_s":0.001}]}"#,
        )
        .unwrap();
        assert_eq!(net.nodes().len(), 2);
        assert_eq!(net.links().len() / 2, 1);
        assert_eq!(net.link(LinkId(0)).delay, SimTime(1_000_000));
    }

    #[test]
    fn missing_egress_rejected() {
        let err = Network::from_json(
            r#"{"nodes":[{"id":"I","role":"ingress"},{"id":"A","role":"core"}],
                "links":[{"from":"I","to":"A","capacity_bps":10000000,"delay_s":0.001}]}"#,
        )
        .unwrap_err();
        assert!(
            matches!(err, TopologyError::Invalid(ref m) if m.contains("egress")),
            "{err}"
        );
    }

    #[test]
    fn malformed_document() {
        assert!(matches!(
            Network::from_json("{\"nodes\": 3}"),
            Err(TopologyError::Parse(_))
        ));
    }

    #[test]
    fn validation_errors() {
        let base = |links: &str| {
            format!(
                r#"{{"nodes":[{{"id":"I","role":"ingress"}},{{"id":"E","role":"egress"}},{{"id":"X","role":"core"}}],"links":[{links}]}}"#
            )
        };
        let zero = base(r#"{"from":"I","to":"E","capacity_bps":0,"delay_s":0.001}"#);
        let selfloop = base(
            r#"{"from":"I","to":"E","capacity_bps":1,"delay_s":0.0},{"from":"X","to":"X","capacity_bps":1,"delay_s":0.0}"#,
        );
        let dup = base(
            r#"{"from":"I","to":"E","capacity_bps":1,"delay_s":0.0},{"from":"E","to":"I","capacity_bps":1,"delay_s":0.0}"#,
        );
        let disconnected = base(r#"{"from":"I","to":"X","capacity_bps":1,"delay_s":0.0}"#);
        let negative = base(r#"{"from":"I","to":"E","capacity_bps":1,"delay_s":-1.0}"#);
        for doc in [zero, selfloop, dup, disconnected, negative] {
            assert!(
                matches!(Network::from_json(&doc), Err(TopologyError::Invalid(_))),
                "{doc}"
            );
        }
    }

    #[test]
    fn interfaces_are_unique_and_consistent() {
        let net = random_topology(14, 3, &RandomTopologyParams::default()).unwrap();
        let ids: BTreeSet<_> = net.interfaces().iter().map(|i| i.id).collect();
        assert_eq!(ids.len(), net.interfaces().len());
        for l in net.links() {
            assert_eq!(net.interface(l.out_if).node, l.from);
            assert_eq!(net.interface(l.in_if).node, l.to);
            assert_eq!(net.interface(l.out_if).out_link, l.id);
            assert_eq!(net.link(l.reverse).reverse, l.id);
        }
    }

    #[test]
    fn oracle_line() {
        let net = line();
        let paths = shortest_paths_oracle(&net, NodeId(0));
        assert_eq!(paths.len(), 1);
        let names: Vec<_> = paths[0].1.iter().map(|&i| net.interface_name(i)).collect();
        assert_eq!(names, ["I.if1", "A.if2"]);
    }

    #[test]
    fn oracle_diamond_tie_break() {
        let doc = r#"{"nodes":[{"id":"I","role":"ingress"},{"id":"A","role":"core"},{"id":"B","role":"core"},{"id":"E","role":"egress"}],
            "links":[{"from":"I","to":"B","capacity_bps":1000,"delay_s":0.001},
                     {"from":"I","to":"A","capacity_bps":1000,"delay_s":0.001},
                     {"from":"A","to":"E","capacity_bps":1000,"delay_s":0.001},
                     {"from":"B","to":"E","capacity_bps":1000,"delay_s":0.001}]}"#;
        let net = Network::from_json(doc).unwrap();
        // Exhaustive enumeration: the two 2-hop paths are via B (I.if1, B.if2)
        // and via A (I.if2, A.if2). Interface ids: I.if1=0, B.if1=1, I.if2=2,
        // A.if1=3, A.if2=4, E.if1=5, B.if2=6, E.if2=7.
        let via_b = vec![InterfaceId(0), InterfaceId(6)];
        let via_a = vec![InterfaceId(2), InterfaceId(4)];
        let expected = via_b.clone().min(via_a);
        assert_eq!(expected, via_b);
        for _ in 0..3 {
            let paths = shortest_paths_oracle(&net, NodeId(0));
            assert_eq!(paths, vec![(NodeId(3), expected.clone())]);
        }
    }

    #[test]
    fn oracle_skips_transit_through_edges() {
        // I - E1 - E2 and I - C - D - E2: the 2-hop route relays through an
        // egress, so the 3-hop core route is the answer.
        let doc = r#"{"nodes":[{"id":"I","role":"ingress"},{"id":"E1","role":"egress"},{"id":"E2","role":"egress"},{"id":"C","role":"core"},{"id":"D","role":"core"}],
            "links":[{"from":"I","to":"E1","capacity_bps":1000,"delay_s":0.001},
                     {"from":"E1","to":"E2","capacity_bps":1000,"delay_s":0.001},
                     {"from":"I","to":"C","capacity_bps":1000,"delay_s":0.001},
                     {"from":"C","to":"D","capacity_bps":1000,"delay_s":0.001},
                     {"from":"D","to":"E2","capacity_bps":1000,"delay_s":0.001}]}"#;
        let net = Network::from_json(doc).unwrap();
        let paths = shortest_paths_oracle(&net, NodeId(0));
        assert_eq!(paths[0].1.len(), 1);
        assert_eq!(paths[1].1.len(), 3);
    }

    #[test]
    fn random_is_deterministic() {
        let p = RandomTopologyParams::default();
        assert_eq!(
            random_topology(14, 7, &p).unwrap(),
            random_topology(14, 7, &p).unwrap()
        );
    }

    #[test]
    fn random_smallest() {
        let net = random_topology(2, 1, &RandomTopologyParams::default()).unwrap();
        assert_eq!(net.ingresses().len(), 1);
        assert_eq!(net.egresses().len(), 1);
        assert_eq!(net.links().len(), 2);
    }

    #[test]
    fn random_all_reachable() {
        let net = random_topology(14, 3, &RandomTopologyParams::default()).unwrap();
        // plain BFS over the undirected graph
        let mut seen = [false; 14];
        seen[net.ingresses()[0].index()] = true;
        let mut queue = VecDeque::from([net.ingresses()[0]]);
        while let Some(u) = queue.pop_front() {
            for l in net.links().iter().filter(|l| l.from == u) {
                if !seen[l.to.index()] {
                    seen[l.to.index()] = true;
                    queue.push_back(l.to);
                }
            }
        }
        assert!(seen.iter().all(|&s| s));
        assert!(net.egresses().len() >= 2);
    }

    #[test]
    fn empty_capacity_range_rejected() {
        let p = RandomTopologyParams {
            capacity_bps: (5, 4),
            ..Default::default()
        };
        assert!(matches!(
            random_topology(5, 1, &p),
            Err(TopologyError::Params(_))
        ));
        assert!(matches!(
            random_topology(1, 1, &RandomTopologyParams::default()),
            Err(TopologyError::Params(_))
        ));
    }

    #[test]
    fn json_round_trip() {
        let net = random_topology(14, 11, &RandomTopologyParams::default()).unwrap();
        let again = Network::from_json(&net.to_json()).unwrap();
        assert_eq!(net, again);
    }
}
