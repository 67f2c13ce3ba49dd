//! Discrete-event substrate: clock, event queue, seeded randomness, links and
//! static routing over a small node graph.

mod dist;
mod link;
mod queue;
mod rng;
mod time;
mod trace;

use std::collections::VecDeque;
use std::fmt;

use thiserror::Error;

pub use dist::Dist;
pub use link::{DropCause, Link, LinkOutcome, LinkParams, LinkStats, DEFAULT_MTU, DEFAULT_QUEUE_CAPACITY};
pub use queue::{Event, EventHandle, EventKind, EventQueue};
pub use rng::SimRng;
pub use time::SimTime;
pub use trace::Trace;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LinkId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Address {
    pub node: NodeId,
    pub port: u16,
}

impl Address {
    pub fn new(node: NodeId, port: u16) -> Self {
        Address { node, port }
    }
}

impl fmt::Display for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.node.0, self.port)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Datagram {
    pub src: Address,
    pub dst: Address,
    pub payload: Vec<u8>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SimError {
    #[error("event scheduled at {fire_at} but clock is already {now}")]
    ScheduleInPast { now: SimTime, fire_at: SimTime },
    #[error("no route from node {from} to node {to}")]
    NoRoute { from: usize, to: usize },
    #[error("invariant violated: {0}")]
    Invariant(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NodeKind {
    Host,
    Router,
}

#[derive(Clone, Debug)]
pub struct Node {
    pub name: String,
    pub kind: NodeKind,
}

/// Node graph with directed links and shortest-hop static routes.
#[derive(Clone, Debug, Default)]
pub struct Network {
    nodes: Vec<Node>,
    links: Vec<Link>,
    routes: Vec<Vec<Option<LinkId>>>,
}

impl Network {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_node(&mut self, name: impl Into<String>, kind: NodeKind) -> NodeId {
        self.nodes.push(Node {
            name: name.into(),
            kind,
        });
        self.routes.clear();
        NodeId(self.nodes.len() - 1)
    }

    pub fn add_link(&mut self, from: NodeId, to: NodeId, params: LinkParams, rng: SimRng) -> LinkId {
        self.links.push(Link::new(from, to, params, rng));
        self.routes.clear();
        LinkId(self.links.len() - 1)
    }

    /// Adds a link in each direction; returns (a→b, b→a).
    pub fn add_duplex(&mut self, a: NodeId, b: NodeId, params: LinkParams, root: &SimRng) -> (LinkId, LinkId) {
        let ab = self.add_link(a, b, params, root.stream(&format!("link/{}->{}", a.0, b.0)));
        let ba = self.add_link(b, a, params, root.stream(&format!("link/{}->{}", b.0, a.0)));
        (ab, ba)
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.0]
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn link(&self, id: LinkId) -> &Link {
        &self.links[id.0]
    }

    pub fn link_mut(&mut self, id: LinkId) -> &mut Link {
        &mut self.links[id.0]
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn compute_routes(&mut self) {
        let n = self.nodes.len();
        let mut routes = vec![vec![None; n]; n];
        let mut out: Vec<Vec<LinkId>> = vec![Vec::new(); n];
        for (i, l) in self.links.iter().enumerate() {
            out[l.from.0].push(LinkId(i));
        }
        for (src, row) in routes.iter_mut().enumerate() {
            // BFS from src recording the first hop used to reach each node
            let mut seen = vec![false; n];
            seen[src] = true;
            let mut frontier = VecDeque::new();
            for &lid in &out[src] {
                let to = self.links[lid.0].to.0;
                if !seen[to] {
                    seen[to] = true;
                    row[to] = Some(lid);
                    frontier.push_back(to);
                }
            }
            while let Some(u) = frontier.pop_front() {
                let first = row[u];
                for &lid in &out[u] {
                    let to = self.links[lid.0].to.0;
                    if !seen[to] {
                        seen[to] = true;
                        row[to] = first;
                        frontier.push_back(to);
                    }
                }
            }
        }
        self.routes = routes;
    }

    pub fn next_hop(&mut self, at: NodeId, dst: NodeId) -> Result<LinkId, SimError> {
        if self.routes.len() != self.nodes.len() {
            self.compute_routes();
        }
        self.routes[at.0][dst.0].ok_or(SimError::NoRoute { from: at.0, to: dst.0 })
    }

    /// Every datagram offered to a link is either delivered, dropped, or still in transit.
    pub fn check_conservation(&self) -> Result<(), SimError> {
        for (i, l) in self.links.iter().enumerate() {
            let s = l.stats();
            if s.sent != s.delivered + s.dropped() + l.in_transit() {
                return Err(SimError::Invariant(format!(
                    "link {i}: sent {} != delivered {} + dropped {} + in transit {}",
                    s.sent,
                    s.delivered,
                    s.dropped(),
                    l.in_transit()
                )));
            }
            if s.max_backlog_bytes > l.params().queue_capacity {
                return Err(SimError::Invariant(format!("link {i}: queue bound exceeded")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dumbbell_routes() {
        let mut net = Network::new();
        let rng = SimRng::new(0);
        let h1 = net.add_node("h1", NodeKind::Host);
        let r1 = net.add_node("r1", NodeKind::Router);
        let r2 = net.add_node("r2", NodeKind::Router);
        let h2 = net.add_node("h2", NodeKind::Host);
        let p = LinkParams::new(1_000_000, SimTime::ZERO);
        let (a, _) = net.add_duplex(h1, r1, p, &rng);
        let (b, _) = net.add_duplex(r1, r2, p, &rng);
        let (c, back) = net.add_duplex(r2, h2, p, &rng);
        assert_eq!(net.next_hop(h1, h2).unwrap(), a);
        assert_eq!(net.next_hop(r1, h2).unwrap(), b);
        assert_eq!(net.next_hop(r2, h2).unwrap(), c);
        assert_eq!(net.next_hop(h2, h1).unwrap(), back);
        let lonely = net.add_node("x", NodeKind::Host);
        assert!(net.next_hop(h1, lonely).is_err());
    }
}
