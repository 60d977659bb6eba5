//! Static node topology, loaded from a TOML file:
//!
//! ```toml
//! [[node]]
//! id = "root"
//! address = "127.0.0.1:7100"
//! role = "root"                 # leaf | intermediate | root
//! children = ["us", "uk"]
//! tokens = [{ token = "secret", role = "admin" }, { token = "guest", role = "consumer" }]
//!
//! [[node.service]]
//! capability = "waiting-time"
//! replay = "us.csv"             # optional, relative to the config file
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Deserialize;

use crate::auth::{AuthToken, Role};
use crate::node::NodeId;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum NodeRole {
    Leaf,
    Intermediate,
    Root,
}

impl NodeRole {
    pub fn as_str(self) -> &'static str {
        match self {
            NodeRole::Leaf => "leaf",
            NodeRole::Intermediate => "intermediate",
            NodeRole::Root => "root",
        }
    }
}

impl fmt::Display for NodeRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NodeRole {
    type Err = TopologyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "leaf" => Ok(NodeRole::Leaf),
            "intermediate" => Ok(NodeRole::Intermediate),
            "root" => Ok(NodeRole::Root),
            other => Err(TopologyError::Invalid(format!("unknown role `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TopologyError {
    #[error("invalid topology: {0}")]
    Invalid(String),
    #[error("topology contains a cycle through `{0}`")]
    Cycle(String),
    #[error("cannot read topology: {0}")]
    Io(String),
}

/// How to reach another node and which token to present there.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PeerRef {
    pub id: NodeId,
    pub address: String,
    pub token: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HostedService {
    pub capability: String,
    pub replay: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NodeDescriptor {
    pub node_id: NodeId,
    pub address: String,
    pub role: NodeRole,
    pub children: Vec<PeerRef>,
    pub parent: Option<PeerRef>,
    pub capabilities: Vec<String>,
    pub services: Vec<HostedService>,
    pub tokens: Vec<AuthToken>,
}

impl NodeDescriptor {
    /// A standalone descriptor; children and parent are wired separately.
    pub fn new(id: &str, address: &str, role: NodeRole, tokens: Vec<AuthToken>) -> Self {
        NodeDescriptor {
            node_id: NodeId::new(id).expect("valid node id"),
            address: address.to_string(),
            role,
            children: Vec::new(),
            parent: None,
            capabilities: Vec::new(),
            services: Vec::new(),
            tokens,
        }
    }

    pub fn validate(&self) -> Result<(), TopologyError> {
        let invalid = |m: String| Err(TopologyError::Invalid(format!("{}: {m}", self.node_id)));
        if self.children.is_empty() != (self.role == NodeRole::Leaf) {
            return invalid(format!("a {} node {} children", self.role, if self.children.is_empty() { "needs" } else { "cannot have" }));
        }
        if self.role == NodeRole::Root && self.parent.is_some() {
            return invalid("a root node cannot have a parent".into());
        }
        if self.role == NodeRole::Intermediate && self.parent.is_none() {
            return invalid("an intermediate node needs a parent".into());
        }
        if self.children.iter().any(|c| c.id == self.node_id) {
            return Err(TopologyError::Cycle(self.node_id.to_string()));
        }
        let unique: BTreeSet<&NodeId> = self.children.iter().map(|c| &c.id).collect();
        if unique.len() != self.children.len() {
            return invalid("duplicate child".into());
        }
        Ok(())
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TopologyFile {
    node: Vec<NodeEntry>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeEntry {
    id: String,
    address: String,
    role: String,
    #[serde(default)]
    children: Vec<String>,
    #[serde(default)]
    capabilities: Vec<String>,
    #[serde(default)]
    tokens: Vec<TokenEntry>,
    #[serde(default)]
    service: Vec<ServiceEntry>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TokenEntry {
    token: String,
    role: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ServiceEntry {
    capability: String,
    replay: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Topology {
    pub nodes: BTreeMap<NodeId, NodeDescriptor>,
}

impl Topology {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, TopologyError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| TopologyError::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self, TopologyError> {
        let file: TopologyFile = toml::from_str(text).map_err(|e| TopologyError::Invalid(e.to_string()))?;
        let mut entries: BTreeMap<NodeId, NodeEntry> = BTreeMap::new();
        for e in file.node {
            let id = NodeId::new(&e.id).map_err(|err| TopologyError::Invalid(err.to_string()))?;
            if entries.insert(id.clone(), e).is_some() {
                return Err(TopologyError::Invalid(format!("duplicate node `{id}`")));
            }
        }
        let mut tokens: BTreeMap<NodeId, Vec<AuthToken>> = BTreeMap::new();
        for (id, e) in &entries {
            let mut list = Vec::new();
            for t in &e.tokens {
                let role: Role = t.role.parse().map_err(TopologyError::Invalid)?;
                list.push(AuthToken::new(&t.token, role));
            }
            tokens.insert(id.clone(), list);
        }
        let peer = |id: &NodeId| -> Result<PeerRef, TopologyError> {
            let e = entries
                .get(id)
                .ok_or_else(|| TopologyError::Invalid(format!("unknown node `{id}`")))?;
            let token = tokens[id]
                .iter()
                .find(|t| t.role == Role::Admin)
                .ok_or_else(|| TopologyError::Invalid(format!("node `{id}` has no admin token for peers")))?;
            Ok(PeerRef {
                id: id.clone(),
                address: e.address.clone(),
                token: token.token.clone(),
            })
        };
        let mut parents: BTreeMap<NodeId, NodeId> = BTreeMap::new();
        for (id, e) in &entries {
            for c in &e.children {
                let child = NodeId::new(c).map_err(|err| TopologyError::Invalid(err.to_string()))?;
                if let Some(other) = parents.insert(child.clone(), id.clone()) {
                    return Err(TopologyError::Invalid(format!(
                        "`{child}` has two parents, `{other}` and `{id}`"
                    )));
                }
            }
        }
        let mut nodes = BTreeMap::new();
        for (id, e) in &entries {
            let mut children = Vec::new();
            for c in &e.children {
                children.push(peer(&NodeId::new(c).expect("checked above"))?);
            }
            let services: Vec<HostedService> = e
                .service
                .iter()
                .map(|s| HostedService {
                    capability: s.capability.clone(),
                    replay: s.replay.as_ref().map(|p| base_dir.join(p)),
                })
                .collect();
            let mut capabilities = e.capabilities.clone();
            for s in &services {
                if !capabilities.contains(&s.capability) {
                    capabilities.push(s.capability.clone());
                }
            }
            let desc = NodeDescriptor {
                node_id: id.clone(),
                address: e.address.clone(),
                role: e.role.parse()?,
                children,
                parent: parents.get(id).map(&peer).transpose()?,
                capabilities,
                services,
                tokens: tokens[id].clone(),
            };
            nodes.insert(id.clone(), desc);
        }
        let topo = Topology { nodes };
        topo.check_acyclic()?;
        for d in topo.nodes.values() {
            d.validate()?;
        }
        Ok(topo)
    }

    fn check_acyclic(&self) -> Result<(), TopologyError> {
        // Every node has at most one parent, so walking up must end.
        for start in self.nodes.keys() {
            let mut seen = BTreeSet::new();
            let mut cur = start.clone();
            while let Some(p) = self.nodes[&cur].parent.as_ref() {
                if !seen.insert(cur.clone()) {
                    return Err(TopologyError::Cycle(cur.to_string()));
                }
                cur = p.id.clone();
            }
        }
        Ok(())
    }

    /// Builds a loopback topology from `(id, parent)` pairs. Every node
    /// listens on port 0 and accepts the same `tokens`; roles follow from
    /// the shape.
    pub fn from_parents(nodes: &[(&str, Option<&str>)], tokens: &[AuthToken]) -> Result<Self, TopologyError> {
        let admin = tokens
            .iter()
            .find(|t| t.role == Role::Admin)
            .ok_or_else(|| TopologyError::Invalid("no admin token for peers".into()))?;
        let id = |s: &str| NodeId::new(s).map_err(|e| TopologyError::Invalid(e.to_string()));
        let peer = |s: &str| -> Result<PeerRef, TopologyError> {
            Ok(PeerRef {
                id: id(s)?,
                address: "127.0.0.1:0".into(),
                token: admin.token.clone(),
            })
        };
        let mut out: BTreeMap<NodeId, NodeDescriptor> = BTreeMap::new();
        for &(n, parent) in nodes {
            let mut d = NodeDescriptor::new(id(n)?.as_str(), "127.0.0.1:0", NodeRole::Leaf, tokens.to_vec());
            d.parent = parent.map(peer).transpose()?;
            if out.insert(d.node_id.clone(), d).is_some() {
                return Err(TopologyError::Invalid(format!("duplicate node `{n}`")));
            }
        }
        for &(n, parent) in nodes {
            if let Some(p) = parent {
                let child = peer(n)?;
                out.get_mut(&id(p)?)
                    .ok_or_else(|| TopologyError::Invalid(format!("unknown parent `{p}`")))?
                    .children
                    .push(child);
            }
        }
        for d in out.values_mut() {
            d.role = match (d.parent.is_some(), d.children.is_empty()) {
                (_, true) => NodeRole::Leaf,
                (true, false) => NodeRole::Intermediate,
                (false, false) => NodeRole::Root,
            };
        }
        let topo = Topology { nodes: out };
        topo.check_acyclic()?;
        for d in topo.nodes.values() {
            d.validate()?;
        }
        Ok(topo)
    }

    pub fn get(&self, id: &str) -> Option<&NodeDescriptor> {
        NodeId::new(id).ok().and_then(|id| self.nodes.get(&id))
    }

    pub fn roots(&self) -> Vec<&NodeDescriptor> {
        self.nodes.values().filter(|d| d.parent.is_none()).collect()
    }
}
