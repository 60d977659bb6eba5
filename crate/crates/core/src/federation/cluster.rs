use std::collections::BTreeMap;
use std::sync::Arc;

use super::node::{serve, Node, NodeHandle};
use super::topology::Topology;
use super::FederationError;
use crate::node::NodeId;

/// Every node of a topology running in this process.
pub struct Cluster {
    handles: BTreeMap<NodeId, NodeHandle>,
}

impl Cluster {
    /// Serves every node, then rewires peers to the addresses actually
    /// bound, so configs may use port 0.
    pub fn launch(topology: &Topology) -> Result<Cluster, FederationError> {
        let mut handles = BTreeMap::new();
        for (id, desc) in &topology.nodes {
            handles.insert(id.clone(), serve(desc.clone())?);
        }
        let addrs: BTreeMap<NodeId, String> = handles.iter().map(|(id, h)| (id.clone(), h.address().to_string())).collect();
        for h in handles.values() {
            let desc = h.descriptor();
            for peer in desc.children.iter().chain(desc.parent.iter()) {
                h.update_peer(&peer.id, &addrs[&peer.id]);
            }
        }
        Ok(Cluster { handles })
    }

    pub fn get(&self, id: &str) -> Option<&NodeHandle> {
        NodeId::new(id).ok().and_then(|id| self.handles.get(&id))
    }

    pub fn node(&self, id: &str) -> &Arc<Node> {
        self.get(id).unwrap_or_else(|| panic!("no node `{id}` in cluster")).node()
    }

    pub fn nodes(&self) -> impl Iterator<Item = &Arc<Node>> {
        self.handles.values().map(NodeHandle::node)
    }

    /// Stops one node; its peers see it as unreachable.
    pub fn kill(&mut self, id: &str) -> bool {
        let Ok(id) = NodeId::new(id) else { return false };
        match self.handles.remove(&id) {
            Some(h) => {
                h.shutdown();
                true
            }
            None => false,
        }
    }

    pub fn reset_traffic(&self) {
        for n in self.nodes() {
            n.reset_traffic();
        }
    }

    pub fn shutdown(self) {
        for (_, h) in self.handles {
            h.shutdown();
        }
    }
}
