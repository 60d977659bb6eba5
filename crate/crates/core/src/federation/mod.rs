//! Tree-shaped federation of analytics nodes over a small TCP protocol.
//!
//! A query enters at any node, fans out to that node's children, and comes
//! back as one [`MergeableAggregate`] per child. Only `(sum, count, min,
//! max)` ever crosses an edge, so averages stay exact however the data is
//! spread over the tree.

mod client;
mod cluster;
mod link;
mod node;
pub mod topology;
pub mod wire;

use std::collections::BTreeSet;
use std::fmt;
use std::time::Duration;

pub use client::{Client, Submitted};
pub use cluster::Cluster;
pub use node::{serve, EdgeTraffic, Node, NodeHandle, PushReport, PushResult, ServiceSummary};
pub use topology::{HostedService, NodeDescriptor, NodeRole, PeerRef, Topology, TopologyError};
pub use wire::{Frame, WireError, MAX_FRAME};

use crate::auth::AuthError;
use crate::node::NodeId;
use crate::sdum::{AggKind, MergeableAggregate, SdumError};
use wire::{body_field, body_fields};

/// Every request type a node answers, with the reply it sends.
pub const REQUEST_TYPES: [(&str, &str); 6] = [
    ("QUERY", "RESULT"),
    ("SUBMIT", "SUBMITTED"),
    ("PING", "PONG"),
    ("DISCOVER", "SERVICES"),
    ("PUSH", "ACK"),
    ("METRICS", "METRICS-DATA"),
];

#[derive(Debug, thiserror::Error)]
pub enum FederationError {
    #[error(transparent)]
    Auth(#[from] AuthError),
    #[error("invalid request: {0}")]
    Invalid(String),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error(transparent)]
    Sdum(#[from] SdumError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("remote error ({code}): {message}")]
    Remote { code: String, message: String },
    #[error("no reply before the deadline")]
    Timeout,
}

impl FederationError {
    /// The `code` carried in an ERROR reply.
    pub fn code(&self) -> &str {
        match self {
            FederationError::Auth(_) => "auth",
            FederationError::Invalid(_) | FederationError::Sdum(_) => "invalid",
            FederationError::Wire(_) => "protocol",
            FederationError::Remote { code, .. } => code,
            _ => "failed",
        }
    }
}

/// Which children a query is sent to.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub enum Scope {
    #[default]
    All,
    Nodes(BTreeSet<NodeId>),
}

impl Scope {
    pub fn includes(&self, id: &NodeId) -> bool {
        match self {
            Scope::All => true,
            Scope::Nodes(set) => set.contains(id),
        }
    }
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scope::All => f.write_str("all"),
            Scope::Nodes(set) => {
                let ids: Vec<&str> = set.iter().map(|n| n.as_str()).collect();
                f.write_str(&ids.join(","))
            }
        }
    }
}

impl std::str::FromStr for Scope {
    type Err = FederationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "all" {
            return Ok(Scope::All);
        }
        let ids = s
            .split(',')
            .map(|id| NodeId::new(id.trim()).map_err(|e| FederationError::Invalid(e.to_string())))
            .collect::<Result<BTreeSet<_>, _>>()?;
        Ok(Scope::Nodes(ids))
    }
}

/// An aggregate over one capability's tuples in the subtree below a node.
///
/// `window_ms` selects tuples with `as_of - window_ms <= timestamp <= as_of`.
/// The entry node fixes `as_of` (wall clock if unset) and forwards it, so
/// every node cuts the same window.
#[derive(Clone, Debug, PartialEq)]
pub struct FederatedQuery {
    pub query_id: String,
    pub capability: String,
    pub kind: AggKind,
    pub window_ms: Option<u64>,
    pub as_of: Option<u64>,
    pub scope: Scope,
    pub deadline: Duration,
}

impl FederatedQuery {
    pub fn new(capability: &str, kind: AggKind) -> Self {
        FederatedQuery {
            query_id: String::new(),
            capability: capability.to_string(),
            kind,
            window_ms: None,
            as_of: None,
            scope: Scope::All,
            deadline: Duration::from_secs(2),
        }
    }

    pub fn window(mut self, window_ms: u64, as_of: Option<u64>) -> Self {
        self.window_ms = Some(window_ms);
        self.as_of = as_of;
        self
    }

    pub fn deadline(mut self, deadline: Duration) -> Self {
        self.deadline = deadline;
        self
    }

    pub fn scope(mut self, scope: Scope) -> Self {
        self.scope = scope;
        self
    }

    pub fn validate(&self) -> Result<(), FederationError> {
        let bad = |m: &str| Err(FederationError::Invalid(m.to_string()));
        if self.capability.is_empty() || self.capability.contains([',', '\n', '=']) {
            return bad("bad capability");
        }
        if self.deadline.is_zero() {
            return bad("deadline must be positive");
        }
        if self.window_ms == Some(0) {
            return bad("window must be positive");
        }
        Ok(())
    }

    pub fn to_body(&self) -> String {
        let mut out = format!("capability={}\nkind={}\n", self.capability, self.kind);
        match self.window_ms {
            Some(w) => out.push_str(&format!("window_ms={w}\n")),
            None => out.push_str("window_ms=all\n"),
        }
        if let Some(t) = self.as_of {
            out.push_str(&format!("as_of={t}\n"));
        }
        out.push_str(&format!("scope={}\ndeadline_ms={}\n", self.scope, self.deadline.as_millis()));
        out
    }

    pub fn from_body(query_id: &str, body: &str) -> Result<Self, FederationError> {
        let bad = |m: String| FederationError::Invalid(m);
        let mut q = FederatedQuery::new("", AggKind::Avg);
        q.query_id = query_id.to_string();
        let mut seen_kind = false;
        for (k, v) in body_fields(body) {
            match k {
                "capability" => q.capability = v.to_string(),
                "kind" => {
                    q.kind = v.parse().map_err(|e: SdumError| bad(e.to_string()))?;
                    seen_kind = true;
                }
                "window_ms" if v == "all" => q.window_ms = None,
                "window_ms" => q.window_ms = Some(v.parse().map_err(|_| bad(format!("bad window `{v}`")))?),
                "as_of" => q.as_of = Some(v.parse().map_err(|_| bad(format!("bad as_of `{v}`")))?),
                "scope" => q.scope = v.parse()?,
                "deadline_ms" => {
                    q.deadline = Duration::from_millis(v.parse().map_err(|_| bad(format!("bad deadline `{v}`")))?)
                }
                other => return Err(bad(format!("unknown query field `{other}`"))),
            }
        }
        if !seen_kind {
            return Err(bad("query without kind".into()));
        }
        q.validate()?;
        Ok(q)
    }
}

/// One node's answer for its subtree.
#[derive(Clone, Debug, PartialEq)]
pub struct FederatedAnswer {
    pub query_id: String,
    pub origin: NodeId,
    pub aggregate: MergeableAggregate,
    /// Direct children that replied in time, out of those in scope.
    pub answered: usize,
    pub total: usize,
    /// Forwarding depth below the origin; 0 for a node that asked nobody.
    pub hops: u32,
    /// False if any node anywhere below missed its deadline.
    pub complete: bool,
}

impl FederatedAnswer {
    pub fn value(&self) -> Option<f64> {
        self.aggregate.value()
    }

    pub fn completeness(&self) -> String {
        format!("{}/{}", self.answered, self.total)
    }

    pub fn to_body(&self) -> String {
        format!(
            "{}\norigin={}\ncompleteness={}\nhops={}\ncomplete={}\n",
            self.aggregate.to_record(),
            self.origin,
            self.completeness(),
            self.hops,
            self.complete
        )
    }

    pub fn from_body(query_id: &str, body: &str) -> Result<Self, FederationError> {
        let bad = |m: &str| FederationError::Invalid(format!("bad result: {m}"));
        let record = body.lines().next().ok_or_else(|| bad("empty body"))?;
        let aggregate = MergeableAggregate::from_record(record)?;
        let origin = body_field(body, "origin")
            .and_then(|o| NodeId::new(o).ok())
            .ok_or_else(|| bad("origin"))?;
        let (a, t) = body_field(body, "completeness")
            .and_then(|c| c.split_once('/'))
            .ok_or_else(|| bad("completeness"))?;
        Ok(FederatedAnswer {
            query_id: query_id.to_string(),
            origin,
            aggregate,
            answered: a.parse().map_err(|_| bad("completeness"))?,
            total: t.parse().map_err(|_| bad("completeness"))?,
            hops: body_field(body, "hops").and_then(|h| h.parse().ok()).ok_or_else(|| bad("hops"))?,
            complete: body_field(body, "complete").and_then(|c| c.parse().ok()).ok_or_else(|| bad("complete"))?,
        })
    }
}

/// Builds an ERROR reply.
pub(crate) fn error_frame(query_id: Option<&str>, code: &str, message: &str) -> Frame {
    let mut f = Frame::new("ERROR");
    if let Some(id) = query_id {
        f = f.header("query-id", id);
    }
    let message = message.replace(['\n', '\r'], " ");
    f.with_body(format!("code={code}\nmessage={message}\n"))
}

/// Turns an ERROR reply into a [`FederationError::Remote`].
pub(crate) fn remote_error(frame: &Frame) -> FederationError {
    FederationError::Remote {
        code: body_field(&frame.body, "code").unwrap_or("unknown").to_string(),
        message: body_field(&frame.body, "message").unwrap_or("").to_string(),
    }
}
